//! Linear push planning toward the most free point of the bin.

use std::f64::consts::TAU;

use crate::geometry::{point_segment_distance, Point2};
use crate::scene::{overlap_area, ObjectId, ObjectState, ObjectShape, Pose, SceneState};

use super::{most_free_point, Action, ActionPlan, GripperGeometry, PlanError, PlanningContext, Point3};

const CONTACT_AREA_EPS: f64 = 1e-9;

/// One sampled push start and its evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PushCandidate {
    pub start: Point2,
    /// Endpoint after truncation to keep the gripper inside the bin.
    pub end: Point2,
    /// Unit push direction (start toward the goal centroid).
    pub dir: Point2,
    /// Angle (rad) between `dir` and the centroid→most-free-point direction.
    pub deviation: f64,
    pub collision_free: bool,
    /// Distance from the goal centroid to the push segment.
    pub com_distance: f64,
    pub feasible: bool,
}

/// Pusher footprint as a scene object, so the shared overlap routine applies.
fn pusher_object(gripper: &GripperGeometry, center: Point2, dir: Point2) -> ObjectState {
    let local = crate::geometry::oriented_rect(Point2::default(), dir, gripper.pusher_depth, gripper.pusher_width);
    let shape = ObjectShape::new(local, 1.0, crate::scene::ShapeClass::Rectangle).expect("valid rectangle");
    ObjectState::new(u32::MAX, shape, Pose::new(center.x, center.y, 0.0))
}

/// True when the pusher footprint at `center` is inside the bin interior
/// and touches no object.
pub(crate) fn pusher_start_is_free(scene: &SceneState, gripper: &GripperGeometry, center: Point2, dir: Point2) -> bool {
    let inner = scene.bin.interior();
    let fp = gripper.pusher_footprint(center, dir);
    if fp.iter().any(|p| p.x < inner.min.x || p.x > inner.max.x || p.y < inner.min.y || p.y > inner.max.y) {
        return false;
    }
    let pusher = pusher_object(gripper, center, dir);
    scene.active().all(|o| overlap_area(&pusher, o) <= CONTACT_AREA_EPS)
}

/// Longest travel `t ≥ 0` along `dir` keeping the pusher footprint inside
/// the bin interior.
fn max_travel(scene: &SceneState, gripper: &GripperGeometry, start: Point2, dir: Point2) -> f64 {
    let inner = scene.bin.interior();
    let mut t_max = f64::INFINITY;
    for p in gripper.pusher_footprint(start, dir) {
        for (pos, d, lo, hi) in [(p.x, dir.x, inner.min.x, inner.max.x), (p.y, dir.y, inner.min.y, inner.max.y)] {
            if d > 1e-12 {
                t_max = t_max.min((hi - pos) / d);
            } else if d < -1e-12 {
                t_max = t_max.min((lo - pos) / d);
            }
        }
    }
    t_max.max(0.0)
}

/// Evaluates every sampled push start around `goal` against the free point
/// `free`. Exposed so callers can re-score plans independently.
pub fn push_start_candidates(
    scene: &SceneState,
    goal: &ObjectState,
    free: Point2,
    params: &super::PlannerParams,
) -> Vec<PushCandidate> {
    let gripper = &params.gripper;
    let c = goal.centroid();
    let standoff = goal.shape.bounding_radius() + gripper.pusher_half_depth() + params.standoff_margin;
    let toward_free = free.sub(c).normalized();
    (0..params.push_angles)
        .map(|j| {
            let alpha = j as f64 * TAU / params.push_angles as f64;
            let out = Point2::from_angle(alpha);
            let start = c.add(out.scale(standoff));
            let dir = out.scale(-1.0);
            let reach = free.sub(start).dot(dir);
            let travel = reach.min(max_travel(scene, gripper, start, dir)).max(0.0);
            let end = start.add(dir.scale(travel));
            let collision_free = pusher_start_is_free(scene, gripper, start, dir);
            let com_distance = point_segment_distance(c, start, end);
            let deviation = dir.dot(toward_free).clamp(-1.0, 1.0).acos();
            let feasible = collision_free && com_distance <= params.com_tolerance && toward_free.norm() > 0.0;
            PushCandidate { start, end, dir, deviation, collision_free, com_distance, feasible }
        })
        .collect()
}

/// Push whose line passes through the goal's centre of mass, starting from a
/// collision-free pose and heading as directly as possible toward the most
/// free point. Quality is 1 when such a push exists, otherwise 0.
pub fn plan_push(ctx: &PlanningContext<'_>, goal: ObjectId) -> Result<ActionPlan, PlanError> {
    let obj = ctx.scene.object(goal).filter(|o| !o.ejected).ok_or(PlanError::UnknownObject(goal))?;
    let c = obj.centroid();
    let degenerate = ActionPlan {
        action: Action::Push { p: Point3::new(c.x, c.y, 0.0), p_prime: Point3::new(c.x, c.y, 0.0) },
        quality: 0.0,
        goal_id: goal,
    };
    let free = match most_free_point(ctx.field(), &ctx.params.gripper) {
        Ok(p) => p,
        Err(PlanError::NoFreeSpace(_)) => return Ok(degenerate),
        Err(e) => return Err(e),
    };
    let best = push_start_candidates(ctx.scene, obj, free, ctx.params)
        .into_iter()
        .filter(|cand| cand.feasible)
        .reduce(|best, cand| if cand.deviation < best.deviation { cand } else { best });
    Ok(match best {
        Some(cand) => ActionPlan {
            action: Action::Push {
                p: Point3::new(cand.start.x, cand.start.y, 0.0),
                p_prime: Point3::new(cand.end.x, cand.end.y, 0.0),
            },
            quality: 1.0,
            goal_id: goal,
        },
        None => degenerate,
    })
}
