//! Quasi-static transition model: applies grasps and pushes to a scene and
//! returns the successor state with an outcome record.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{convex_hull, parts_overlap_area, point_in_polygon, project, Aabb, Point2};
use crate::heapgen::clamp_into_interior;
use crate::planners::{pusher_start_is_free, Action, ActionPlan, GripperGeometry};
use crate::scene::{overlap_fraction, ObjectId, ObjectState, SceneState, STACKING_OVERLAP_THRESHOLD};

const CONTACT_AREA_EPS: f64 = 1e-9;
const SWEEP_SCAN_STEP: f64 = 0.002;
const SWEEP_BISECTIONS: usize = 30;
/// Sample spacing (m) for lift-coverage estimates.
const COVERAGE_STEP: f64 = 0.001;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicsParams {
    /// Largest fraction of an object's footprint that higher-layer objects
    /// may cover while it can still be lifted.
    pub liftability_bound: f64,
    /// How far (m) a pushed footprint may be driven past a wall before it
    /// leaves the bin instead of being stopped by it.
    pub ejection_margin: f64,
    /// Grasp success probability is `floor + (ceiling - floor) * quality`.
    pub success_floor: f64,
    pub success_ceiling: f64,
    pub gripper: GripperGeometry,
}

impl Default for PhysicsParams {
    fn default() -> Self {
        Self {
            liftability_bound: 0.85,
            ejection_margin: 0.02,
            success_floor: 0.2,
            success_ceiling: 1.0,
            gripper: GripperGeometry::default(),
        }
    }
}

impl PhysicsParams {
    pub fn success_probability(&self, quality: f64) -> f64 {
        (self.success_floor + (self.success_ceiling - self.success_floor) * quality).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "ids")]
pub enum Outcome {
    GraspSucceeded,
    GraspFailed,
    LiftBlocked,
    PushExecuted,
    PushRejected,
    ObjectEjected(Vec<ObjectId>),
}

impl Outcome {
    pub fn is_push(&self) -> bool {
        matches!(self, Outcome::PushExecuted | Outcome::PushRejected | Outcome::ObjectEjected(_))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionResult {
    pub next_scene: SceneState,
    pub outcome: Outcome,
    /// Objects whose pose, layer, or ejection flag changed.
    pub moved_ids: Vec<ObjectId>,
}

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("pusher start pose collides with the scene")]
    StartCollision,
}

fn check_goal(scene: &SceneState, plan: &ActionPlan) -> Result<(), SimError> {
    if !(0.0..=1.0).contains(&plan.quality) {
        return Err(SimError::InvalidPlan(format!("quality {} outside [0, 1]", plan.quality)));
    }
    if !scene.is_active(plan.goal_id) {
        return Err(SimError::InvalidPlan(format!("object {} is not in the bin", plan.goal_id)));
    }
    Ok(())
}

fn unchanged(scene: &SceneState, outcome: Outcome) -> TransitionResult {
    let mut next = scene.clone();
    next.timestep += 1;
    TransitionResult { next_scene: next, outcome, moved_ids: Vec::new() }
}

/// Fraction of `goal`'s footprint lying under the union of active objects
/// on higher layers, measured on a regular sample grid.
pub fn covered_fraction(scene: &SceneState, goal: &ObjectState) -> f64 {
    let bb = goal.aabb();
    let above: Vec<Vec<Vec<Point2>>> = scene
        .active()
        .filter(|o| o.id != goal.id && o.layer > goal.layer && o.aabb().intersects(&bb))
        .map(|o| o.world_parts())
        .collect();
    if above.is_empty() {
        return 0.0;
    }
    let goal_parts = goal.world_parts();
    let inside = |parts: &[Vec<Point2>], p: Point2| parts.iter().any(|part| point_in_polygon(p, part));
    let (nx, ny) = (((bb.max.x - bb.min.x) / COVERAGE_STEP).ceil() as usize, ((bb.max.y - bb.min.y) / COVERAGE_STEP).ceil() as usize);
    let (mut total, mut covered) = (0usize, 0usize);
    for i in 0..nx.max(1) {
        for j in 0..ny.max(1) {
            let p = Point2::new(bb.min.x + (i as f64 + 0.5) * COVERAGE_STEP, bb.min.y + (j as f64 + 0.5) * COVERAGE_STEP);
            if !inside(&goal_parts, p) {
                continue;
            }
            total += 1;
            if above.iter().any(|parts| inside(parts, p)) {
                covered += 1;
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        covered as f64 / total as f64
    }
}

pub fn is_liftable(scene: &SceneState, goal: &ObjectState, params: &PhysicsParams) -> bool {
    covered_fraction(scene, goal) <= params.liftability_bound + 1e-12
}

/// Lifts the goal object if nothing heavy rests on it, succeeding with a
/// probability given by the plan quality.
pub fn simulate_grasp(
    scene: &SceneState,
    plan: &ActionPlan,
    params: &PhysicsParams,
    rng: &mut impl Rng,
) -> Result<TransitionResult, SimError> {
    if !plan.primitive().is_grasp() {
        return Err(SimError::InvalidPlan("push plan passed to simulate_grasp".into()));
    }
    check_goal(scene, plan)?;
    let goal = scene.object(plan.goal_id).expect("checked above");
    if !is_liftable(scene, goal, params) {
        return Ok(unchanged(scene, Outcome::LiftBlocked));
    }
    if rng.random::<f64>() >= params.success_probability(plan.quality) {
        return Ok(unchanged(scene, Outcome::GraspFailed));
    }
    let mut next = scene.clone();
    next.objects.retain(|o| o.id != plan.goal_id);
    next.extracted.push(plan.goal_id);
    next.timestep += 1;
    let settled = resettle(&next);
    let mut moved_ids = changed_ids(&next, &settled);
    moved_ids.insert(0, plan.goal_id);
    Ok(TransitionResult { next_scene: settled, outcome: Outcome::GraspSucceeded, moved_ids })
}

fn changed_ids(before: &SceneState, after: &SceneState) -> Vec<ObjectId> {
    after
        .objects
        .iter()
        .filter(|o| before.object(o.id).is_none_or(|b| b.pose != o.pose || b.layer != o.layer || b.ejected != o.ejected))
        .map(|o| o.id)
        .collect()
}

fn translate_parts(parts: &[Vec<Point2>], d: Point2) -> Vec<Vec<Point2>> {
    parts.iter().map(|p| p.iter().map(|v| v.add(d)).collect()).collect()
}

/// Smallest forward travel `t ≥ 0` along `dir` after which `parts` stays
/// clear of the convex region `hull`.
fn exit_distance(parts: &[Vec<Point2>], hull: &[Point2], dir: Point2) -> f64 {
    let hull_parts = [hull.to_vec()];
    let overlaps = |t: f64| parts_overlap_area(&translate_parts(parts, dir.scale(t)), &hull_parts) > CONTACT_AREA_EPS;
    let pts: Vec<Point2> = parts.iter().flatten().copied().collect();
    let (lo, _) = project(&pts, dir);
    let (_, hull_hi) = project(hull, dir);
    let far = hull_hi - lo;
    if far <= 0.0 {
        return 0.0;
    }
    let mut t = far;
    while t > 0.0 {
        let prev = (t - SWEEP_SCAN_STEP).max(0.0);
        if overlaps(prev) {
            let (mut a, mut b) = (prev, t);
            for _ in 0..SWEEP_BISECTIONS {
                let m = 0.5 * (a + b);
                if overlaps(m) {
                    a = m;
                } else {
                    b = m;
                }
            }
            return b;
        }
        t = prev;
    }
    0.0
}

/// Swept region of a footprint moved by `d`.
fn sweep_hull(parts: &[Vec<Point2>], d: Point2) -> Vec<Point2> {
    let pts: Vec<Point2> = parts.iter().flatten().flat_map(|&p| [p, p.add(d)]).collect();
    convex_hull(&pts)
}

/// How far the footprint sticks out of the interior, in meters.
fn wall_penetration(bb: &Aabb, interior: &Aabb) -> f64 {
    [interior.min.x - bb.min.x, bb.max.x - interior.max.x, interior.min.y - bb.min.y, bb.max.y - interior.max.y]
        .into_iter()
        .fold(0.0, f64::max)
}

/// Sweeps the closed gripper along the push segment, shoving layer-0 objects
/// ahead of it and of each other. Higher layers follow through resettling.
pub fn simulate_push(scene: &SceneState, plan: &ActionPlan, params: &PhysicsParams) -> Result<TransitionResult, SimError> {
    let Action::Push { p, p_prime } = plan.action else {
        return Err(SimError::InvalidPlan("grasp plan passed to simulate_push".into()));
    };
    check_goal(scene, plan)?;
    if plan.quality == 0.0 {
        return Ok(unchanged(scene, Outcome::PushRejected));
    }
    let (start, end) = (p.xy(), p_prime.xy());
    let ext = scene.bin.extents();
    if [start, end].iter().any(|q| q.x < ext.min.x || q.x > ext.max.x || q.y < ext.min.y || q.y > ext.max.y) {
        return Err(SimError::InvalidPlan("push endpoints outside the bin".into()));
    }
    let travel = end.sub(start);
    if travel.norm() < 1e-12 {
        return Err(SimError::InvalidPlan("zero-length push".into()));
    }
    let dir = travel.normalized();
    if !pusher_start_is_free(scene, &params.gripper, start, dir) {
        return Err(SimError::StartCollision);
    }

    let gripper_parts = [params.gripper.pusher_footprint(start, dir)];
    let mut hulls: Vec<Vec<Point2>> = vec![sweep_hull(&gripper_parts, travel)];

    let mut order: Vec<usize> = (0..scene.objects.len())
        .filter(|&i| !scene.objects[i].ejected && scene.objects[i].layer == 0)
        .collect();
    let min_proj = |i: usize| project(&scene.objects[i].footprint(), dir).0;
    order.sort_by(|&a, &b| min_proj(a).total_cmp(&min_proj(b)).then(scene.objects[a].id.cmp(&scene.objects[b].id)));

    let mut displacement = vec![0.0; scene.objects.len()];
    for &i in &order {
        let parts = scene.objects[i].world_parts();
        let mut t = 0.0;
        // Re-check after each shove: moving forward can run into a hull further ahead.
        for _ in 0..hulls.len() + 1 {
            let moved = translate_parts(&parts, dir.scale(t));
            let next_t = hulls
                .iter()
                .filter(|h| parts_overlap_area(&moved, std::slice::from_ref(*h)) > CONTACT_AREA_EPS)
                .map(|h| t + exit_distance(&moved, h, dir))
                .fold(t, f64::max);
            if next_t <= t {
                break;
            }
            t = next_t;
        }
        if t > 0.0 {
            displacement[i] = t;
            hulls.push(sweep_hull(&parts, dir.scale(t)));
        }
    }

    let mut next = scene.clone();
    let interior = scene.bin.interior();
    let mut ejected = Vec::new();
    let mut late = BTreeSet::new();
    for (i, &t) in displacement.iter().enumerate() {
        if t <= 0.0 {
            continue;
        }
        let mut obj = next.objects[i].translated(dir.scale(t));
        if wall_penetration(&obj.aabb(), &interior) > params.ejection_margin {
            obj = next.objects[i].clone();
            obj.ejected = true;
            ejected.push(obj.id);
        } else {
            obj = obj.translated(clamp_into_interior(&obj, &scene.bin));
            late.insert(obj.id);
        }
        next.objects[i] = obj;
    }
    next.timestep += 1;
    let settled = settle_with_order(&next, &late);
    let moved_ids = changed_ids(scene, &settled);
    let outcome = if ejected.is_empty() { Outcome::PushExecuted } else { Outcome::ObjectEjected(ejected) };
    Ok(TransitionResult { next_scene: settled, outcome, moved_ids })
}

/// Recomputes every layer bottom-up: each object rests one layer above the
/// highest already-settled object it heavily overlaps, or on the floor.
pub fn resettle(scene: &SceneState) -> SceneState {
    settle_with_order(scene, &BTreeSet::new())
}

/// [`resettle`] where objects in `late` settle after unmoved objects of the
/// same layer, so freshly pushed objects land on top of what they hit.
pub fn settle_with_order(scene: &SceneState, late: &BTreeSet<ObjectId>) -> SceneState {
    let objs = &scene.objects;
    let mut order: Vec<usize> = (0..objs.len()).filter(|&i| !objs[i].ejected).collect();
    order.sort_by_key(|&i| (objs[i].layer, late.contains(&objs[i].id), objs[i].id));
    let mut next = scene.clone();
    for (k, &i) in order.iter().enumerate() {
        let layer = order[..k]
            .iter()
            .filter(|&&j| overlap_fraction(&objs[i], &objs[j]) > STACKING_OVERLAP_THRESHOLD)
            .map(|&j| next.objects[j].layer + 1)
            .max()
            .unwrap_or(0);
        next.objects[i].layer = layer;
    }
    next
}
