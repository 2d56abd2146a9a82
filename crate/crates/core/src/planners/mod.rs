//! Low-level action planners: parallel-jaw and suction grasps restricted to a
//! goal object's visible mask, and linear pushes toward the most free point
//! of the bin. Each returns an [`ActionPlan`] carrying a quality in [0, 1].

mod edt;
mod grasp;
mod push;

use std::cell::OnceCell;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Point2;
use crate::scene::{MaskImage, ObjectId, Pixel, SceneState, SegMasks};

pub use edt::squared_edt;
pub use grasp::{plan_parallel_jaw, plan_suction, ParallelJawCandidate};
pub use push::{plan_push, push_start_candidates, PushCandidate};
pub(crate) use push::pusher_start_is_free;

#[derive(Debug, Error, PartialEq)]
pub enum PlanError {
    #[error("object {0} has an empty visible mask")]
    EmptyMask(ObjectId),
    #[error("object {0} is not in the scene")]
    UnknownObject(ObjectId),
    #[error("no free space: largest clearance {0:.4} m is below the gripper half-width")]
    NoFreeSpace(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn xy(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Primitive {
    ParallelJaw,
    Suction,
    Push,
}

impl Primitive {
    pub fn as_str(&self) -> &'static str {
        match self {
            Primitive::ParallelJaw => "parallel_jaw",
            Primitive::Suction => "suction",
            Primitive::Push => "push",
        }
    }

    pub fn is_grasp(&self) -> bool {
        !matches!(self, Primitive::Push)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "primitive", rename_all = "snake_case")]
pub enum Action {
    /// Jaw centre and grasp-axis angle in the table plane.
    ParallelJaw { p: Point3, phi: f64 },
    /// Contact point and approach axis in spherical coordinates.
    Suction { p: Point3, phi: f64, theta: f64 },
    /// Straight end-effector motion from `p` to `p_prime`.
    Push { p: Point3, p_prime: Point3 },
}

impl Action {
    pub fn primitive(&self) -> Primitive {
        match self {
            Action::ParallelJaw { .. } => Primitive::ParallelJaw,
            Action::Suction { .. } => Primitive::Suction,
            Action::Push { .. } => Primitive::Push,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionPlan {
    pub action: Action,
    pub quality: f64,
    pub goal_id: ObjectId,
}

impl ActionPlan {
    pub fn primitive(&self) -> Primitive {
        self.action.primitive()
    }
}

/// Gripper hardware dimensions in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GripperGeometry {
    pub jaw_max_opening: f64,
    /// Finger pad extent across the grasp axis.
    pub jaw_pad_width: f64,
    /// Finger pad extent along the grasp axis.
    pub jaw_pad_depth: f64,
    /// Closed-gripper footprint extent across the push direction.
    pub pusher_width: f64,
    /// Closed-gripper footprint extent along the push direction.
    pub pusher_depth: f64,
    pub suction_cup_radius: f64,
}

impl Default for GripperGeometry {
    fn default() -> Self {
        Self {
            jaw_max_opening: 0.085,
            jaw_pad_width: 0.02,
            jaw_pad_depth: 0.01,
            pusher_width: 0.09,
            pusher_depth: 0.02,
            suction_cup_radius: 0.01,
        }
    }
}

impl GripperGeometry {
    pub fn pusher_half_depth(&self) -> f64 {
        0.5 * self.pusher_depth
    }

    /// Closed-gripper footprint centred at `center`, facing `dir`.
    pub fn pusher_footprint(&self, center: Point2, dir: Point2) -> Vec<Point2> {
        crate::geometry::oriented_rect(center, dir, self.pusher_depth, self.pusher_width)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlannerParams {
    pub gripper: GripperGeometry,
    /// Maximum number of antipodal candidates scored per parallel-jaw query.
    pub grasp_candidates: usize,
    /// Number of push start angles sampled around the goal.
    pub push_angles: usize,
    /// Extra standoff (m) between the goal's bounding circle and the pusher.
    pub standoff_margin: f64,
    /// Allowed distance (m) between the push line and the goal centroid.
    pub com_tolerance: f64,
}

impl Default for PlannerParams {
    fn default() -> Self {
        Self {
            gripper: GripperGeometry::default(),
            grasp_candidates: 64,
            push_angles: 36,
            standoff_margin: 0.005,
            com_tolerance: 0.005,
        }
    }
}

/// Per-pixel Euclidean distance (m) to the nearest occupied pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceField {
    width: usize,
    height: usize,
    resolution: f64,
    origin: Point2,
    values: Vec<f64>,
}

impl DistanceField {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, col: usize, row: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn pixel_to_world(&self, (col, row): Pixel) -> Point2 {
        Point2::new(
            self.origin.x + (col as f64 + 0.5) / self.resolution,
            self.origin.y + (row as f64 + 0.5) / self.resolution,
        )
    }
}

/// Exact Euclidean distance transform of an occupancy mask, in meters.
pub fn distance_transform(occupancy: &MaskImage) -> DistanceField {
    let d2 = squared_edt(occupancy.bits(), occupancy.width(), occupancy.height());
    let res = occupancy.resolution();
    DistanceField {
        width: occupancy.width(),
        height: occupancy.height(),
        resolution: res,
        origin: occupancy.origin(),
        values: d2.into_iter().map(|v| v.sqrt() / res).collect(),
    }
}

/// Pixel with the largest clearance (first in row-major order among ties).
pub fn most_free_pixel(field: &DistanceField) -> (Pixel, f64) {
    let mut best = (0usize, f64::NEG_INFINITY);
    for (k, &v) in field.values.iter().enumerate() {
        if v > best.1 {
            best = (k, v);
        }
    }
    ((best.0 % field.width, best.0 / field.width), best.1)
}

/// World position of the most free pixel. Fails when even that pixel is
/// closer to an obstacle than the pusher half-depth.
pub fn most_free_point(field: &DistanceField, gripper: &GripperGeometry) -> Result<Point2, PlanError> {
    let (px, v) = most_free_pixel(field);
    if v < gripper.pusher_half_depth() {
        return Err(PlanError::NoFreeSpace(v.max(0.0)));
    }
    Ok(field.pixel_to_world(px))
}

/// Everything the planners read for one timestep. The distance field and
/// object elevations are computed lazily and shared by all queries.
pub struct PlanningContext<'a> {
    pub scene: &'a SceneState,
    pub masks: &'a SegMasks,
    pub params: &'a PlannerParams,
    field: OnceCell<DistanceField>,
    elevations: OnceCell<Vec<(f64, f64)>>,
}

impl<'a> PlanningContext<'a> {
    pub fn new(scene: &'a SceneState, masks: &'a SegMasks, params: &'a PlannerParams) -> Self {
        Self { scene, masks, params, field: OnceCell::new(), elevations: OnceCell::new() }
    }

    pub fn field(&self) -> &DistanceField {
        self.field.get_or_init(|| distance_transform(&self.masks.occupancy))
    }

    /// (base, top) elevation of object `id`.
    pub fn elevation(&self, id: ObjectId) -> Option<(f64, f64)> {
        let elev = self.elevations.get_or_init(|| self.scene.elevations());
        self.scene.objects.iter().position(|o| o.id == id).map(|i| elev[i])
    }

    pub fn elevations(&self) -> &[(f64, f64)] {
        self.elevations.get_or_init(|| self.scene.elevations())
    }

    /// Quality of the best grasp of either kind on `id`, 0 when not visible.
    pub fn best_grasp_quality(&self, id: ObjectId) -> f64 {
        let pj = plan_parallel_jaw(self, id).map_or(0.0, |p| p.quality);
        let sc = plan_suction(self, id).map_or(0.0, |p| p.quality);
        pj.max(sc)
    }

    pub fn plan(&self, primitive: Primitive, id: ObjectId) -> Result<ActionPlan, PlanError> {
        match primitive {
            Primitive::ParallelJaw => plan_parallel_jaw(self, id),
            Primitive::Suction => plan_suction(self, id),
            Primitive::Push => plan_push(self, id),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{rasterize_scene, Bin, ObjectShape, ObjectState, Pose};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// O(n²m²) nearest-occupied-pixel scan.
    fn brute_force_d2(bits: &[bool], w: usize, h: usize) -> Vec<f64> {
        let occ: Vec<(i64, i64)> =
            (0..w * h).filter(|&k| bits[k]).map(|k| ((k % w) as i64, (k / w) as i64)).collect();
        (0..w * h)
            .map(|k| {
                let (c, r) = ((k % w) as i64, (k / w) as i64);
                occ.iter().map(|&(oc, or)| ((oc - c).pow(2) + (or - r).pow(2)) as f64).fold(f64::INFINITY, f64::min)
            })
            .collect()
    }

    #[test]
    fn fully_occupied_grid_is_zero() {
        let m = MaskImage::from_bits(6, 5, 100.0, vec![true; 30]);
        assert!(distance_transform(&m).values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn border_only_grid_peaks_at_centre() {
        let n = 8;
        let bits: Vec<bool> = (0..n * n).map(|k| {
            let (c, r) = (k % n, k / n);
            c == 0 || r == 0 || c == n - 1 || r == n - 1
        }).collect();
        let res = 50.0;
        let f = distance_transform(&MaskImage::from_bits(n, n, res, bits));
        let max = f.values().iter().cloned().fold(0.0, f64::max);
        assert_eq!(max, 3.0 / res);
        let peaks: Vec<usize> = (0..n * n).filter(|&k| f.values()[k] == max).collect();
        assert_eq!(peaks, vec![3 * n + 3, 3 * n + 4, 4 * n + 3, 4 * n + 4]);
    }

    #[test]
    fn random_grids_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for trial in 0..30 {
            let (w, h) = (rng.random_range(1..40), rng.random_range(1..40));
            let density = [0.01, 0.1, 0.5][trial % 3];
            let mut bits: Vec<bool> = (0..w * h).map(|_| rng.random_bool(density)).collect();
            bits[rng.random_range(0..w * h)] = true;
            assert_eq!(squared_edt(&bits, w, h), brute_force_d2(&bits, w, h), "trial {trial}");
        }
    }

    #[test]
    fn most_free_point_in_empty_square_bin_is_centre() {
        let bin = Bin { width: 0.4, depth: 0.4, wall_thickness: 0.01 };
        let masks = rasterize_scene(&crate::scene::SceneState::empty(bin), 200.0).unwrap();
        let p = most_free_point(&distance_transform(&masks.occupancy), &GripperGeometry::default()).unwrap();
        assert!(p.dist(bin.center()) <= 1.5 / 200.0 * std::f64::consts::SQRT_2);
    }

    #[test]
    fn most_free_point_avoids_packed_half() {
        let bin = Bin::default();
        let mut scene = crate::scene::SceneState::empty(bin);
        let mut id = 0;
        for ix in 0..4 {
            for iy in 0..12 {
                let shape = ObjectShape::rectangle(0.045, 0.045, 0.02).unwrap();
                scene.objects.push(ObjectState::new(id, shape, Pose::new(0.035 + 0.045 * ix as f64, 0.035 + 0.045 * iy as f64, 0.0)));
                id += 1;
            }
        }
        let masks = rasterize_scene(&scene, 200.0).unwrap();
        let field = distance_transform(&masks.occupancy);
        let p = most_free_point(&field, &GripperGeometry::default()).unwrap();
        assert!(p.x > 0.2);
        // Oracle argmax over the brute-force field.
        let occ = &masks.occupancy;
        let d2 = brute_force_d2(occ.bits(), occ.width(), occ.height());
        let best = d2.iter().enumerate().fold((0, -1.0), |b, (k, &v)| if v > b.1 { (k, v) } else { b }).0;
        assert_eq!(field.pixel_to_world((best % occ.width(), best / occ.width())), p);
    }

    #[test]
    fn packed_bin_has_no_free_space() {
        let bin = Bin { width: 0.2, depth: 0.2, wall_thickness: 0.01 };
        let mut scene = crate::scene::SceneState::empty(bin);
        scene.objects.push(ObjectState::new(0, ObjectShape::rectangle(0.18, 0.18, 0.02).unwrap(), Pose::new(0.1, 0.1, 0.0)));
        let masks = rasterize_scene(&scene, 200.0).unwrap();
        let field = distance_transform(&masks.occupancy);
        assert!(matches!(most_free_point(&field, &GripperGeometry::default()), Err(PlanError::NoFreeSpace(_))));
    }
}
