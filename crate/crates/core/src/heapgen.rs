//! Procedural heap generation: objects are sampled, dropped one at a time
//! around a random heap centre, and settle quasi-statically onto whatever
//! they overlap. The least visible object becomes the target.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Point2;
use crate::scene::{
    self, overlap_area, overlap_fraction, rasterize_scene, Bin, ObjectId, ObjectShape, ObjectState, Pose, SceneError,
    SceneState, SegMasks, ShapeClass, DEFAULT_RESOLUTION, STACKING_OVERLAP_THRESHOLD,
};

const PLACEMENT_RETRIES: usize = 25;
const SLIDE_STEP: f64 = 0.002;
const SLIDE_MAX: f64 = 0.30;
const SLIDE_DIRECTIONS: usize = 32;
/// Overlap below this area (m²) counts as touching.
pub(crate) const CONTACT_AREA_EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum HeapError {
    #[error("could not place object {index} inside the bin")]
    BinOverflow { index: usize },
    #[error("invalid heap spec: {0}")]
    InvalidSpec(String),
    #[error("scene has no objects left")]
    EmptyScene,
    #[error(transparent)]
    Scene(#[from] SceneError),
}

/// Sampling weights over the four footprint classes, in the order
/// rectangle, ellipse, L, T.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeMix(pub [f64; 4]);

impl Default for ShapeMix {
    fn default() -> Self {
        ShapeMix([0.4, 0.3, 0.15, 0.15])
    }
}

impl ShapeMix {
    pub fn validate(&self) -> Result<(), HeapError> {
        let sum: f64 = self.0.iter().sum();
        if self.0.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(HeapError::InvalidSpec(format!("shape weights {:?} must be non-negative and sum to 1", self.0)));
        }
        Ok(())
    }

    fn pick(&self, rng: &mut impl Rng) -> ShapeClass {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (w, class) in self.0.iter().zip(ShapeClass::ALL) {
            acc += w;
            if u < acc && *w > 0.0 {
                return class;
            }
        }
        // Rounding slack: last class with positive weight.
        ShapeClass::ALL.into_iter().zip(self.0).rev().find(|(_, w)| *w > 0.0).map_or(ShapeClass::Rectangle, |(c, _)| c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeapSpec {
    pub n_objects: usize,
    /// Std-dev (m) of the heap centre around the bin centre.
    pub heap_center_sigma: f64,
    /// Std-dev (m) of each object's planar offset from the heap centre.
    pub offset_sigma: f64,
    pub seed: u64,
    #[serde(default)]
    pub shape_mix: ShapeMix,
    #[serde(default)]
    pub bin: Bin,
}

impl HeapSpec {
    pub fn new(n_objects: usize, seed: u64) -> Self {
        Self { n_objects, heap_center_sigma: 0.05, offset_sigma: 0.06, seed, shape_mix: ShapeMix::default(), bin: Bin::default() }
    }

    pub fn validate(&self) -> Result<(), HeapError> {
        if self.n_objects == 0 {
            return Err(HeapError::InvalidSpec("n_objects must be at least 1".into()));
        }
        if !(self.heap_center_sigma >= 0.0 && self.offset_sigma >= 0.0) {
            return Err(HeapError::InvalidSpec("sigmas must be non-negative".into()));
        }
        self.shape_mix.validate()
    }
}

/// Footprint area bounds (m²) and height bounds (m) for sampled shapes.
pub const MIN_AREA: f64 = 4e-4;
pub const MAX_AREA: f64 = 1e-2;
pub const MIN_HEIGHT: f64 = 0.01;
pub const MAX_HEIGHT: f64 = 0.08;

/// Samples a footprint of the given class, centred on its centroid.
pub fn sample_shape(rng: &mut impl Rng, mix: &ShapeMix) -> ObjectShape {
    let class = mix.pick(rng);
    loop {
        let height = rng.random_range(MIN_HEIGHT..=MAX_HEIGHT);
        let verts = match class {
            ShapeClass::Rectangle => {
                let w = rng.random_range(0.02..=0.10);
                let d = rng.random_range(0.02..=0.10);
                rect_vertices(w, d)
            }
            ShapeClass::EllipseApprox => {
                let a = rng.random_range(0.012..=0.055);
                let b = rng.random_range(0.012..=0.055);
                (0..16).map(|k| Point2::from_angle(k as f64 * TAU / 16.0)).map(|u| Point2::new(a * u.x, b * u.y)).collect()
            }
            ShapeClass::LShape => {
                let w: f64 = rng.random_range(0.03..=0.10);
                let l = rng.random_range(0.03..=0.10);
                let t = rng.random_range(0.015..=0.5 * w.min(l));
                vec![
                    Point2::new(0.0, 0.0),
                    Point2::new(w, 0.0),
                    Point2::new(w, t),
                    Point2::new(t, t),
                    Point2::new(t, l),
                    Point2::new(0.0, l),
                ]
            }
            ShapeClass::TShape => {
                let w: f64 = rng.random_range(0.03..=0.10);
                let l = rng.random_range(0.03..=0.10);
                let t = rng.random_range(0.015..=0.5 * w.min(l));
                let (x0, x1) = (0.5 * (w - t), 0.5 * (w + t));
                vec![
                    Point2::new(x0, 0.0),
                    Point2::new(x1, 0.0),
                    Point2::new(x1, l - t),
                    Point2::new(w, l - t),
                    Point2::new(w, l),
                    Point2::new(0.0, l),
                    Point2::new(0.0, l - t),
                    Point2::new(x0, l - t),
                ]
            }
        };
        let c = crate::geometry::centroid(&verts);
        let verts: Vec<Point2> = verts.into_iter().map(|v| v.sub(c)).collect();
        let area = crate::geometry::area(&verts);
        if !(MIN_AREA..=MAX_AREA).contains(&area) {
            continue;
        }
        if let Ok(shape) = ObjectShape::new(verts, height, class) {
            return shape;
        }
    }
}

fn rect_vertices(w: f64, d: f64) -> Vec<Point2> {
    let (hw, hd) = (0.5 * w, 0.5 * d);
    vec![Point2::new(-hw, -hd), Point2::new(hw, -hd), Point2::new(hw, hd), Point2::new(-hw, hd)]
}

/// Translation that brings the footprint inside the bin interior (zero when
/// it already fits).
pub(crate) fn clamp_into_interior(obj: &ObjectState, bin: &Bin) -> Point2 {
    let inner = bin.interior();
    let bb = obj.aabb();
    let shift = |lo: f64, hi: f64, min: f64, max: f64| {
        if hi - lo > max - min {
            0.5 * (min + max) - 0.5 * (lo + hi)
        } else if lo < min {
            min - lo
        } else if hi > max {
            max - hi
        } else {
            0.0
        }
    };
    Point2::new(shift(bb.min.x, bb.max.x, inner.min.x, inner.max.x), shift(bb.min.y, bb.max.y, inner.min.y, inner.max.y))
}

pub(crate) fn fits_interior(obj: &ObjectState, bin: &Bin) -> bool {
    let inner = bin.interior();
    let bb = obj.aabb();
    bb.min.x >= inner.min.x - 1e-12 && bb.max.x <= inner.max.x + 1e-12 && bb.min.y >= inner.min.y - 1e-12 && bb.max.y <= inner.max.y + 1e-12
}

/// Layer an object would settle at on top of `below`: one above its highest
/// stacking supporter, or `None` when nothing supports it.
pub(crate) fn support_layer<'a>(obj: &ObjectState, below: impl IntoIterator<Item = &'a ObjectState>) -> Option<u32> {
    below
        .into_iter()
        .filter(|s| !s.ejected && overlap_fraction(obj, s) > STACKING_OVERLAP_THRESHOLD)
        .map(|s| s.layer + 1)
        .max()
}

/// Smallest slide (searched outward over a ring of directions) that leaves
/// `obj` overlapping nothing in `placed` while staying inside the bin.
fn slide_clear(obj: &ObjectState, placed: &[ObjectState], bin: &Bin) -> Option<ObjectState> {
    let mut dist = SLIDE_STEP;
    while dist <= SLIDE_MAX {
        for k in 0..SLIDE_DIRECTIONS {
            let dir = Point2::from_angle(k as f64 * TAU / SLIDE_DIRECTIONS as f64);
            let cand = obj.translated(dir.scale(dist));
            if !fits_interior(&cand, bin) {
                continue;
            }
            if placed.iter().all(|p| overlap_area(&cand, p) <= CONTACT_AREA_EPS) {
                return Some(cand);
            }
        }
        dist += SLIDE_STEP;
    }
    None
}

/// Drops `spec.n_objects` objects one by one and selects the least visible
/// one as the target.
pub fn generate_heap(spec: &HeapSpec) -> Result<SceneState, HeapError> {
    generate_heap_at(spec, DEFAULT_RESOLUTION)
}

/// [`generate_heap`] with an explicit raster resolution for target selection.
pub fn generate_heap_at(spec: &HeapSpec, resolution: f64) -> Result<SceneState, HeapError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let bin = spec.bin;
    let center_dist = Normal::new(0.0, spec.heap_center_sigma.max(1e-12)).expect("finite sigma");
    let offset_dist = Normal::new(0.0, spec.offset_sigma.max(1e-12)).expect("finite sigma");
    let inner = bin.interior();
    let mut center = bin.center().add(Point2::new(center_dist.sample(&mut rng), center_dist.sample(&mut rng)));
    center.x = center.x.clamp(inner.min.x, inner.max.x);
    center.y = center.y.clamp(inner.min.y, inner.max.y);

    let mut placed: Vec<ObjectState> = Vec::with_capacity(spec.n_objects);
    for index in 0..spec.n_objects {
        let shape = sample_shape(&mut rng, &spec.shape_mix);
        let mut settled = None;
        for _ in 0..PLACEMENT_RETRIES {
            let theta = rng.random_range(0.0..TAU);
            let offset = Point2::new(offset_dist.sample(&mut rng), offset_dist.sample(&mut rng));
            let pos = center.add(offset);
            let mut obj = ObjectState::new(index as ObjectId, shape.clone(), Pose::new(pos.x, pos.y, theta));
            obj = obj.translated(clamp_into_interior(&obj, &bin));
            if !fits_interior(&obj, &bin) {
                continue;
            }
            if let Some(layer) = support_layer(&obj, &placed) {
                obj.layer = layer;
                settled = Some(obj);
                break;
            }
            if placed.iter().all(|p| overlap_area(&obj, p) <= CONTACT_AREA_EPS) {
                settled = Some(obj);
                break;
            }
            if let Some(slid) = slide_clear(&obj, &placed, &bin) {
                settled = Some(slid);
                break;
            }
        }
        placed.push(settled.ok_or(HeapError::BinOverflow { index })?);
    }

    let mut scene = SceneState {
        bin,
        objects: placed,
        target_id: 0,
        timestep: 0,
        initial_count: spec.n_objects as u32,
        extracted: Vec::new(),
    };
    let masks = rasterize_scene(&scene, resolution)?;
    scene.target_id = select_target(&scene, &masks)?;
    Ok(scene)
}

/// Least visible active object; ties go to the lowest id.
pub fn select_target(scene: &SceneState, masks: &SegMasks) -> Result<ObjectId, HeapError> {
    let mut best: Option<(f64, ObjectId)> = None;
    let mut ids: Vec<ObjectId> = scene.active().map(|o| o.id).collect();
    ids.sort_unstable();
    for id in ids {
        let v = scene::visibility_ratio(masks, id)?;
        if best.is_none_or(|(bv, _)| v < bv) {
            best = Some((v, id));
        }
    }
    best.map(|(_, id)| id).ok_or(HeapError::EmptyScene)
}
