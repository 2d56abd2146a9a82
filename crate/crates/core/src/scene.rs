//! Ground-truth 2.5-D scene: extruded polygon footprints with integer
//! stacking layers inside a walled bin, and its top-down rasterization into
//! per-object modal/amodal masks.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{self, Aabb, Point2};

pub type ObjectId = u32;

/// Snapshot schema version written into every serialized scene.
pub const SCENE_SCHEMA_VERSION: u32 = 1;

/// Two footprints are considered stacked when their overlap exceeds this
/// fraction of the smaller footprint.
pub const STACKING_OVERLAP_THRESHOLD: f64 = 0.25;

/// Default raster resolution in pixels per meter.
pub const DEFAULT_RESOLUTION: f64 = 200.0;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("raster grid smaller than 2x2 pixels")]
    ZeroAreaRaster,
    #[error("unknown object {0}")]
    UnknownObject(ObjectId),
    #[error("point ({x:.4}, {y:.4}) lies outside the raster")]
    OutOfBounds { x: f64, y: f64 },
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("png encoding: {0}")]
    Png(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ShapeClass {
    #[serde(rename = "rectangle")]
    Rectangle,
    #[serde(rename = "ellipse-approx")]
    EllipseApprox,
    #[serde(rename = "L-shape")]
    LShape,
    #[serde(rename = "T-shape")]
    TShape,
}

impl ShapeClass {
    pub const ALL: [ShapeClass; 4] = [ShapeClass::Rectangle, ShapeClass::EllipseApprox, ShapeClass::LShape, ShapeClass::TShape];
}

#[derive(Serialize, Deserialize)]
struct RawShape {
    vertices: Vec<Point2>,
    height: f64,
    shape_class: ShapeClass,
}

/// Extruded simple-polygon footprint. Vertices are in the object frame; the
/// pose places the frame origin in the bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawShape", into = "RawShape")]
pub struct ObjectShape {
    vertices: Vec<Point2>,
    height: f64,
    shape_class: ShapeClass,
    parts: Vec<Vec<Point2>>,
    area: f64,
    local_centroid: Point2,
    radius: f64,
}

impl TryFrom<RawShape> for ObjectShape {
    type Error = SceneError;

    fn try_from(raw: RawShape) -> Result<Self, Self::Error> {
        ObjectShape::new(raw.vertices, raw.height, raw.shape_class)
    }
}

impl From<ObjectShape> for RawShape {
    fn from(s: ObjectShape) -> Self {
        RawShape { vertices: s.vertices, height: s.height, shape_class: s.shape_class }
    }
}

impl ObjectShape {
    pub fn new(vertices: Vec<Point2>, height: f64, shape_class: ShapeClass) -> Result<Self, SceneError> {
        if vertices.len() < 3 {
            return Err(SceneError::InvalidShape(format!("{} vertices", vertices.len())));
        }
        if vertices.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(SceneError::InvalidShape("non-finite vertex".into()));
        }
        if !(height.is_finite() && height > 0.0) {
            return Err(SceneError::InvalidShape(format!("height {height}")));
        }
        if !geometry::is_simple(&vertices) {
            return Err(SceneError::InvalidShape("polygon is not simple".into()));
        }
        let area = geometry::area(&vertices);
        if area <= 0.0 {
            return Err(SceneError::InvalidShape("zero area".into()));
        }
        let parts = geometry::convex_parts(&vertices);
        let local_centroid = geometry::centroid(&vertices);
        let radius = vertices.iter().map(|v| v.dist(local_centroid)).fold(0.0, f64::max);
        Ok(Self { vertices, height, shape_class, parts, area, local_centroid, radius })
    }

    /// Axis-aligned rectangle centred on the origin.
    pub fn rectangle(width: f64, depth: f64, height: f64) -> Result<Self, SceneError> {
        let (hw, hd) = (0.5 * width, 0.5 * depth);
        Self::new(
            vec![Point2::new(-hw, -hd), Point2::new(hw, -hd), Point2::new(hw, hd), Point2::new(-hw, hd)],
            height,
            ShapeClass::Rectangle,
        )
    }

    pub fn vertices(&self) -> &[Point2] {
        &self.vertices
    }

    pub fn height(&self) -> f64 {
        self.height
    }

    pub fn shape_class(&self) -> ShapeClass {
        self.shape_class
    }

    pub fn area(&self) -> f64 {
        self.area
    }

    /// Largest distance from the centroid to a vertex.
    pub fn bounding_radius(&self) -> f64 {
        self.radius
    }

    pub fn local_centroid(&self) -> Point2 {
        self.local_centroid
    }

    pub fn convex_parts(&self) -> &[Vec<Point2>] {
        &self.parts
    }
}

/// Planar pose of an object frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self { x, y, theta }
    }

    pub fn apply(&self, p: Point2) -> Point2 {
        p.rotated(self.theta).add(Point2::new(self.x, self.y))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectState {
    pub id: ObjectId,
    pub shape: ObjectShape,
    pub pose: Pose,
    pub layer: u32,
    #[serde(default)]
    pub ejected: bool,
}

impl ObjectState {
    pub fn new(id: ObjectId, shape: ObjectShape, pose: Pose) -> Self {
        Self { id, shape, pose, layer: 0, ejected: false }
    }

    pub fn footprint(&self) -> Vec<Point2> {
        self.shape.vertices.iter().map(|&v| self.pose.apply(v)).collect()
    }

    /// Convex pieces of the footprint in world coordinates.
    pub fn world_parts(&self) -> Vec<Vec<Point2>> {
        self.shape.parts.iter().map(|part| part.iter().map(|&v| self.pose.apply(v)).collect()).collect()
    }

    /// Footprint centroid, used as the centre of mass.
    pub fn centroid(&self) -> Point2 {
        self.pose.apply(self.shape.local_centroid)
    }

    pub fn aabb(&self) -> Aabb {
        Aabb::of(&self.footprint())
    }

    pub fn translated(&self, d: Point2) -> ObjectState {
        let mut o = self.clone();
        o.pose.x += d.x;
        o.pose.y += d.y;
        o
    }
}

/// Footprint overlap area between two objects.
pub fn overlap_area(a: &ObjectState, b: &ObjectState) -> f64 {
    if !a.aabb().intersects(&b.aabb()) {
        return 0.0;
    }
    geometry::parts_overlap_area(&a.world_parts(), &b.world_parts())
}

/// Overlap area relative to the smaller of the two footprints.
pub fn overlap_fraction(a: &ObjectState, b: &ObjectState) -> f64 {
    overlap_area(a, b) / a.shape.area.min(b.shape.area)
}

/// Bin with outer extents `width` × `depth` (meters) whose walls occupy a
/// `wall_thickness` border inside those extents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub width: f64,
    pub depth: f64,
    pub wall_thickness: f64,
}

impl Default for Bin {
    fn default() -> Self {
        Self { width: 0.4, depth: 0.6, wall_thickness: 0.01 }
    }
}

impl Bin {
    pub fn extents(&self) -> Aabb {
        Aabb { min: Point2::new(0.0, 0.0), max: Point2::new(self.width, self.depth) }
    }

    /// Free floor area between the walls.
    pub fn interior(&self) -> Aabb {
        let t = self.wall_thickness;
        Aabb { min: Point2::new(t, t), max: Point2::new(self.width - t, self.depth - t) }
    }

    pub fn center(&self) -> Point2 {
        Point2::new(0.5 * self.width, 0.5 * self.depth)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneState {
    pub bin: Bin,
    pub objects: Vec<ObjectState>,
    pub target_id: ObjectId,
    pub timestep: u32,
    pub initial_count: u32,
    /// Objects lifted out of the bin by successful grasps.
    #[serde(default)]
    pub extracted: Vec<ObjectId>,
}

impl SceneState {
    pub fn empty(bin: Bin) -> Self {
        Self { bin, objects: Vec::new(), target_id: 0, timestep: 0, initial_count: 0, extracted: Vec::new() }
    }

    pub fn object(&self, id: ObjectId) -> Option<&ObjectState> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn object_mut(&mut self, id: ObjectId) -> Option<&mut ObjectState> {
        self.objects.iter_mut().find(|o| o.id == id)
    }

    /// Objects still resting in the bin.
    pub fn active(&self) -> impl Iterator<Item = &ObjectState> {
        self.objects.iter().filter(|o| !o.ejected)
    }

    pub fn is_active(&self, id: ObjectId) -> bool {
        self.object(id).is_some_and(|o| !o.ejected)
    }

    pub fn ejected_ids(&self) -> Vec<ObjectId> {
        self.objects.iter().filter(|o| o.ejected).map(|o| o.id).collect()
    }

    /// Base and top elevation of every active object, indexed like `objects`.
    /// An object rests on the tallest of its stacking supporters.
    pub fn elevations(&self) -> Vec<(f64, f64)> {
        let mut order: Vec<usize> = (0..self.objects.len()).filter(|&i| !self.objects[i].ejected).collect();
        order.sort_by_key(|&i| (self.objects[i].layer, self.objects[i].id));
        let mut elev = vec![(0.0, 0.0); self.objects.len()];
        for (k, &i) in order.iter().enumerate() {
            let o = &self.objects[i];
            let mut base: f64 = 0.0;
            if o.layer > 0 {
                for &j in &order[..k] {
                    let s = &self.objects[j];
                    if s.layer < o.layer && overlap_fraction(o, s) > STACKING_OVERLAP_THRESHOLD {
                        base = base.max(elev[j].1);
                    }
                }
            }
            elev[i] = (base, base + o.shape.height);
        }
        elev
    }

    /// Checks the structural invariants of a scene.
    pub fn validate(&self) -> Result<(), SceneError> {
        let mut ids: Vec<ObjectId> = self.objects.iter().map(|o| o.id).chain(self.extracted.iter().copied()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(SceneError::InvalidScene("duplicate object id".into()));
        }
        if ids.binary_search(&self.target_id).is_err() {
            return Err(SceneError::InvalidScene(format!("target {} not present", self.target_id)));
        }
        if !(self.bin.width > 0.0 && self.bin.depth > 0.0 && self.bin.wall_thickness >= 0.0) {
            return Err(SceneError::InvalidScene("degenerate bin".into()));
        }
        let ext = self.bin.extents();
        for o in self.active() {
            let c = o.centroid();
            if c.x < ext.min.x || c.x > ext.max.x || c.y < ext.min.y || c.y > ext.max.y {
                return Err(SceneError::InvalidScene(format!("object {} outside bin", o.id)));
            }
            if o.layer > 0 {
                let supported = self
                    .active()
                    .any(|s| s.layer + 1 == o.layer && overlap_fraction(o, s) > STACKING_OVERLAP_THRESHOLD);
                if !supported {
                    return Err(SceneError::InvalidScene(format!("object {} floats at layer {}", o.id, o.layer)));
                }
            }
        }
        Ok(())
    }
}

/// Versioned JSON envelope for persisted scenes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSnapshot {
    pub schema_version: u32,
    #[serde(flatten)]
    pub scene: SceneState,
}

impl SceneSnapshot {
    pub fn new(scene: SceneState) -> Self {
        Self { schema_version: SCENE_SCHEMA_VERSION, scene }
    }

    pub fn to_json(&self) -> Result<String, SceneError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Parses and validates a snapshot.
    pub fn from_json(s: &str) -> Result<Self, SceneError> {
        let snap: SceneSnapshot = serde_json::from_str(s)?;
        if snap.schema_version != SCENE_SCHEMA_VERSION {
            return Err(SceneError::InvalidScene(format!("schema version {}", snap.schema_version)));
        }
        snap.scene.validate()?;
        Ok(snap)
    }
}

/// Pixel index as (column, row); column grows with x, row with y.
pub type Pixel = (usize, usize);

#[derive(Debug, Clone, PartialEq)]
pub struct MaskImage {
    width: usize,
    height: usize,
    resolution: f64,
    origin: Point2,
    bits: Vec<bool>,
}

impl MaskImage {
    pub fn new(width: usize, height: usize, resolution: f64, origin: Point2) -> Self {
        Self { width, height, resolution, origin, bits: vec![false; width * height] }
    }

    /// Empty mask covering the bin extents.
    pub fn for_bin(bin: &Bin, resolution: f64) -> Result<Self, SceneError> {
        if !(resolution.is_finite() && resolution > 0.0) {
            return Err(SceneError::ZeroAreaRaster);
        }
        let w = (bin.width * resolution - 1e-9).ceil().max(0.0) as usize;
        let h = (bin.depth * resolution - 1e-9).ceil().max(0.0) as usize;
        if w < 2 || h < 2 {
            return Err(SceneError::ZeroAreaRaster);
        }
        Ok(Self::new(w, h, resolution, Point2::new(0.0, 0.0)))
    }

    pub fn from_bits(width: usize, height: usize, resolution: f64, bits: Vec<bool>) -> Self {
        assert_eq!(bits.len(), width * height);
        Self { width, height, resolution, origin: Point2::default(), bits }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn origin(&self) -> Point2 {
        self.origin
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> bool {
        self.bits[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, col: usize, row: usize, v: bool) {
        self.bits[row * self.width + col] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn world_to_pixel(&self, p: Point2) -> Result<Pixel, SceneError> {
        let fx = (p.x - self.origin.x) * self.resolution;
        let fy = (p.y - self.origin.y) * self.resolution;
        if !(fx >= 0.0 && fy >= 0.0 && fx <= self.width as f64 && fy <= self.height as f64) {
            return Err(SceneError::OutOfBounds { x: p.x, y: p.y });
        }
        let col = (fx.floor() as usize).min(self.width - 1);
        let row = (fy.floor() as usize).min(self.height - 1);
        Ok((col, row))
    }

    /// World coordinate of the pixel centre.
    pub fn pixel_to_world(&self, (col, row): Pixel) -> Point2 {
        Point2::new(
            self.origin.x + (col as f64 + 0.5) / self.resolution,
            self.origin.y + (row as f64 + 0.5) / self.resolution,
        )
    }

    /// Inclusive pixel range covered by a world-space box, clipped to the grid.
    fn pixel_span(&self, b: &Aabb) -> Option<(usize, usize, usize, usize)> {
        let c0 = ((b.min.x - self.origin.x) * self.resolution - 0.5).ceil().max(0.0);
        let r0 = ((b.min.y - self.origin.y) * self.resolution - 0.5).ceil().max(0.0);
        let c1 = ((b.max.x - self.origin.x) * self.resolution - 0.5).floor();
        let r1 = ((b.max.y - self.origin.y) * self.resolution - 0.5).floor();
        if c1 < 0.0 || r1 < 0.0 || c0 > c1 || r0 > r1 {
            return None;
        }
        let c1 = (c1 as usize).min(self.width - 1);
        let r1 = (r1 as usize).min(self.height - 1);
        let (c0, r0) = (c0 as usize, r0 as usize);
        if c0 > c1 || r0 > r1 {
            return None;
        }
        Some((c0, r0, c1, r1))
    }

    /// Sets every pixel whose centre lies inside one of the convex pieces.
    pub fn fill_convex_parts(&mut self, parts: &[Vec<Point2>]) {
        for part in parts {
            self.for_each_pixel_in_convex(part, |m, c, r| m.set(c, r, true));
        }
    }

    fn for_each_pixel_in_convex(&mut self, part: &[Point2], mut f: impl FnMut(&mut Self, usize, usize)) {
        let Some((c0, r0, c1, r1)) = self.pixel_span(&Aabb::of(part)) else {
            return;
        };
        for r in r0..=r1 {
            for c in c0..=c1 {
                if convex_contains(part, self.pixel_to_world((c, r))) {
                    f(self, c, r);
                }
            }
        }
    }

    /// Pixels whose centres fall inside the convex polygon.
    pub fn pixels_in_convex(&self, part: &[Point2]) -> Vec<Pixel> {
        let mut out = Vec::new();
        let Some((c0, r0, c1, r1)) = self.pixel_span(&Aabb::of(part)) else {
            return out;
        };
        for r in r0..=r1 {
            for c in c0..=c1 {
                if convex_contains(part, self.pixel_to_world((c, r))) {
                    out.push((c, r));
                }
            }
        }
        out
    }

    /// Writes the mask as a 1-bit grayscale PNG, row 0 at the top.
    pub fn write_png(&self, path: &Path) -> Result<(), SceneError> {
        let file = File::create(path)?;
        let mut enc = png::Encoder::new(BufWriter::new(file), self.width as u32, self.height as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::One);
        let mut writer = enc.write_header().map_err(|e| SceneError::Png(e.to_string()))?;
        let stride = self.width.div_ceil(8);
        let mut data = vec![0u8; stride * self.height];
        for r in 0..self.height {
            for c in 0..self.width {
                if self.get(c, r) {
                    data[r * stride + c / 8] |= 0x80 >> (c % 8);
                }
            }
        }
        writer.write_image_data(&data).map_err(|e| SceneError::Png(e.to_string()))?;
        Ok(())
    }
}

#[inline]
fn convex_contains(part: &[Point2], p: Point2) -> bool {
    let n = part.len();
    (0..n).all(|i| {
        let a = part[i];
        let b = part[(i + 1) % n];
        b.sub(a).cross(p.sub(a)) >= 0.0
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectMasks {
    pub object_id: ObjectId,
    pub modal: MaskImage,
    pub amodal: MaskImage,
    modal_count: usize,
    amodal_count: usize,
}

impl ObjectMasks {
    pub fn modal_area_px(&self) -> usize {
        self.modal_count
    }

    pub fn amodal_area_px(&self) -> usize {
        self.amodal_count
    }

    pub fn visibility(&self) -> f64 {
        if self.amodal_count == 0 {
            0.0
        } else {
            self.modal_count as f64 / self.amodal_count as f64
        }
    }
}

/// Per-object modal/amodal masks plus the combined occupancy grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SegMasks {
    pub entries: Vec<ObjectMasks>,
    pub occupancy: MaskImage,
    /// Pixels covered by the bin walls.
    pub walls: MaskImage,
}

impl SegMasks {
    pub fn get(&self, id: ObjectId) -> Option<&ObjectMasks> {
        self.entries.iter().find(|e| e.object_id == id)
    }

    /// Ids with a non-empty modal mask, in id order.
    pub fn visible_ids(&self) -> Vec<ObjectId> {
        self.entries.iter().filter(|e| e.modal_count > 0).map(|e| e.object_id).collect()
    }

    pub fn resolution(&self) -> f64 {
        self.occupancy.resolution()
    }
}

/// Renders the orthographic top-down view of the scene: amodal masks are the
/// object footprints clipped to the bin interior; each interior pixel is
/// modal for the highest-layer object covering it (ties go to the higher id).
pub fn rasterize_scene(scene: &SceneState, resolution: f64) -> Result<SegMasks, SceneError> {
    let blank = MaskImage::for_bin(&scene.bin, resolution)?;
    let (w, h) = (blank.width, blank.height);
    let interior = scene.bin.interior();
    let mut walls = blank.clone();
    for r in 0..h {
        for c in 0..w {
            let p = blank.pixel_to_world((c, r));
            if p.x < interior.min.x || p.x > interior.max.x || p.y < interior.min.y || p.y > interior.max.y {
                walls.set(c, r, true);
            }
        }
    }

    let mut order: Vec<usize> = (0..scene.objects.len()).collect();
    order.sort_by_key(|&i| (scene.objects[i].layer, scene.objects[i].id));

    let mut owner: Vec<u32> = vec![u32::MAX; w * h];
    let mut amodals: Vec<MaskImage> = vec![MaskImage::new(0, 0, resolution, blank.origin); scene.objects.len()];
    let mut occupancy = walls.clone();
    for &i in &order {
        let o = &scene.objects[i];
        let mut amodal = blank.clone();
        if !o.ejected {
            amodal.fill_convex_parts(&o.world_parts());
            for (k, bit) in amodal.bits.iter_mut().enumerate() {
                if *bit {
                    if walls.bits[k] {
                        *bit = false;
                    } else {
                        owner[k] = i as u32;
                        occupancy.bits[k] = true;
                    }
                }
            }
        }
        amodals[i] = amodal;
    }

    let mut entries = Vec::with_capacity(scene.objects.len());
    for (i, amodal) in amodals.into_iter().enumerate() {
        let mut modal = blank.clone();
        let mut modal_count = 0;
        for (k, &ow) in owner.iter().enumerate() {
            if ow == i as u32 {
                modal.bits[k] = true;
                modal_count += 1;
            }
        }
        let amodal_count = amodal.count();
        entries.push(ObjectMasks { object_id: scene.objects[i].id, modal, amodal, modal_count, amodal_count });
    }
    entries.sort_by_key(|e| e.object_id);
    Ok(SegMasks { entries, occupancy, walls })
}

/// Visible fraction of an object's footprint.
pub fn visibility_ratio(masks: &SegMasks, id: ObjectId) -> Result<f64, SceneError> {
    masks.get(id).map(ObjectMasks::visibility).ok_or(SceneError::UnknownObject(id))
}
