//! Geometric grasp-quality proxies on a goal object's visible (modal) mask.

use std::f64::consts::PI;

use crate::geometry::{oriented_rect, Point2};
use crate::scene::{MaskImage, ObjectId, Pixel};

use super::{squared_edt, Action, ActionPlan, PlanError, PlanningContext, Point3};

/// One scored antipodal pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParallelJawCandidate {
    pub center: Point2,
    /// Grasp axis angle in [0, π).
    pub phi: f64,
    /// Distance between the two contacts (m).
    pub width: f64,
    pub clearance: f64,
    pub quality: f64,
}

const LINE_OFFSETS: usize = 4;
const PAD_SAMPLES_ACROSS: usize = 9;
const PAD_SAMPLES_ALONG: usize = 5;
/// Half-angle of the friction cone (μ = 0.5).
const FRICTION_CONE: f64 = 0.4636;
const NORMAL_WINDOW_PX: i64 = 3;

fn goal_masks<'a>(ctx: &'a PlanningContext<'_>, goal: ObjectId) -> Result<(&'a MaskImage, f64), PlanError> {
    let entry = ctx.masks.get(goal).ok_or(PlanError::UnknownObject(goal))?;
    if entry.modal_area_px() == 0 {
        return Err(PlanError::EmptyMask(goal));
    }
    Ok((&entry.modal, entry.visibility()))
}

/// Pixels that obstruct finger pads around `goal`: walls plus every other
/// object standing higher than the goal's base.
fn obstruction_grid(ctx: &PlanningContext<'_>, goal: ObjectId) -> Vec<bool> {
    let mut blocked = ctx.masks.walls.bits().to_vec();
    let (goal_base, _) = ctx.elevation(goal).unwrap_or((0.0, 0.0));
    let elev = ctx.elevations();
    for (i, o) in ctx.scene.objects.iter().enumerate() {
        if o.id == goal || o.ejected || elev[i].1 <= goal_base + 1e-9 {
            continue;
        }
        if let Some(e) = ctx.masks.get(o.id) {
            for (b, &a) in blocked.iter_mut().zip(e.amodal.bits()) {
                *b |= a;
            }
        }
    }
    blocked
}

/// Fraction of a finger pad's sample points that fall on free pixels.
fn pad_free_samples(mask: &MaskImage, blocked: &[bool], pad: &[Point2]) -> (usize, usize) {
    let (a, b, d) = (pad[0], pad[1], pad[3]);
    let (u, v) = (b.sub(a), d.sub(a));
    let mut free = 0;
    let mut total = 0;
    for i in 0..PAD_SAMPLES_ALONG {
        for j in 0..PAD_SAMPLES_ACROSS {
            let s = (i as f64 + 0.5) / PAD_SAMPLES_ALONG as f64;
            let t = (j as f64 + 0.5) / PAD_SAMPLES_ACROSS as f64;
            let p = a.add(u.scale(s)).add(v.scale(t));
            total += 1;
            if let Ok((c, r)) = mask.world_to_pixel(p) {
                if !blocked[r * mask.width() + c] {
                    free += 1;
                }
            }
        }
    }
    (free, total)
}

/// Longest run of mask pixels along the line `origin + s·u`, sampled every
/// half pixel over `[s0, s1]`. Returns (start s, end s, middle sample).
fn longest_run(mask: &MaskImage, origin: Point2, u: Point2, s0: f64, s1: f64) -> Option<(f64, f64, Point2)> {
    let step = 0.5 / mask.resolution();
    let n = ((s1 - s0) / step).ceil() as usize + 1;
    let inside = |k: usize| {
        let p = origin.add(u.scale(s0 + k as f64 * step));
        mask.world_to_pixel(p).map(|(c, r)| mask.get(c, r)).unwrap_or(false)
    };
    let mut best: Option<(usize, usize)> = None;
    let mut k = 0;
    while k < n {
        if inside(k) {
            let start = k;
            while k + 1 < n && inside(k + 1) {
                k += 1;
            }
            if best.is_none_or(|(a, b)| k - start > b - a) {
                best = Some((start, k));
            }
        }
        k += 1;
    }
    best.map(|(a, b)| {
        let mid = (a + b) / 2;
        (s0 + a as f64 * step, s0 + b as f64 * step, origin.add(u.scale(s0 + mid as f64 * step)))
    })
}

/// Outward boundary normal at `p`, estimated as the mean direction to
/// background pixels in a small window.
fn boundary_normal(mask: &MaskImage, p: Point2) -> Option<Point2> {
    let (c, r) = mask.world_to_pixel(p).ok()?;
    let mut acc = Point2::default();
    for dr in -NORMAL_WINDOW_PX..=NORMAL_WINDOW_PX {
        for dc in -NORMAL_WINDOW_PX..=NORMAL_WINDOW_PX {
            if dr * dr + dc * dc > NORMAL_WINDOW_PX * NORMAL_WINDOW_PX {
                continue;
            }
            let (cc, rr) = (c as i64 + dc, r as i64 + dr);
            let outside = cc < 0
                || rr < 0
                || cc >= mask.width() as i64
                || rr >= mask.height() as i64
                || !mask.get(cc as usize, rr as usize);
            if outside {
                acc = acc.add(Point2::new(dc as f64, dr as f64).normalized());
            }
        }
    }
    (acc.norm() > 1e-9).then(|| acc.normalized())
}

/// True when both contacts' normals lie within the friction cone of the
/// grasp axis `u` (`a` is entered along +u, `b` is left along +u).
fn is_antipodal(mask: &MaskImage, a: Point2, b: Point2, u: Point2) -> bool {
    let cos_cone = FRICTION_CONE.cos();
    let ok = |p: Point2, out: Point2| boundary_normal(mask, p).is_some_and(|n| n.dot(out) >= cos_cone);
    ok(a, u.scale(-1.0)) && ok(b, u)
}

fn mask_pixels(mask: &MaskImage) -> Vec<Pixel> {
    let w = mask.width();
    mask.bits().iter().enumerate().filter(|(_, &b)| b).map(|(k, _)| (k % w, k / w)).collect()
}

/// Scores every antipodal candidate on the goal's modal mask.
pub fn parallel_jaw_candidates(ctx: &PlanningContext<'_>, goal: ObjectId) -> Result<Vec<ParallelJawCandidate>, PlanError> {
    let (modal, visibility) = goal_masks(ctx, goal)?;
    let gripper = &ctx.params.gripper;
    let pixels: Vec<Point2> = mask_pixels(modal).into_iter().map(|p| modal.pixel_to_world(p)).collect();
    let centroid = pixels.iter().fold(Point2::default(), |a, p| a.add(*p)).scale(1.0 / pixels.len() as f64);
    let blocked = obstruction_grid(ctx, goal);
    let px = 1.0 / modal.resolution();

    let n_angles = (ctx.params.grasp_candidates / LINE_OFFSETS).max(1);
    let mut out = Vec::with_capacity(ctx.params.grasp_candidates);
    for i in 0..n_angles {
        let phi = i as f64 * PI / n_angles as f64;
        let u = Point2::from_angle(phi);
        let v = u.perp();
        let (mut umin, mut umax, mut vmin, mut vmax) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for p in &pixels {
            let d = p.sub(centroid);
            umin = umin.min(d.dot(u));
            umax = umax.max(d.dot(u));
            vmin = vmin.min(d.dot(v));
            vmax = vmax.max(d.dot(v));
        }
        for k in 0..LINE_OFFSETS {
            let off = vmin + (k as f64 + 0.5) / LINE_OFFSETS as f64 * (vmax - vmin);
            let origin = centroid.add(v.scale(off));
            let Some((a, b, center)) = longest_run(modal, origin, u, umin - px, umax + px) else {
                continue;
            };
            let width = b - a + px;
            let half = 0.5 * width + 0.5 * gripper.jaw_pad_depth;
            let mid = origin.add(u.scale(0.5 * (a + b)));
            let clearance = [-1.0, 1.0]
                .iter()
                .map(|side| {
                    let pad = oriented_rect(mid.add(u.scale(side * half)), u, gripper.jaw_pad_depth, gripper.jaw_pad_width);
                    let (free, total) = pad_free_samples(modal, &blocked, &pad);
                    free as f64 / total as f64
                })
                .fold(1.0, f64::min);
            let antipodal = is_antipodal(modal, origin.add(u.scale(a)), origin.add(u.scale(b)), u);
            let feasible = if width <= gripper.jaw_max_opening && antipodal { 1.0 } else { 0.0 };
            out.push(ParallelJawCandidate { center, phi, width, clearance, quality: visibility * clearance * feasible });
        }
    }
    Ok(out)
}

/// Best antipodal grasp on the goal's visible mask. Quality is
/// visibility × pad clearance × feasibility (width fits the jaws and both
/// contact normals lie in the friction cone); ties prefer narrower
/// grasps. Returns a quality-0 plan when no candidate is feasible.
pub fn plan_parallel_jaw(ctx: &PlanningContext<'_>, goal: ObjectId) -> Result<ActionPlan, PlanError> {
    let cands = parallel_jaw_candidates(ctx, goal)?;
    let best = cands
        .iter()
        .copied()
        .reduce(|best, c| {
            if c.quality > best.quality || (c.quality == best.quality && c.width < best.width) {
                c
            } else {
                best
            }
        })
        .ok_or(PlanError::EmptyMask(goal))?;
    let (base, top) = ctx.elevation(goal).unwrap_or((0.0, 0.0));
    Ok(ActionPlan {
        action: Action::ParallelJaw { p: Point3::new(best.center.x, best.center.y, 0.5 * (base + top)), phi: best.phi },
        quality: best.quality,
        goal_id: goal,
    })
}

/// Largest disc inscribed in the mask: (centre pixel, radius in meters).
/// The radius is measured from the centre pixel to the edge of the nearest
/// pixel outside the mask.
pub fn inscribed_disc(mask: &MaskImage) -> Option<(Pixel, f64)> {
    let pixels = mask_pixels(mask);
    if pixels.is_empty() {
        return None;
    }
    let (c0, c1) = pixels.iter().fold((usize::MAX, 0), |(a, b), p| (a.min(p.0), b.max(p.0)));
    let (r0, r1) = pixels.iter().fold((usize::MAX, 0), |(a, b), p| (a.min(p.1), b.max(p.1)));
    // Crop with a one-pixel frame of background so the grid edge counts as outside.
    let (w, h) = (c1 - c0 + 3, r1 - r0 + 3);
    let mut outside = vec![true; w * h];
    for &(c, r) in &pixels {
        outside[(r - r0 + 1) * w + (c - c0 + 1)] = false;
    }
    let d2 = squared_edt(&outside, w, h);
    let (k, best) = d2.iter().enumerate().fold((0, -1.0), |b, (k, &v)| if v > b.1 { (k, v) } else { b });
    let pixel = ((k % w) + c0 - 1, (k / w) + r0 - 1);
    Some((pixel, (best.sqrt() - 0.5) / mask.resolution()))
}

/// Suction at the centre of the largest inscribed disc of the visible mask,
/// approached vertically. Quality is visibility × min(1, r_inscribed / r_cup).
pub fn plan_suction(ctx: &PlanningContext<'_>, goal: ObjectId) -> Result<ActionPlan, PlanError> {
    let (modal, visibility) = goal_masks(ctx, goal)?;
    let (pixel, radius) = inscribed_disc(modal).ok_or(PlanError::EmptyMask(goal))?;
    let p = modal.pixel_to_world(pixel);
    let (_, top) = ctx.elevation(goal).unwrap_or((0.0, 0.0));
    let quality = visibility * (radius / ctx.params.gripper.suction_cup_radius).min(1.0);
    Ok(ActionPlan {
        action: Action::Suction { p: Point3::new(p.x, p.y, top), phi: 0.0, theta: 0.0 },
        quality: quality.clamp(0.0, 1.0),
        goal_id: goal,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planners::PlannerParams;
    use crate::scene::{rasterize_scene, Bin, ObjectShape, ObjectState, Pose, SceneState};

    fn scene(objs: Vec<(u32, f64, f64, f64, f64, f64, u32)>) -> SceneState {
        let mut s = SceneState::empty(Bin::default());
        for (id, x, y, w, d, theta, layer) in objs {
            let mut o = ObjectState::new(id, ObjectShape::rectangle(w, d, 0.03).unwrap(), Pose::new(x, y, theta));
            o.layer = layer;
            s.objects.push(o);
        }
        s.initial_count = s.objects.len() as u32;
        s
    }

    #[test]
    fn lone_rectangle_grasped_across_minor_axis() {
        let theta = 0.3;
        let s = scene(vec![(0, 0.2, 0.3, 0.06, 0.03, theta, 0)]);
        let m = rasterize_scene(&s, 200.0).unwrap();
        let params = PlannerParams::default();
        let ctx = PlanningContext::new(&s, &m, &params);
        let plan = plan_parallel_jaw(&ctx, 0).unwrap();
        assert!(plan.quality >= 0.9, "quality {}", plan.quality);
        let Action::ParallelJaw { p, phi } = plan.action else { panic!() };
        // Minor axis of a rectangle rotated by theta (width along local x).
        let minor = theta + PI / 2.0;
        let mut diff = (phi - minor).rem_euclid(PI);
        if diff > PI / 2.0 {
            diff = PI - diff;
        }
        assert!(diff.to_degrees() <= 15.0, "axis off by {} deg", diff.to_degrees());
        let (c, r) = m.get(0).unwrap().modal.world_to_pixel(p.xy()).unwrap();
        assert!(m.get(0).unwrap().modal.get(c, r));

        // Exhaustive check: no candidate scores higher than the returned plan.
        let all = parallel_jaw_candidates(&ctx, 0).unwrap();
        assert!(all.iter().all(|c| c.quality <= plan.quality));
    }

    #[test]
    fn oversized_object_cannot_be_pinched() {
        let s = scene(vec![(0, 0.2, 0.3, 0.095, 0.095, 0.0, 0)]);
        let m = rasterize_scene(&s, 200.0).unwrap();
        let params = PlannerParams::default();
        let ctx = PlanningContext::new(&s, &m, &params);
        assert_eq!(plan_parallel_jaw(&ctx, 0).unwrap().quality, 0.0);
    }

    #[test]
    fn buried_object_reports_empty_mask() {
        let s = scene(vec![(0, 0.2, 0.3, 0.03, 0.03, 0.0, 0), (1, 0.2, 0.3, 0.06, 0.06, 0.0, 1)]);
        let m = rasterize_scene(&s, 200.0).unwrap();
        let params = PlannerParams::default();
        let ctx = PlanningContext::new(&s, &m, &params);
        assert_eq!(plan_parallel_jaw(&ctx, 0), Err(PlanError::EmptyMask(0)));
        assert_eq!(plan_suction(&ctx, 0), Err(PlanError::EmptyMask(0)));
    }

    #[test]
    fn large_flat_object_saturates_suction() {
        let s = scene(vec![(0, 0.2, 0.3, 0.08, 0.08, 0.0, 0)]);
        let m = rasterize_scene(&s, 200.0).unwrap();
        let params = PlannerParams::default();
        let ctx = PlanningContext::new(&s, &m, &params);
        let plan = plan_suction(&ctx, 0).unwrap();
        assert_eq!(plan.quality, 1.0);
        let Action::Suction { phi, theta, .. } = plan.action else { panic!() };
        assert_eq!((phi, theta), (0.0, 0.0));
    }

    #[test]
    fn sliver_mask_scales_with_inscribed_radius() {
        let res = 200.0;
        let (w, h) = (40, 30);
        let mut bits = vec![false; w * h];
        for c in 5..35 {
            bits[15 * w + c] = true;
        }
        let mask = MaskImage::from_bits(w, h, res, bits);
        let (_, r) = inscribed_disc(&mask).unwrap();
        // Oracle: a one-pixel-wide line is half a pixel from its edges.
        assert!((r - 0.5 / res).abs() < 1e-12);
        let cup = PlannerParams::default().gripper.suction_cup_radius;
        let q = (r / cup).min(1.0);
        assert!(q < 0.5);
        assert!((q - 0.25).abs() < 1e-12);
    }

    #[test]
    fn mostly_occluded_object_suction_quality() {
        // 10 cm x 6 cm base, 7 cm of its length covered by a layer-1 plate.
        let res = 200.0;
        let s = scene(vec![(0, 0.2, 0.3, 0.10, 0.06, 0.0, 0), (1, 0.185, 0.3, 0.07, 0.08, 0.0, 1)]);
        let m = rasterize_scene(&s, res).unwrap();
        let params = PlannerParams::default();
        let ctx = PlanningContext::new(&s, &m, &params);
        let plan = plan_suction(&ctx, 0).unwrap();
        // Brute force: visible pixels are the 3 cm x 6 cm strip, wide enough for the cup.
        let vis = m.get(0).unwrap().visibility();
        assert!((vis - 0.3).abs() <= 2.0 / (0.10 * res));
        assert!((plan.quality - 0.3).abs() <= 2.0 / (0.10 * res), "quality {}", plan.quality);
    }

    #[test]
    fn crowded_object_loses_jaw_clearance() {
        let alone = scene(vec![(0, 0.2, 0.3, 0.03, 0.03, 0.0, 0)]);
        let crowded = scene(vec![
            (0, 0.2, 0.3, 0.03, 0.03, 0.0, 0),
            (1, 0.16, 0.3, 0.05, 0.08, 0.0, 0),
            (2, 0.24, 0.3, 0.05, 0.08, 0.0, 0),
            (3, 0.2, 0.26, 0.03, 0.05, 0.0, 0),
            (4, 0.2, 0.34, 0.03, 0.05, 0.0, 0),
        ]);
        let params = PlannerParams::default();
        let q = |s: &SceneState| {
            let m = rasterize_scene(s, 200.0).unwrap();
            plan_parallel_jaw(&PlanningContext::new(s, &m, &params), 0).unwrap().quality
        };
        assert!(q(&alone) > 0.9);
        assert!(q(&crowded) < 0.5);
    }
}
