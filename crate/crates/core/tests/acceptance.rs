//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any fail.

use std::f64::consts::TAU;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use mech_search_core::harness::{mix_seed, run_batch, run_experiment, Execution, HeapRef, LoadedHeap, RolloutConfig, RolloutRecord};
use mech_search_core::heapgen::{generate_heap, HeapSpec};
use mech_search_core::planners::{distance_transform, plan_push, Action, PlannerParams, PlanningContext};
use mech_search_core::policies::{grasp_threshold, PolicyConfig, TerminationCause};
use mech_search_core::scene::{rasterize_scene, MaskImage, SceneState};
use mech_search_core::simphys::Outcome;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const HEAP_SEED: u64 = 42;
const HEAPS_PER_SIZE: u64 = 200;
const SIZES: [u32; 3] = [10, 15, 20];
const POLICIES: [&str; 5] = ["random", "prandom", "largest", "prandom-push", "largest-push"];

struct Verdict {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn verdict(name: &'static str, pass: bool, detail: String) -> Verdict {
    Verdict { name, pass, detail }
}

// ---------------------------------------------------------------------------
// Distance transform

fn brute_force_distance(bits: &[bool], w: usize, h: usize, res: f64) -> Vec<f64> {
    let occ: Vec<(i64, i64)> = (0..w * h).filter(|&k| bits[k]).map(|k| ((k % w) as i64, (k / w) as i64)).collect();
    (0..w * h)
        .map(|k| {
            let (c, r) = ((k % w) as i64, (k / w) as i64);
            let d2 = occ.iter().map(|&(oc, or)| (oc - c).pow(2) + (or - r).pow(2)).min().expect("occupied pixel");
            (d2 as f64).sqrt() / res
        })
        .collect()
}

fn check_edt() -> Verdict {
    let t = Instant::now();
    let (w, h, res) = (64, 64, 200.0);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut mismatches = 0;
    for g in 0..20 {
        let density = [0.002, 0.01, 0.05, 0.2, 0.5][g % 5];
        let mut bits: Vec<bool> = (0..w * h).map(|_| rng.random::<f64>() < density).collect();
        if !bits.iter().any(|&b| b) {
            bits[rng.random_range(0..w * h)] = true;
        }
        let field = distance_transform(&MaskImage::from_bits(w, h, res, bits.clone()));
        let oracle = brute_force_distance(&bits, w, h, res);
        mismatches += field.values().iter().zip(&oracle).filter(|(a, b)| a != b).count();
    }
    let elapsed = t.elapsed();
    verdict(
        "distance-transform exactness",
        mismatches == 0 && elapsed < Duration::from_secs(5),
        format!("20 grids 64x64, {mismatches} mismatching pixels, {:.2} s", elapsed.as_secs_f64()),
    )
}

// ---------------------------------------------------------------------------
// Push geometry, re-derived from the scene without the planner's helpers

type P = (f64, f64);

fn sub(a: P, b: P) -> P {
    (a.0 - b.0, a.1 - b.1)
}

fn dot(a: P, b: P) -> f64 {
    a.0 * b.0 + a.1 * b.1
}

fn cross(a: P, b: P) -> f64 {
    a.0 * b.1 - a.1 * b.0
}

fn shoelace(poly: &[P]) -> f64 {
    let n = poly.len();
    (0..n).map(|i| cross(poly[i], poly[(i + 1) % n])).sum::<f64>().abs() * 0.5
}

fn ccw(mut poly: Vec<P>) -> Vec<P> {
    let n = poly.len();
    let signed: f64 = (0..n).map(|i| cross(poly[i], poly[(i + 1) % n])).sum();
    if signed < 0.0 {
        poly.reverse();
    }
    poly
}

/// Sutherland-Hodgman clip of `subject` by convex `clip`; both counter-clockwise.
fn clip_area(subject: &[P], clip: &[P]) -> f64 {
    let mut out: Vec<P> = subject.to_vec();
    for i in 0..clip.len() {
        let (a, b) = (clip[i], clip[(i + 1) % clip.len()]);
        let inside = |p: P| cross(sub(b, a), sub(p, a)) >= 0.0;
        let input = std::mem::take(&mut out);
        for j in 0..input.len() {
            let (p, q) = (input[j], input[(j + 1) % input.len()]);
            let (ip, iq) = (inside(p), inside(q));
            if ip {
                out.push(p);
            }
            if ip != iq {
                let (d1, d2) = (cross(sub(b, a), sub(p, a)), cross(sub(b, a), sub(q, a)));
                let t = d1 / (d1 - d2);
                out.push((p.0 + t * (q.0 - p.0), p.1 + t * (q.1 - p.1)));
            }
        }
        if out.is_empty() {
            return 0.0;
        }
    }
    shoelace(&out)
}

fn pusher_rect(center: P, dir: P, gripper_depth: f64, gripper_width: f64) -> Vec<P> {
    let n = dot(dir, dir).sqrt();
    let u = (dir.0 / n, dir.1 / n);
    let v = (-u.1, u.0);
    let (hl, hw) = (gripper_depth / 2.0, gripper_width / 2.0);
    ccw(vec![
        (center.0 - u.0 * hl - v.0 * hw, center.1 - u.1 * hl - v.1 * hw),
        (center.0 + u.0 * hl - v.0 * hw, center.1 + u.1 * hl - v.1 * hw),
        (center.0 + u.0 * hl + v.0 * hw, center.1 + u.1 * hl + v.1 * hw),
        (center.0 - u.0 * hl + v.0 * hw, center.1 - u.1 * hl + v.1 * hw),
    ])
}

fn start_collides(scene: &SceneState, rect: &[P]) -> bool {
    let inner = scene.bin.interior();
    if rect.iter().any(|p| p.0 < inner.min.x || p.0 > inner.max.x || p.1 < inner.min.y || p.1 > inner.max.y) {
        return true;
    }
    scene.active().any(|o| {
        let area: f64 = o
            .world_parts()
            .iter()
            .map(|part| clip_area(&ccw(part.iter().map(|v| (v.x, v.y)).collect()), rect))
            .sum();
        area > 1e-9
    })
}

fn seg_dist(p: P, a: P, b: P) -> f64 {
    let ab = sub(b, a);
    let len2 = dot(ab, ab);
    let t = if len2 == 0.0 { 0.0 } else { (dot(sub(p, a), ab) / len2).clamp(0.0, 1.0) };
    let q = (a.0 + t * ab.0, a.1 + t * ab.1);
    dot(sub(p, q), sub(p, q)).sqrt()
}

/// Travel along `dir` before any corner of the pusher leaves the interior.
fn travel_limit(scene: &SceneState, rect: &[P], dir: P) -> f64 {
    let inner = scene.bin.interior();
    let mut limit = f64::INFINITY;
    for &(x, y) in rect {
        for (pos, d, lo, hi) in [(x, dir.0, inner.min.x, inner.max.x), (y, dir.1, inner.min.y, inner.max.y)] {
            if d > 1e-12 {
                limit = limit.min((hi - pos) / d);
            } else if d < -1e-12 {
                limit = limit.min((lo - pos) / d);
            }
        }
    }
    limit.max(0.0)
}

fn check_push_geometry() -> Verdict {
    let params = PlannerParams::default();
    let g = params.gripper;
    let (mut plans, mut ones, mut failures) = (0, 0, Vec::new());
    for s in 0..500u64 {
        let n = 4 + (s % 17) as usize;
        let scene = generate_heap(&HeapSpec::new(n, mix_seed(777, s))).expect("heap");
        let masks = rasterize_scene(&scene, 200.0).expect("raster");
        let ctx = PlanningContext::new(&scene, &masks, &params);
        // Most free point: first row-major maximum of the clearance field.
        let field = distance_transform(&masks.occupancy);
        let (k, best) = field.values().iter().enumerate().fold((0, f64::NEG_INFINITY), |b, (k, &v)| if v > b.1 { (k, v) } else { b });
        let free_ok = best >= g.pusher_depth / 2.0;
        let free = field.pixel_to_world((k % field.width(), k / field.width()));
        let free = (free.x, free.y);
        for o in scene.active() {
            let plan = plan_push(&ctx, o.id).expect("plan");
            plans += 1;
            let c = o.centroid();
            let c = (c.x, c.y);
            let toward = sub(free, c);
            let tn = dot(toward, toward).sqrt();
            // Exhaustive candidate re-scoring.
            let standoff = o.shape.bounding_radius() + g.pusher_depth / 2.0 + params.standoff_margin;
            let mut feasible: Vec<(f64, P, P)> = Vec::new();
            for j in 0..params.push_angles {
                let a = j as f64 * TAU / params.push_angles as f64;
                let start = (c.0 + standoff * a.cos(), c.1 + standoff * a.sin());
                let dir = (-a.cos(), -a.sin());
                let rect = pusher_rect(start, dir, g.pusher_depth, g.pusher_width);
                let travel = dot(sub(free, start), dir).min(travel_limit(&scene, &rect, dir)).max(0.0);
                let end = (start.0 + travel * dir.0, start.1 + travel * dir.1);
                if !free_ok || tn == 0.0 || start_collides(&scene, &rect) || seg_dist(c, start, end) > params.com_tolerance {
                    continue;
                }
                let dev = (dot(dir, toward) / tn).clamp(-1.0, 1.0).acos();
                feasible.push((dev, start, end));
            }
            let min_dev = feasible.iter().map(|f| f.0).fold(f64::INFINITY, f64::min);
            let Action::Push { p, p_prime } = plan.action else {
                failures.push(format!("object {} in scene {s}: non-push action", o.id));
                continue;
            };
            let (p, q) = ((p.x, p.y), (p_prime.x, p_prime.y));
            match plan.quality {
                1.0 => {
                    ones += 1;
                    let dir = sub(q, p);
                    let collision_free = dot(dir, dir) > 0.0 && !start_collides(&scene, &pusher_rect(p, dir, g.pusher_depth, g.pusher_width));
                    let com_ok = seg_dist(c, p, q) <= params.com_tolerance + 1e-12;
                    let dev = if tn > 0.0 && dot(dir, dir) > 0.0 {
                        (dot(dir, toward) / (tn * dot(dir, dir).sqrt())).clamp(-1.0, 1.0).acos()
                    } else {
                        f64::NAN
                    };
                    let minimal = (dev - min_dev).abs() <= 1e-9;
                    let sampled = feasible.iter().any(|f| seg_dist(f.1, p, p) < 1e-9 && seg_dist(f.2, q, q) < 1e-9);
                    if !(collision_free && com_ok && minimal && sampled) {
                        failures.push(format!(
                            "scene {s} object {}: free={collision_free} com={com_ok} minimal={minimal} sampled={sampled}",
                            o.id
                        ));
                    }
                }
                0.0 => {
                    if !feasible.is_empty() {
                        failures.push(format!("scene {s} object {}: quality 0 but {} feasible starts", o.id, feasible.len()));
                    }
                }
                other => failures.push(format!("scene {s} object {}: quality {other}", o.id)),
            }
        }
    }
    let detail = format!(
        "500 scenes, {plans} plans, {ones} with quality 1, {} violations{}",
        failures.len(),
        failures.first().map_or(String::new(), |f| format!(" (first: {f})"))
    );
    verdict("push geometry", failures.is_empty() && ones > 0, detail)
}

// ---------------------------------------------------------------------------
// Policy experiments

fn heaps(n: u32) -> Vec<LoadedHeap> {
    (0..HEAPS_PER_SIZE)
        .map(|i| {
            let seed = mix_seed(HEAP_SEED, ((n as u64) << 32) | i);
            LoadedHeap {
                heap: HeapRef { name: format!("n{n:02}_{i:04}"), seed, n_objects: n },
                scene: generate_heap(&HeapSpec::new(n as usize, seed)).expect("heap"),
            }
        })
        .collect()
}

struct Group {
    policy: &'static str,
    n: u32,
    records: Vec<RolloutRecord>,
    elapsed: Duration,
}

impl Group {
    fn mean_actions(&self) -> f64 {
        let s: Vec<f64> = self.records.iter().filter(|r| r.is_success()).map(|r| r.num_actions() as f64).collect();
        if s.is_empty() {
            f64::NAN
        } else {
            s.iter().sum::<f64>() / s.len() as f64
        }
    }

    fn within(&self, k: u32) -> f64 {
        self.records.iter().filter(|r| r.is_success() && r.num_actions() <= k).count() as f64 / self.records.len() as f64
    }

    fn push_fraction(&self) -> f64 {
        let (push, total) = self.records.iter().fold((0, 0), |(p, t), r| (p + r.action_counts.push, t + r.action_counts.total()));
        push as f64 / total.max(1) as f64
    }
}

fn run_groups() -> Vec<Group> {
    let mut out = Vec::new();
    for n in SIZES {
        let hs = heaps(n);
        for policy in POLICIES {
            let cfg = RolloutConfig::from_policy_name(policy).expect("policy");
            let t = Instant::now();
            let records = run_batch(&hs, &[cfg], Execution::Sequential).expect("batch");
            out.push(Group { policy, n, records, elapsed: t.elapsed() });
        }
    }
    out
}

fn group<'a>(groups: &'a [Group], policy: &str, n: u32) -> &'a Group {
    groups.iter().find(|g| g.policy == policy && g.n == n).expect("group")
}

fn check_ordering(groups: &[Group]) -> Verdict {
    let (r, pr, lf) = (group(groups, "random", 15), group(groups, "prandom", 15), group(groups, "largest", 15));
    let (mr, mpr, mlf) = (r.mean_actions(), pr.mean_actions(), lf.mean_actions());
    let runtime = r.elapsed + pr.elapsed + lf.elapsed;
    let pass = mlf + 0.5 <= mpr && mpr + 0.5 <= mr && runtime < Duration::from_secs(600);
    verdict(
        "policy ordering",
        pass,
        format!(
            "N=15, 200 heaps: largest {mlf:.2} < prandom {mpr:.2} < random {mr:.2} (gaps {:.2}, {:.2}), {:.1} s single-threaded",
            mpr - mlf,
            mr - mpr,
            runtime.as_secs_f64()
        ),
    )
}

/// (slope, R²) of the least-squares line through `pts`.
fn line_fit(pts: &[(f64, f64)]) -> (f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 0.0 } else { sxy * sxy / (sxx * syy) };
    (slope, r2)
}

fn check_scaling(groups: &[Group]) -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for policy in POLICIES {
        let pts: Vec<(f64, f64)> = SIZES.iter().map(|&n| (n as f64, group(groups, policy, n).mean_actions())).collect();
        let (slope, r2) = line_fit(&pts);
        pass &= slope > 0.0 && r2 >= 0.9;
        parts.push(format!("{policy} slope {slope:.3} R2 {r2:.3}"));
    }
    verdict("linear scaling", pass, parts.join("; "))
}

fn check_efficiency(groups: &[Group]) -> Verdict {
    let lf = group(groups, "largest", 15).within(5);
    let r = group(groups, "random", 15).within(5);
    verdict("efficiency head", lf >= 0.45 && r <= 0.25, format!("N=15 within 5 actions: largest {lf:.3} (>= 0.45), random {r:.3} (<= 0.25)"))
}

fn check_push_scarcity(groups: &[Group]) -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for policy in ["prandom-push", "largest-push"] {
        let f = group(groups, policy, 15).push_fraction();
        pass &= (0.01..=0.15).contains(&f);
        parts.push(format!("{policy} {:.2}%", 100.0 * f));
    }
    verdict("push scarcity", pass, format!("N=15 push share of actions (1-15%): {}", parts.join(", ")))
}

fn check_termination(groups: &[Group]) -> Verdict {
    let mut over = 0;
    let mut inconsistent = 0;
    let (mut none, mut ejected, mut timeout) = (0u32, 0u32, 0u32);
    for g in groups {
        for r in &g.records {
            let horizon = r.config.policy.max_steps(r.heap.n_objects);
            if r.num_actions() > horizon {
                over += 1;
            }
            let target_hit = |o: &Outcome| matches!(o, Outcome::ObjectEjected(ids) if !ids.is_empty());
            let consistent = match r.termination {
                TerminationCause::Success => r.steps.last().is_some_and(|s| s.outcome == Outcome::GraspSucceeded),
                TerminationCause::NoActionAvailable => {
                    none += 1;
                    r.num_actions() < horizon
                }
                TerminationCause::TargetEjected => {
                    ejected += 1;
                    r.steps.last().is_some_and(|s| target_hit(&s.outcome))
                }
                TerminationCause::Timeout => {
                    timeout += 1;
                    r.num_actions() == horizon
                }
            };
            if !consistent {
                inconsistent += 1;
            }
        }
    }
    let failures = none + ejected + timeout;
    let share = if failures == 0 { f64::NAN } else { none as f64 / failures as f64 };
    let modal = failures > 0 && share >= 0.5;
    verdict(
        "termination soundness",
        over == 0 && inconsistent == 0 && modal,
        format!(
            "{over} rollouts over 2N, {inconsistent} inconsistent causes; failures {failures} (no-action {none}, ejected {ejected}, timeout {timeout}), no-action share {share:.2} (>= 0.5)"
        ),
    )
}

fn sorted_lines(path: &std::path::Path) -> Vec<String> {
    let mut v: Vec<String> = std::fs::read_to_string(path).expect("records").lines().map(String::from).collect();
    v.sort();
    v
}

fn check_determinism() -> Verdict {
    let hs: Vec<LoadedHeap> = heaps(15).into_iter().take(60).collect();
    let cfgs: Vec<RolloutConfig> = ["random", "largest-push"].iter().map(|p| RolloutConfig::from_policy_name(p).expect("policy")).collect();
    let dirs: Vec<tempfile::TempDir> = (0..3).map(|_| tempfile::tempdir().expect("tempdir")).collect();
    let runs = [Execution::Sequential, Execution::Sequential, Execution::Parallel { workers: 4 }];
    let files: Vec<Vec<String>> = runs
        .iter()
        .zip(&dirs)
        .map(|(&exec, d)| sorted_lines(&run_experiment(&hs, &cfgs, exec, d.path()).expect("experiment").records_path))
        .collect();
    let same = files.windows(2).all(|w| w[0] == w[1]);
    verdict(
        "determinism",
        same && !files[0].is_empty(),
        format!("{} records; sequential rerun and 4-worker run byte-identical: {same}", files[0].len()),
    )
}

fn check_thresholds() -> Verdict {
    let mut cases = Vec::new();
    for pushing in [false, true] {
        let cfg = PolicyConfig::new(mech_search_core::policies::Method::LargestFirst, pushing);
        // (object, recognized target) → expected
        for (o, recognized, want) in [
            (3, Some(3), 0.15),
            (2, Some(3), if pushing { 0.3 } else { 0.15 }),
            (2, None, if pushing { 0.3 } else { 0.15 }),
        ] {
            let got = grasp_threshold(o, recognized, &cfg);
            cases.push((pushing, o, recognized, got, want));
        }
    }
    let bad: Vec<_> = cases.iter().filter(|c| c.3 != c.4).collect();
    verdict("threshold semantics", bad.is_empty(), format!("{} cases, {} mismatches", cases.len(), bad.len()))
}

fn main() -> ExitCode {
    let t = Instant::now();
    let mut verdicts = vec![check_edt(), check_push_geometry(), check_thresholds(), check_determinism()];
    let groups = run_groups();
    verdicts.push(check_ordering(&groups));
    verdicts.push(check_scaling(&groups));
    verdicts.push(check_efficiency(&groups));
    verdicts.push(check_push_scarcity(&groups));
    verdicts.push(check_termination(&groups));
    for v in &verdicts {
        println!("{} {}: {}", if v.pass { "PASS" } else { "FAIL" }, v.name, v.detail);
    }
    let failed = verdicts.iter().filter(|v| !v.pass).count();
    println!("acceptance: {} passed, {failed} failed in {:.1} s", verdicts.len() - failed, t.elapsed().as_secs_f64());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
