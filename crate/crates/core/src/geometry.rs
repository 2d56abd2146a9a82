//! Planar geometry used by the scene model: simple polygons, convex
//! decomposition, convex clipping and overlap areas.

use serde::{Deserialize, Serialize};

const EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn add(self, o: Point2) -> Point2 {
        Point2::new(self.x + o.x, self.y + o.y)
    }

    pub fn sub(self, o: Point2) -> Point2 {
        Point2::new(self.x - o.x, self.y - o.y)
    }

    pub fn scale(self, s: f64) -> Point2 {
        Point2::new(self.x * s, self.y * s)
    }

    pub fn dot(self, o: Point2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Point2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(self, o: Point2) -> f64 {
        self.sub(o).norm()
    }

    pub fn normalized(self) -> Point2 {
        let n = self.norm();
        if n < EPS {
            Point2::new(0.0, 0.0)
        } else {
            self.scale(1.0 / n)
        }
    }

    /// Counter-clockwise perpendicular.
    pub fn perp(self) -> Point2 {
        Point2::new(-self.y, self.x)
    }

    pub fn rotated(self, theta: f64) -> Point2 {
        let (s, c) = theta.sin_cos();
        Point2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn from_angle(theta: f64) -> Point2 {
        Point2::new(theta.cos(), theta.sin())
    }
}

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Point2,
    pub max: Point2,
}

impl Aabb {
    pub fn of(points: &[Point2]) -> Aabb {
        let mut min = Point2::new(f64::INFINITY, f64::INFINITY);
        let mut max = Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in points {
            min.x = min.x.min(p.x);
            min.y = min.y.min(p.y);
            max.x = max.x.max(p.x);
            max.y = max.y.max(p.y);
        }
        Aabb { min, max }
    }

    pub fn intersects(&self, o: &Aabb) -> bool {
        self.min.x <= o.max.x && o.min.x <= self.max.x && self.min.y <= o.max.y && o.min.y <= self.max.y
    }

    pub fn union(&self, o: &Aabb) -> Aabb {
        Aabb {
            min: Point2::new(self.min.x.min(o.min.x), self.min.y.min(o.min.y)),
            max: Point2::new(self.max.x.max(o.max.x), self.max.y.max(o.max.y)),
        }
    }
}

/// Signed area (positive for counter-clockwise winding).
pub fn signed_area(poly: &[Point2]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let mut a = 0.0;
    for i in 0..n {
        a += poly[i].cross(poly[(i + 1) % n]);
    }
    0.5 * a
}

pub fn area(poly: &[Point2]) -> f64 {
    signed_area(poly).abs()
}

/// Area centroid of a simple polygon.
pub fn centroid(poly: &[Point2]) -> Point2 {
    let n = poly.len();
    let a = signed_area(poly);
    if a.abs() < EPS {
        let s = poly.iter().fold(Point2::default(), |acc, p| acc.add(*p));
        return s.scale(1.0 / n.max(1) as f64);
    }
    let (mut cx, mut cy) = (0.0, 0.0);
    for i in 0..n {
        let p = poly[i];
        let q = poly[(i + 1) % n];
        let c = p.cross(q);
        cx += (p.x + q.x) * c;
        cy += (p.y + q.y) * c;
    }
    Point2::new(cx / (6.0 * a), cy / (6.0 * a))
}

/// Returns the polygon with counter-clockwise winding.
pub fn to_ccw(mut poly: Vec<Point2>) -> Vec<Point2> {
    if signed_area(&poly) < 0.0 {
        poly.reverse();
    }
    poly
}

pub fn is_convex(poly: &[Point2]) -> bool {
    let n = poly.len();
    if n < 3 {
        return false;
    }
    let mut sign = 0.0f64;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        let c = poly[(i + 2) % n];
        let z = b.sub(a).cross(c.sub(b));
        if z.abs() < EPS {
            continue;
        }
        if sign == 0.0 {
            sign = z.signum();
        } else if z.signum() != sign {
            return false;
        }
    }
    true
}

fn orient(a: Point2, b: Point2, c: Point2) -> f64 {
    b.sub(a).cross(c.sub(a))
}

fn on_segment(a: Point2, b: Point2, p: Point2) -> bool {
    p.x >= a.x.min(b.x) - EPS && p.x <= a.x.max(b.x) + EPS && p.y >= a.y.min(b.y) - EPS && p.y <= a.y.max(b.y) + EPS
}

/// Closed-segment intersection test.
pub fn segments_intersect(a: Point2, b: Point2, c: Point2, d: Point2) -> bool {
    let d1 = orient(c, d, a);
    let d2 = orient(c, d, b);
    let d3 = orient(a, b, c);
    let d4 = orient(a, b, d);
    if ((d1 > EPS && d2 < -EPS) || (d1 < -EPS && d2 > EPS)) && ((d3 > EPS && d4 < -EPS) || (d3 < -EPS && d4 > EPS)) {
        return true;
    }
    (d1.abs() <= EPS && on_segment(c, d, a))
        || (d2.abs() <= EPS && on_segment(c, d, b))
        || (d3.abs() <= EPS && on_segment(a, b, c))
        || (d4.abs() <= EPS && on_segment(a, b, d))
}

/// True when no two non-adjacent edges intersect.
pub fn is_simple(poly: &[Point2]) -> bool {
    let n = poly.len();
    if n < 3 {
        return false;
    }
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        if a.dist(b) < EPS {
            return false;
        }
        for j in (i + 1)..n {
            if j == i || (j + 1) % n == i || (i + 1) % n == j {
                continue;
            }
            let (c, d) = (poly[j], poly[(j + 1) % n]);
            if segments_intersect(a, b, c, d) {
                return false;
            }
        }
    }
    true
}

/// Even-odd point containment.
pub fn point_in_polygon(p: Point2, poly: &[Point2]) -> bool {
    let n = poly.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a.y > p.y) != (b.y > p.y) {
            let x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if p.x < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Ear-clipping triangulation of a simple counter-clockwise polygon.
pub fn triangulate(poly: &[Point2]) -> Vec<[Point2; 3]> {
    let mut idx: Vec<usize> = (0..poly.len()).collect();
    let mut out = Vec::with_capacity(poly.len().saturating_sub(2));
    let mut guard = 0;
    while idx.len() > 3 && guard < 10_000 {
        guard += 1;
        let n = idx.len();
        let mut clipped = false;
        for k in 0..n {
            let (ia, ib, ic) = (idx[(k + n - 1) % n], idx[k], idx[(k + 1) % n]);
            let (a, b, c) = (poly[ia], poly[ib], poly[ic]);
            if orient(a, b, c) <= EPS {
                continue;
            }
            let blocked = idx.iter().any(|&m| {
                if m == ia || m == ib || m == ic {
                    return false;
                }
                let p = poly[m];
                orient(a, b, p) >= -EPS && orient(b, c, p) >= -EPS && orient(c, a, p) >= -EPS
            });
            if blocked {
                continue;
            }
            out.push([a, b, c]);
            idx.remove(k);
            clipped = true;
            break;
        }
        if !clipped {
            break;
        }
    }
    if idx.len() == 3 {
        out.push([poly[idx[0]], poly[idx[1]], poly[idx[2]]]);
    }
    out
}

/// Splits a simple polygon into convex pieces: itself when convex, otherwise
/// greedily merged ear-clipping triangles.
pub fn convex_parts(poly: &[Point2]) -> Vec<Vec<Point2>> {
    let poly = to_ccw(poly.to_vec());
    if is_convex(&poly) {
        return vec![poly];
    }
    let mut parts: Vec<Vec<Point2>> = triangulate(&poly).into_iter().map(|t| t.to_vec()).collect();
    // Merge neighbouring pieces across shared edges while the union stays convex.
    let mut merged = true;
    while merged {
        merged = false;
        'outer: for i in 0..parts.len() {
            for j in (i + 1)..parts.len() {
                if let Some(u) = merge_along_shared_edge(&parts[i], &parts[j]) {
                    if is_convex(&u) {
                        parts[i] = u;
                        parts.remove(j);
                        merged = true;
                        break 'outer;
                    }
                }
            }
        }
    }
    parts
}

fn same(a: Point2, b: Point2) -> bool {
    a.dist(b) < 1e-12
}

fn merge_along_shared_edge(p: &[Point2], q: &[Point2]) -> Option<Vec<Point2>> {
    let (n, m) = (p.len(), q.len());
    for i in 0..n {
        let (a, b) = (p[i], p[(i + 1) % n]);
        for j in 0..m {
            let (c, d) = (q[j], q[(j + 1) % m]);
            if same(a, d) && same(b, c) {
                // p: ... a b ...   q: ... c(=b) d(=a) ...
                let mut out: Vec<Point2> = (0..n).map(|k| p[(i + 1 + k) % n]).collect();
                // out runs b..a; splice q's vertices after d up to c.
                let mut k = (j + 2) % m;
                while k != j {
                    out.push(q[k]);
                    k = (k + 1) % m;
                }
                return Some(out);
            }
        }
    }
    None
}

/// Sutherland–Hodgman clip of `subject` by the convex counter-clockwise `clip`.
pub fn clip_convex(subject: &[Point2], clip: &[Point2]) -> Vec<Point2> {
    let mut output = subject.to_vec();
    let m = clip.len();
    for i in 0..m {
        if output.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % m]);
        let input = std::mem::take(&mut output);
        let k = input.len();
        for j in 0..k {
            let cur = input[j];
            let prev = input[(j + k - 1) % k];
            let cur_in = orient(a, b, cur) >= 0.0;
            let prev_in = orient(a, b, prev) >= 0.0;
            if cur_in {
                if !prev_in {
                    output.push(line_intersection(prev, cur, a, b));
                }
                output.push(cur);
            } else if prev_in {
                output.push(line_intersection(prev, cur, a, b));
            }
        }
    }
    output
}

fn line_intersection(p: Point2, q: Point2, a: Point2, b: Point2) -> Point2 {
    let r = q.sub(p);
    let s = b.sub(a);
    let denom = r.cross(s);
    if denom.abs() < EPS {
        return q;
    }
    let t = a.sub(p).cross(s) / denom;
    p.add(r.scale(t))
}

/// Area of the intersection of two convex counter-clockwise polygons.
pub fn convex_overlap_area(a: &[Point2], b: &[Point2]) -> f64 {
    area(&clip_convex(a, b))
}

/// Area of the intersection of two unions of convex pieces.
pub fn parts_overlap_area(a: &[Vec<Point2>], b: &[Vec<Point2>]) -> f64 {
    let mut total = 0.0;
    for pa in a {
        let ba = Aabb::of(pa);
        for pb in b {
            if !ba.intersects(&Aabb::of(pb)) {
                continue;
            }
            total += convex_overlap_area(pa, pb);
        }
    }
    total
}

/// Convex hull (monotone chain), counter-clockwise, no collinear points.
pub fn convex_hull(points: &[Point2]) -> Vec<Point2> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup_by(|a, b| same(*a, *b));
    if pts.len() < 3 {
        return pts;
    }
    let mut lower: Vec<Point2> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && orient(lower[lower.len() - 2], lower[lower.len() - 1], p) <= EPS {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<Point2> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && orient(upper[upper.len() - 2], upper[upper.len() - 1], p) <= EPS {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Oriented rectangle centred at `center`, with `length` along `axis` and
/// `width` across it. Counter-clockwise.
pub fn oriented_rect(center: Point2, axis: Point2, length: f64, width: f64) -> Vec<Point2> {
    let u = axis.normalized();
    let v = u.perp();
    let (hl, hw) = (0.5 * length, 0.5 * width);
    vec![
        center.add(u.scale(-hl)).add(v.scale(-hw)),
        center.add(u.scale(hl)).add(v.scale(-hw)),
        center.add(u.scale(hl)).add(v.scale(hw)),
        center.add(u.scale(-hl)).add(v.scale(hw)),
    ]
}

/// (min, max) of the projections of `points` onto `dir`.
pub fn project(points: &[Point2], dir: Point2) -> (f64, f64) {
    points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
        let d = p.dot(dir);
        (lo.min(d), hi.max(d))
    })
}

/// Distance from `p` to segment `a`–`b`.
pub fn point_segment_distance(p: Point2, a: Point2, b: Point2) -> f64 {
    let ab = b.sub(a);
    let len2 = ab.dot(ab);
    if len2 < EPS {
        return p.dist(a);
    }
    let t = (p.sub(a).dot(ab) / len2).clamp(0.0, 1.0);
    p.dist(a.add(ab.scale(t)))
}
