//! Exact Euclidean distance transform via the lower-envelope-of-parabolas
//! method, applied separably to columns then rows.

/// Stand-in for "no occupied pixel yet"; large but finite so envelope
/// intersections stay well defined.
const FAR: f64 = 1e18;

/// Squared distance (in pixels²) from every pixel to the nearest `true` pixel
/// of a row-major `width` × `height` grid. Returns `FAR`-sized values when
/// the grid has no occupied pixel at all.
pub fn squared_edt(bits: &[bool], width: usize, height: usize) -> Vec<f64> {
    assert_eq!(bits.len(), width * height);
    let mut grid: Vec<f64> = bits.iter().map(|&b| if b { 0.0 } else { FAR }).collect();
    let n = width.max(height);
    let mut f = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0; n + 1];

    for c in 0..width {
        for r in 0..height {
            f[r] = grid[r * width + c];
        }
        transform_1d(&f[..height], &mut d[..height], &mut v, &mut z);
        for r in 0..height {
            grid[r * width + c] = d[r];
        }
    }
    for r in 0..height {
        let row = &mut grid[r * width..(r + 1) * width];
        f[..width].copy_from_slice(row);
        transform_1d(&f[..width], &mut d[..width], &mut v, &mut z);
        row.copy_from_slice(&d[..width]);
    }
    grid
}

fn transform_1d(f: &[f64], d: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    if n == 0 {
        return;
    }
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let qf = q as f64;
        let mut s;
        loop {
            let p = v[k] as f64;
            s = ((f[q] + qf * qf) - (f[v[k]] + p * p)) / (2.0 * qf - 2.0 * p);
            if s <= z[k] && k > 0 {
                k -= 1;
            } else {
                break;
            }
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, out) in d.iter_mut().enumerate().take(n) {
        let qf = q as f64;
        while z[k + 1] < qf {
            k += 1;
        }
        let p = v[k] as f64;
        *out = (qf - p) * (qf - p) + f[v[k]];
    }
}
