//! Independent reference implementations ("oracles") used by the
//! integration suites. Everything here is written against the documented
//! contracts, deliberately with different algorithms and accumulation
//! orders than the library, so agreement is evidence rather than
//! tautology.

#![allow(dead_code)]

use obdet::featops::{ConvKernel, FeatureGrid, OffsetField};
use obdet::geometry::{rotated_iou, OrientedBox};
use obdet::postprocess::Detection;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random canonical box: center within `+-span`, sides in `[lo, hi]`,
/// any angle (canonicalization exercised through a full turn).
pub fn rand_box(rng: &mut ChaCha8Rng, span: f64, lo: f64, hi: f64) -> OrientedBox<f64> {
    let cx = rng.gen_range(-span..span);
    let cy = rng.gen_range(-span..span);
    let w = rng.gen_range(lo..hi);
    let h = rng.gen_range(lo..hi);
    let theta = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
    OrientedBox::new(cx, cy, w, h, theta).unwrap()
}

/// Membership test used by both rasterizers: a point is inside iff its
/// coordinates in the box frame are within the half-sides.
pub fn inside_box(b: &OrientedBox<f64>, x: f64, y: f64) -> bool {
    let (sin, cos) = b.theta().sin_cos();
    let dx = x - b.cx();
    let dy = y - b.cy();
    let u = cos * dx + sin * dy;
    let v = -sin * dx + cos * dy;
    u.abs() <= b.w() / 2.0 && v.abs() <= b.h() / 2.0
}

fn joint_aabb(a: &OrientedBox<f64>, b: &OrientedBox<f64>) -> (f64, f64, f64, f64) {
    let (amin, amax) = a.aabb();
    let (bmin, bmax) = b.aabb();
    (
        amin.x.min(bmin.x),
        amin.y.min(bmin.y),
        amax.x.max(bmax.x),
        amax.y.max(bmax.y),
    )
}

/// Literal rasterization: test every cell center of a `g x g` grid over
/// the joint bounding box against both membership predicates.
pub fn raster_iou_literal(a: &OrientedBox<f64>, b: &OrientedBox<f64>, g: usize) -> f64 {
    let (x0, y0, x1, y1) = joint_aabb(a, b);
    let dx = (x1 - x0) / g as f64;
    let dy = (y1 - y0) / g as f64;
    let (mut na, mut nb, mut ni) = (0u64, 0u64, 0u64);
    for iy in 0..g {
        let y = y0 + (iy as f64 + 0.5) * dy;
        for ix in 0..g {
            let x = x0 + (ix as f64 + 0.5) * dx;
            let ia = inside_box(a, x, y);
            let ib = inside_box(b, x, y);
            na += ia as u64;
            nb += ib as u64;
            ni += (ia && ib) as u64;
        }
    }
    let union = na + nb - ni;
    if union == 0 {
        0.0
    } else {
        ni as f64 / union as f64
    }
}

/// Cells of one row covered by one box, as an inclusive index range.
///
/// Within a row the membership predicate is a conjunction of conditions
/// each monotone in x, so the covered cells form one contiguous run. The
/// run bounds are located analytically from the half-plane constraints
/// and then snapped to the literal predicate by probing the edge cells,
/// which keeps the count identical to the literal rasterizer.
fn row_run(b: &OrientedBox<f64>, y: f64, x0: f64, dx: f64, g: usize) -> Option<(usize, usize)> {
    let (sin, cos) = b.theta().sin_cos();
    // Constraints alpha * x <= beta on the cell-center x coordinate.
    // u = cos*(x-cx) + sin*(y-cy) in [-w/2, w/2], v likewise for h.
    let dy = y - b.cy();
    let cons = [
        (cos, b.w() / 2.0 + cos * b.cx() - sin * dy),
        (-cos, b.w() / 2.0 - cos * b.cx() + sin * dy),
        (-sin, b.h() / 2.0 - sin * b.cx() - cos * dy),
        (sin, b.h() / 2.0 + sin * b.cx() + cos * dy),
    ];
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    for (alpha, beta) in cons {
        if alpha.abs() < 1e-12 {
            if beta < -1e-9 {
                return None;
            }
        } else if alpha > 0.0 {
            hi = hi.min(beta / alpha);
        } else {
            lo = lo.max(beta / alpha);
        }
    }
    if lo > hi {
        return None;
    }
    // Candidate cell indices; +-2 covers the rounding of the divisions.
    let jlo = (((lo - x0) / dx - 0.5).ceil() as i64 - 2).max(0);
    let jhi = (((hi - x0) / dx - 0.5).floor() as i64 + 2).min(g as i64 - 1);
    if jlo > jhi {
        return None;
    }
    let cell = |j: i64| x0 + (j as f64 + 0.5) * dx;
    let mut first = None;
    for j in jlo..=jhi {
        if inside_box(b, cell(j), y) {
            first = Some(j);
            break;
        }
    }
    let first = first?;
    let mut last = first;
    for j in (first..=jhi).rev() {
        if inside_box(b, cell(j), y) {
            last = j;
            break;
        }
    }
    Some((first as usize, last as usize))
}

/// Scanline rasterization over the joint bounding box: per row, each
/// box covers one contiguous cell run, and the intersection count is the
/// overlap of the two runs. Cell-for-cell identical to
/// [`raster_iou_literal`], at O(g) per box pair instead of O(g^2).
pub fn raster_iou(a: &OrientedBox<f64>, b: &OrientedBox<f64>, g: usize) -> f64 {
    let (x0, y0, x1, y1) = joint_aabb(a, b);
    let dx = (x1 - x0) / g as f64;
    let dy = (y1 - y0) / g as f64;
    let (mut na, mut nb, mut ni) = (0u64, 0u64, 0u64);
    for iy in 0..g {
        let y = y0 + (iy as f64 + 0.5) * dy;
        let ra = row_run(a, y, x0, dx, g);
        let rb = row_run(b, y, x0, dx, g);
        if let Some((s, e)) = ra {
            na += (e - s + 1) as u64;
        }
        if let Some((s, e)) = rb {
            nb += (e - s + 1) as u64;
        }
        if let (Some((sa, ea)), Some((sb, eb))) = (ra, rb) {
            let s = sa.max(sb);
            let e = ea.min(eb);
            if s <= e {
                ni += (e - s + 1) as u64;
            }
        }
    }
    let union = na + nb - ni;
    if union == 0 {
        0.0
    } else {
        ni as f64 / union as f64
    }
}

/// Weight-stationary direct convolution with zero padding: a different
/// loop nest (and so a different accumulation order) than the library's
/// reference convolution.
pub fn naive_conv(grid: &FeatureGrid<f64>, kern: &ConvKernel<f64>) -> FeatureGrid<f64> {
    let (h, w, k) = (grid.h(), grid.w(), kern.k());
    let pad = (k / 2) as isize;
    let fetch = |y: isize, x: isize, c: usize| -> f64 {
        if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
            0.0
        } else {
            grid.get(y as usize, x as usize, c)
        }
    };
    let mut out = FeatureGrid::zeros(h, w, kern.out_c(), grid.stride());
    for ic in 0..kern.in_c() {
        for ty in 0..k {
            for tx in 0..k {
                for oc in 0..kern.out_c() {
                    let wv = kern.get(oc, ic, ty, tx);
                    for y in 0..h {
                        for x in 0..w {
                            let v = fetch(
                                y as isize + ty as isize - pad,
                                x as isize + tx as isize - pad,
                                ic,
                            );
                            out.set(y, x, oc, out.get(y, x, oc) + wv * v);
                        }
                    }
                }
            }
        }
    }
    out
}

/// Standalone bilinear read with zero padding outside the grid.
pub fn naive_bilinear(grid: &FeatureGrid<f64>, x: f64, y: f64, c: usize) -> f64 {
    let fetch = |iy: isize, ix: isize| -> f64 {
        if iy < 0 || ix < 0 || iy >= grid.h() as isize || ix >= grid.w() as isize {
            0.0
        } else {
            grid.get(iy as usize, ix as usize, c)
        }
    };
    let fx = x.floor();
    let fy = y.floor();
    let (ix, iy) = (fx as isize, fy as isize);
    let (ax, ay) = (x - fx, y - fy);
    fetch(iy, ix) * (1.0 - ax) * (1.0 - ay)
        + fetch(iy, ix + 1) * ax * (1.0 - ay)
        + fetch(iy + 1, ix) * (1.0 - ax) * ay
        + fetch(iy + 1, ix + 1) * ax * ay
}

/// Offset-guided convolution built on [`naive_bilinear`], looping in a
/// different order than the library: taps sample at
/// `(x + tx - pad + dx, y + ty - pad + dy)`.
pub fn naive_align(
    grid: &FeatureGrid<f64>,
    kern: &ConvKernel<f64>,
    offsets: &OffsetField<f64>,
) -> FeatureGrid<f64> {
    let (h, w, k) = (grid.h(), grid.w(), kern.k());
    let pad = (k / 2) as isize;
    let mut out = FeatureGrid::zeros(h, w, kern.out_c(), grid.stride());
    for ic in 0..kern.in_c() {
        for y in 0..h {
            for x in 0..w {
                for ty in 0..k {
                    for tx in 0..k {
                        let (dx, dy) = offsets.get(y, x, ty * k + tx);
                        let sx = (x as isize + tx as isize - pad) as f64 + dx;
                        let sy = (y as isize + ty as isize - pad) as f64 + dy;
                        let v = naive_bilinear(grid, sx, sy, ic);
                        for oc in 0..kern.out_c() {
                            out.set(y, x, oc, out.get(y, x, oc) + kern.get(oc, ic, ty, tx) * v);
                        }
                    }
                }
            }
        }
    }
    out
}

/// Brute-force greedy suppression: repeatedly take the best-scoring
/// unsuppressed detection (ties to the lowest index) and knock out
/// everything it overlaps more than `thr`. Returns kept indices.
pub fn brute_nms(dets: &[Detection<f64>], thr: f64, per_class: bool) -> Vec<usize> {
    let mut alive: Vec<bool> = vec![true; dets.len()];
    let mut kept = Vec::new();
    loop {
        let mut best: Option<usize> = None;
        for (i, d) in dets.iter().enumerate() {
            if alive[i] && best.is_none_or(|b| d.score > dets[b].score) {
                best = Some(i);
            }
        }
        let Some(b) = best else { break };
        alive[b] = false;
        kept.push(b);
        for (i, d) in dets.iter().enumerate() {
            if alive[i]
                && (!per_class || d.class == dets[b].class)
                && rotated_iou(&d.bbox, &dets[b].bbox) > thr
            {
                alive[i] = false;
            }
        }
    }
    kept.sort_unstable();
    kept
}
