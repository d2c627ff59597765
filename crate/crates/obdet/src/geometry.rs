//! Planar geometry for oriented rectangles: canonical box parameterization,
//! corner conversion, minimum-area enclosure of quadrilaterals, and exact
//! rotated IoU via convex polygon clipping.
//!
//! Angles are radians measured from the +x axis toward +y. Every
//! [`OrientedBox`] is canonical by construction: the long side is `w`, the
//! short side is `h`, and the angle lies in the half-open interval
//! `[-pi/4, 3pi/4)`. A rectangle is invariant under a half-turn, so any raw
//! `(w, h, theta)` triple has exactly one canonical representation.

use std::ops::{Add, Mul, Sub};

use thiserror::Error;

use crate::scalar::{real, Real};

/// Errors produced by box and quad constructors.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    /// A side length was zero, negative, or non-finite.
    #[error("box sides must be positive and finite (w={w}, h={h})")]
    InvalidSide { w: f64, h: f64 },
    /// A coordinate or angle was NaN or infinite.
    #[error("box field is not finite")]
    NonFinite,
    /// The quadrilateral has (numerically) zero area, so no enclosing
    /// rectangle is defined.
    #[error("quad is degenerate: all vertices are collinear")]
    DegenerateQuad,
}

/// 2-D point, also used as a vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point<F> {
    pub x: F,
    pub y: F,
}

impl<F: Real> Point<F> {
    pub fn new(x: F, y: F) -> Self {
        Point { x, y }
    }

    /// Rotates by the angle whose cosine/sine are given, counter-clockwise
    /// (toward +y from +x).
    #[inline]
    pub fn rotated(self, cos: F, sin: F) -> Self {
        Point {
            x: self.x * cos - self.y * sin,
            y: self.x * sin + self.y * cos,
        }
    }
}

impl<F: Real> Add for Point<F> {
    type Output = Point<F>;
    fn add(self, rhs: Self) -> Self {
        Point::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl<F: Real> Sub for Point<F> {
    type Output = Point<F>;
    fn sub(self, rhs: Self) -> Self {
        Point::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl<F: Real> Mul<F> for Point<F> {
    type Output = Point<F>;
    fn mul(self, rhs: F) -> Self {
        Point::new(self.x * rhs, self.y * rhs)
    }
}

/// z-component of the cross product of two planar vectors.
#[inline]
fn cross<F: Real>(a: Point<F>, b: Point<F>) -> F {
    a.x * b.y - a.y * b.x
}

/// Wraps an angle into the canonical half-open interval `[-pi/4, 3pi/4)`,
/// modulo pi.
pub(crate) fn wrap_angle<F: Real>(theta: F) -> F {
    let period = F::PI();
    let quarter = F::FRAC_PI_4();
    let mut m = (theta + quarter) % period;
    if m < F::zero() {
        m = m + period;
    }
    // Adding the period can round back up to the period itself when m was a
    // tiny negative value; fold that back to keep the interval half-open.
    if m >= period {
        m = m - period;
    }
    m - quarter
}

/// Oriented rectangle `(cx, cy, w, h, theta)` in canonical form:
/// `w >= h > 0` and `theta` in `[-pi/4, 3pi/4)`.
///
/// `theta` is the direction of the `w` (long) side. `theta = 0` means the
/// long side is parallel to the x axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedBox<F = f64> {
    cx: F,
    cy: F,
    w: F,
    h: F,
    theta: F,
}

impl<F: Real> OrientedBox<F> {
    /// Builds a canonical box from raw parameters.
    ///
    /// If `w < h` the sides are swapped and the angle advanced by a quarter
    /// turn; the angle is then wrapped modulo pi into `[-pi/4, 3pi/4)`. The
    /// corner set is preserved exactly by both steps.
    pub fn new(cx: F, cy: F, w: F, h: F, theta: F) -> Result<Self, GeometryError> {
        if !(cx.is_finite() && cy.is_finite() && theta.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        if !(w.is_finite() && h.is_finite() && w > F::zero() && h > F::zero()) {
            return Err(GeometryError::InvalidSide {
                w: w.to_f64().unwrap_or(f64::NAN),
                h: h.to_f64().unwrap_or(f64::NAN),
            });
        }
        let (w, h, theta) = if w < h {
            (h, w, theta + F::FRAC_PI_2())
        } else {
            (w, h, theta)
        };
        Ok(OrientedBox {
            cx,
            cy,
            w,
            h,
            theta: wrap_angle(theta),
        })
    }

    pub fn cx(&self) -> F {
        self.cx
    }

    pub fn cy(&self) -> F {
        self.cy
    }

    /// Long side.
    pub fn w(&self) -> F {
        self.w
    }

    /// Short side.
    pub fn h(&self) -> F {
        self.h
    }

    /// Angle of the long side, in `[-pi/4, 3pi/4)`.
    pub fn theta(&self) -> F {
        self.theta
    }

    pub fn center(&self) -> Point<F> {
        Point::new(self.cx, self.cy)
    }

    pub fn area(&self) -> F {
        self.w * self.h
    }

    /// Returns a copy translated by `(dx, dy)`.
    pub fn translated(&self, dx: F, dy: F) -> Self {
        OrientedBox {
            cx: self.cx + dx,
            cy: self.cy + dy,
            ..*self
        }
    }

    /// The four corners, counter-clockwise: `center + R(theta) * (±w/2, ±h/2)`.
    pub fn to_quad(&self) -> Quad<F> {
        let (sin, cos) = self.theta.sin_cos();
        let hw = self.w * real::<F>(0.5);
        let hh = self.h * real::<F>(0.5);
        let c = self.center();
        let corner = |sx: F, sy: F| c + Point::new(hw * sx, hh * sy).rotated(cos, sin);
        let one = F::one();
        Quad::new([
            corner(-one, -one),
            corner(one, -one),
            corner(one, one),
            corner(-one, one),
        ])
    }

    /// Smallest axis-aligned rectangle containing the box, as
    /// `(min, max)` corners.
    pub fn aabb(&self) -> (Point<F>, Point<F>) {
        let q = self.to_quad();
        let vs = q.vertices();
        let mut min = vs[0];
        let mut max = vs[0];
        for v in &vs[1..] {
            min.x = min.x.min(v.x);
            min.y = min.y.min(v.y);
            max.x = max.x.max(v.x);
            max.y = max.y.max(v.y);
        }
        (min, max)
    }
}

/// Convex quadrilateral with counter-clockwise vertex order.
///
/// Construction normalizes winding (a clockwise input is reversed); vertex
/// positions are never altered.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quad<F = f64> {
    vertices: [Point<F>; 4],
}

impl<F: Real> Quad<F> {
    pub fn new(mut vertices: [Point<F>; 4]) -> Self {
        if shoelace(&vertices) < F::zero() {
            vertices.reverse();
        }
        Quad { vertices }
    }

    pub fn vertices(&self) -> [Point<F>; 4] {
        self.vertices
    }

    /// Unsigned area.
    pub fn area(&self) -> F {
        shoelace(&self.vertices).abs()
    }

    /// Minimum-area oriented rectangle enclosing the quad.
    ///
    /// One side of the optimum is collinear with a convex-hull edge, so the
    /// search rotates the hull into each edge frame and takes the tightest
    /// axis-aligned bound. Collinear vertices leave no enclosing rectangle
    /// with positive area and produce [`GeometryError::DegenerateQuad`].
    pub fn min_area_box(&self) -> Result<OrientedBox<F>, GeometryError> {
        let hull = convex_hull(&self.vertices);
        if hull.len() < 3 {
            return Err(GeometryError::DegenerateQuad);
        }
        let mut best: Option<(F, F, F, Point<F>, F, F)> = None;
        for i in 0..hull.len() {
            let p = hull[i];
            let q = hull[(i + 1) % hull.len()];
            let d = q - p;
            let len = (d.x * d.x + d.y * d.y).sqrt();
            if len == F::zero() {
                continue;
            }
            let cos = d.x / len;
            let sin = d.y / len;
            // Coordinates in the frame where this edge is horizontal.
            let mut min_u = F::infinity();
            let mut max_u = F::neg_infinity();
            let mut min_v = F::infinity();
            let mut max_v = F::neg_infinity();
            for &v in &hull {
                let u = v.x * cos + v.y * sin;
                let t = -v.x * sin + v.y * cos;
                min_u = min_u.min(u);
                max_u = max_u.max(u);
                min_v = min_v.min(t);
                max_v = max_v.max(t);
            }
            let du = max_u - min_u;
            let dv = max_v - min_v;
            let area = du * dv;
            let better = match &best {
                None => true,
                Some((a, ..)) => area < *a,
            };
            if better {
                let mid = Point::new(
                    (min_u + max_u) * real::<F>(0.5),
                    (min_v + max_v) * real::<F>(0.5),
                );
                let center = Point::new(mid.x * cos - mid.y * sin, mid.x * sin + mid.y * cos);
                best = Some((area, du, dv, center, cos, sin));
            }
        }
        match best {
            Some((area, du, dv, center, cos, sin)) if area > F::zero() => {
                OrientedBox::new(center.x, center.y, du, dv, sin.atan2(cos))
                    .map_err(|_| GeometryError::DegenerateQuad)
            }
            _ => Err(GeometryError::DegenerateQuad),
        }
    }
}

/// Signed shoelace area; positive for counter-clockwise order.
fn shoelace<F: Real>(pts: &[Point<F>]) -> F {
    let n = pts.len();
    let mut acc = F::zero();
    for i in 0..n {
        let a = pts[i];
        let b = pts[(i + 1) % n];
        acc = acc + cross(a, b);
    }
    acc * real::<F>(0.5)
}

/// Convex hull (monotone chain), counter-clockwise, no collinear points.
fn convex_hull<F: Real>(pts: &[Point<F>]) -> Vec<Point<F>> {
    let mut sorted: Vec<Point<F>> = pts.to_vec();
    sorted.sort_by(|a, b| {
        a.x.partial_cmp(&b.x)
            .unwrap()
            .then(a.y.partial_cmp(&b.y).unwrap())
    });
    sorted.dedup_by(|a, b| a.x == b.x && a.y == b.y);
    if sorted.len() < 3 {
        return sorted;
    }
    let mut hull: Vec<Point<F>> = Vec::with_capacity(sorted.len() * 2);
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Point<F>>> = if pass == 0 {
            Box::new(sorted.iter())
        } else {
            Box::new(sorted.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 {
                let a = hull[hull.len() - 2];
                let b = hull[hull.len() - 1];
                if cross(b - a, p - a) <= F::zero() {
                    hull.pop();
                } else {
                    break;
                }
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

/// Vertex-merge tolerance, relative to the larger box side.
const MERGE_EPS: f64 = 1e-9;
/// Polygons below this area (relative to the squared scale) count as empty.
const EMPTY_AREA_EPS: f64 = 1e-12;

/// Intersection-over-union of two oriented rectangles.
///
/// The intersection is computed by clipping one corner quad against the
/// other (both are convex), its area by the shoelace formula. Nearly
/// coincident vertices of the clipped polygon are merged at `1e-9` of the
/// larger box side, and polygons with area below `1e-12` (same relative
/// scale, squared) count as empty. A zero-area intersection yields `0.0`;
/// the result is clamped to `[0, 1]`.
pub fn rotated_iou<F: Real>(a: &OrientedBox<F>, b: &OrientedBox<F>) -> F {
    let scale = a.w().max(b.w());
    let qa = a.to_quad();
    let qb = b.to_quad();
    let area_a = qa.area();
    let area_b = qb.area();

    let mut poly: Vec<Point<F>> = qa.vertices().to_vec();
    let clip_vs = qb.vertices();
    for i in 0..4 {
        if poly.is_empty() {
            break;
        }
        poly = clip_halfplane(&poly, clip_vs[i], clip_vs[(i + 1) % 4]);
    }
    merge_close_vertices(&mut poly, scale * real::<F>(MERGE_EPS));

    let inter = if poly.len() < 3 {
        F::zero()
    } else {
        let area = shoelace(&poly).abs();
        if area < scale * scale * real::<F>(EMPTY_AREA_EPS) {
            F::zero()
        } else {
            area
        }
    };

    let union = area_a + area_b - inter;
    // The positive test (not `union <= 0`) also routes a NaN union to 0.
    if union > F::zero() {
        (inter / union).max(F::zero()).min(F::one())
    } else {
        F::zero()
    }
}

/// Clips a polygon to the half-plane on the left of the directed edge
/// `a -> b` (boundary included). Standard Sutherland-Hodgman step.
fn clip_halfplane<F: Real>(poly: &[Point<F>], a: Point<F>, b: Point<F>) -> Vec<Point<F>> {
    let edge = b - a;
    let inside = |p: Point<F>| cross(edge, p - a) >= F::zero();
    let mut out = Vec::with_capacity(poly.len() + 2);
    for i in 0..poly.len() {
        let s = poly[i];
        let e = poly[(i + 1) % poly.len()];
        let s_in = inside(s);
        let e_in = inside(e);
        if s_in != e_in {
            out.push(line_intersection(s, e, a, edge));
        }
        if e_in {
            out.push(e);
        }
    }
    out
}

/// Intersection of segment `s -> e` with the infinite line through `a` with
/// direction `d`. The caller guarantees the segment crosses the line; a
/// numerically parallel pair falls back to the segment end and is cleaned up
/// by vertex merging.
fn line_intersection<F: Real>(s: Point<F>, e: Point<F>, a: Point<F>, d: Point<F>) -> Point<F> {
    let seg = e - s;
    let denom = cross(seg, d);
    if denom == F::zero() {
        return e;
    }
    let t = cross(a - s, d) / denom;
    s + seg * t
}

fn merge_close_vertices<F: Real>(poly: &mut Vec<Point<F>>, eps: F) {
    if poly.len() < 2 {
        return;
    }
    let mut merged: Vec<Point<F>> = Vec::with_capacity(poly.len());
    for &p in poly.iter() {
        let close = merged
            .last()
            .map(|q| (p.x - q.x).abs() <= eps && (p.y - q.y).abs() <= eps)
            .unwrap_or(false);
        if !close {
            merged.push(p);
        }
    }
    while merged.len() >= 2 {
        let first = merged[0];
        let last = *merged.last().unwrap();
        if (first.x - last.x).abs() <= eps && (first.y - last.y).abs() <= eps {
            merged.pop();
        } else {
            break;
        }
    }
    *poly = merged;
}
