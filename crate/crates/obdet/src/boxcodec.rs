//! Delta coding between anchor boxes and regression targets.
//!
//! A target box is expressed relative to an anchor as five offsets: the
//! center displacement rotated into the anchor frame and scaled by the
//! anchor sides, the log ratios of the sides, and the angle difference as a
//! fraction of pi. Encoding wraps the angle difference into `[-pi/4, 3pi/4)`
//! before dividing, so `dtheta` always lies in `[-1/4, 3/4)`.

use crate::geometry::{wrap_angle, GeometryError, OrientedBox};
use crate::scalar::{real, Real};

/// Regression offsets `(dx, dy, dw, dh, dtheta)` between an anchor and a
/// target box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxDelta<F = f64> {
    pub dx: F,
    pub dy: F,
    pub dw: F,
    pub dh: F,
    pub dtheta: F,
}

impl<F: Real> BoxDelta<F> {
    pub fn zero() -> Self {
        BoxDelta {
            dx: F::zero(),
            dy: F::zero(),
            dw: F::zero(),
            dh: F::zero(),
            dtheta: F::zero(),
        }
    }

    pub fn components(&self) -> [F; 5] {
        [self.dx, self.dy, self.dw, self.dh, self.dtheta]
    }
}

/// Log side ratios beyond this magnitude are clamped during decoding.
pub const LOG_RATIO_CLAMP: f64 = 8.0;

/// Encodes `gt` relative to `anchor`.
///
/// The center offset is rotated into the anchor frame (by `-theta`) and
/// scaled by the anchor's `(w, h)`; an anchor with `theta = 0` reduces the
/// center terms to plain scaled offsets.
pub fn encode<F: Real>(gt: &OrientedBox<F>, anchor: &OrientedBox<F>) -> BoxDelta<F> {
    let (sin, cos) = anchor.theta().sin_cos();
    let ox = gt.cx() - anchor.cx();
    let oy = gt.cy() - anchor.cy();
    BoxDelta {
        dx: (cos * ox + sin * oy) / anchor.w(),
        dy: (-sin * ox + cos * oy) / anchor.h(),
        dw: (gt.w() / anchor.w()).ln(),
        dh: (gt.h() / anchor.h()).ln(),
        dtheta: wrap_angle(gt.theta() - anchor.theta()) / F::PI(),
    }
}

/// A decoded box plus a flag telling whether the log side ratios were
/// clamped to `±`[`LOG_RATIO_CLAMP`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decoded<F = f64> {
    pub bbox: OrientedBox<F>,
    pub clamped: bool,
}

/// Applies `delta` to `anchor`. Inverse of [`encode`] up to the half-turn
/// symmetry of the box.
///
/// Fails only if the delta drives a parameter out of the representable
/// range (non-finite center or angle, overflowing side).
pub fn decode<F: Real>(
    delta: &BoxDelta<F>,
    anchor: &OrientedBox<F>,
) -> Result<Decoded<F>, GeometryError> {
    let clamp = real::<F>(LOG_RATIO_CLAMP);
    let dw = delta.dw.max(-clamp).min(clamp);
    let dh = delta.dh.max(-clamp).min(clamp);
    let clamped = dw != delta.dw || dh != delta.dh;

    let (sin, cos) = anchor.theta().sin_cos();
    let ox = delta.dx * anchor.w();
    let oy = delta.dy * anchor.h();
    let cx = anchor.cx() + cos * ox - sin * oy;
    let cy = anchor.cy() + sin * ox + cos * oy;
    let w = anchor.w() * dw.exp();
    let h = anchor.h() * dh.exp();
    let theta = anchor.theta() + delta.dtheta * F::PI();
    Ok(Decoded {
        bbox: OrientedBox::new(cx, cy, w, h, theta)?,
        clamped,
    })
}
