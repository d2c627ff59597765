//! Dense feature-map operations: grids, bilinear sampling, a reference
//! convolution, and the anchor-guided alignment convolution with its
//! offset fields.

use thiserror::Error;

use crate::anchors::AnchorMap;
use crate::geometry::Point;
use crate::scalar::{real, Real};

/// Anchor sides below this (in image units) make the sampling grid
/// numerically meaningless.
pub const MIN_ANCHOR_SIDE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FeatopsError {
    #[error("expected {expected} values for the given shape, got {got}")]
    DataSizeMismatch { expected: usize, got: usize },
    #[error("kernel size {k} must be odd")]
    EvenKernel { k: usize },
    #[error("kernel expects {expected} input channels, grid has {got}")]
    ChannelMismatch { expected: usize, got: usize },
    #[error("offset field shape ({h}, {w}, k={k}) does not match grid ({gh}, {gw}) and kernel k={gk}")]
    OffsetShapeMismatch {
        h: usize,
        w: usize,
        k: usize,
        gh: usize,
        gw: usize,
        gk: usize,
    },
    #[error("anchor side {side} is below the minimum of {MIN_ANCHOR_SIDE}")]
    TinyAnchorSide { side: f64 },
    #[error("stride must be positive")]
    ZeroStride,
}

/// Dense row-major feature map: `h * w` locations with `c` channels each,
/// value index `(y * w + x) * c + ch`. `stride` records how many image
/// pixels one cell covers.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid<F = f64> {
    h: usize,
    w: usize,
    c: usize,
    stride: u32,
    data: Vec<F>,
}

impl<F: Real> FeatureGrid<F> {
    pub fn zeros(h: usize, w: usize, c: usize, stride: u32) -> Self {
        FeatureGrid {
            h,
            w,
            c,
            stride,
            data: vec![F::zero(); h * w * c],
        }
    }

    /// Fills from a closure, visiting `(y, x, ch)` with `ch` innermost.
    pub fn from_fn(
        h: usize,
        w: usize,
        c: usize,
        stride: u32,
        mut f: impl FnMut(usize, usize, usize) -> F,
    ) -> Self {
        let mut data = Vec::with_capacity(h * w * c);
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    data.push(f(y, x, ch));
                }
            }
        }
        FeatureGrid { h, w, c, stride, data }
    }

    pub fn from_raw(
        h: usize,
        w: usize,
        c: usize,
        stride: u32,
        data: Vec<F>,
    ) -> Result<Self, FeatopsError> {
        if data.len() != h * w * c {
            return Err(FeatopsError::DataSizeMismatch {
                expected: h * w * c,
                got: data.len(),
            });
        }
        Ok(FeatureGrid { h, w, c, stride, data })
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn c(&self) -> usize {
        self.c
    }

    pub fn stride(&self) -> u32 {
        self.stride
    }

    pub fn get(&self, y: usize, x: usize, ch: usize) -> F {
        self.data[(y * self.w + x) * self.c + ch]
    }

    pub fn set(&mut self, y: usize, x: usize, ch: usize, v: F) {
        self.data[(y * self.w + x) * self.c + ch] = v;
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    /// Applies `f` to every value, keeping the shape.
    pub fn map(&self, f: impl Fn(F) -> F) -> Self {
        FeatureGrid {
            h: self.h,
            w: self.w,
            c: self.c,
            stride: self.stride,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Lattice value with zero padding outside the grid.
    fn padded(&self, y: isize, x: isize, ch: usize) -> F {
        if y < 0 || x < 0 || y as usize >= self.h || x as usize >= self.w {
            F::zero()
        } else {
            self.get(y as usize, x as usize, ch)
        }
    }
}

/// Bilinear interpolation of one channel at fractional coordinates, with
/// zero padding outside the grid. At integer coordinates this reduces to
/// an exact lattice lookup.
pub fn bilinear_sample<F: Real>(grid: &FeatureGrid<F>, x: F, y: F, ch: usize) -> F {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let xi = match x0.to_isize() {
        Some(v) => v,
        None => return F::zero(),
    };
    let yi = match y0.to_isize() {
        Some(v) => v,
        None => return F::zero(),
    };
    let v00 = grid.padded(yi, xi, ch);
    let v10 = grid.padded(yi, xi + 1, ch);
    let v01 = grid.padded(yi + 1, xi, ch);
    let v11 = grid.padded(yi + 1, xi + 1, ch);
    let one = F::one();
    (one - fx) * (one - fy) * v00 + fx * (one - fy) * v10 + (one - fx) * fy * v01 + fx * fy * v11
}

/// Analytic spatial gradient `(d/dx, d/dy)` of [`bilinear_sample`]. The
/// interpolant is piecewise bilinear, so the gradient jumps across integer
/// coordinates; values exactly on the lattice use the cell to the
/// upper-left of the continuation.
pub fn bilinear_grad<F: Real>(grid: &FeatureGrid<F>, x: F, y: F, ch: usize) -> (F, F) {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let (xi, yi) = match (x0.to_isize(), y0.to_isize()) {
        (Some(a), Some(b)) => (a, b),
        _ => return (F::zero(), F::zero()),
    };
    let v00 = grid.padded(yi, xi, ch);
    let v10 = grid.padded(yi, xi + 1, ch);
    let v01 = grid.padded(yi + 1, xi, ch);
    let v11 = grid.padded(yi + 1, xi + 1, ch);
    let one = F::one();
    let ddx = (one - fy) * (v10 - v00) + fy * (v11 - v01);
    let ddy = (one - fx) * (v01 - v00) + fx * (v11 - v10);
    (ddx, ddy)
}

/// Convolution weights: `out_c` filters over `in_c` channels with a
/// `k x k` window, index `((oc * in_c + ic) * k + ty) * k + tx`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernel<F = f64> {
    out_c: usize,
    in_c: usize,
    k: usize,
    weights: Vec<F>,
}

impl<F: Real> ConvKernel<F> {
    pub fn from_weights(
        out_c: usize,
        in_c: usize,
        k: usize,
        weights: Vec<F>,
    ) -> Result<Self, FeatopsError> {
        let expected = out_c * in_c * k * k;
        if weights.len() != expected {
            return Err(FeatopsError::DataSizeMismatch {
                expected,
                got: weights.len(),
            });
        }
        Ok(ConvKernel { out_c, in_c, k, weights })
    }

    /// Fills from a closure, visiting `(oc, ic, ty, tx)` with `tx` innermost.
    pub fn from_fn(
        out_c: usize,
        in_c: usize,
        k: usize,
        mut f: impl FnMut(usize, usize, usize, usize) -> F,
    ) -> Self {
        let mut weights = Vec::with_capacity(out_c * in_c * k * k);
        for oc in 0..out_c {
            for ic in 0..in_c {
                for ty in 0..k {
                    for tx in 0..k {
                        weights.push(f(oc, ic, ty, tx));
                    }
                }
            }
        }
        ConvKernel { out_c, in_c, k, weights }
    }

    /// Center-tap identity: output channel `i` copies input channel `i`.
    pub fn identity(c: usize, k: usize) -> Self {
        let mid = k / 2;
        ConvKernel::from_fn(c, c, k, |oc, ic, ty, tx| {
            if oc == ic && ty == mid && tx == mid {
                F::one()
            } else {
                F::zero()
            }
        })
    }

    pub fn out_c(&self) -> usize {
        self.out_c
    }

    pub fn in_c(&self) -> usize {
        self.in_c
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, oc: usize, ic: usize, ty: usize, tx: usize) -> F {
        self.weights[((oc * self.in_c + ic) * self.k + ty) * self.k + tx]
    }

    pub fn weights(&self) -> &[F] {
        &self.weights
    }
}

/// Same-size convolution with zero padding `(k - 1) / 2`.
///
/// Accumulation per output value runs taps outermost and input channels
/// innermost, the same order [`align_conv`] uses, so the two agree bit
/// for bit whenever the sampled locations are exact lattice points.
pub fn conv2d_ref<F: Real>(
    grid: &FeatureGrid<F>,
    kern: &ConvKernel<F>,
) -> Result<FeatureGrid<F>, FeatopsError> {
    if kern.k.is_multiple_of(2) {
        return Err(FeatopsError::EvenKernel { k: kern.k });
    }
    if kern.in_c != grid.c {
        return Err(FeatopsError::ChannelMismatch {
            expected: kern.in_c,
            got: grid.c,
        });
    }
    let pad = (kern.k / 2) as isize;
    let mut out = FeatureGrid::zeros(grid.h, grid.w, kern.out_c, grid.stride);
    for y in 0..grid.h {
        for x in 0..grid.w {
            for oc in 0..kern.out_c {
                let mut acc = F::zero();
                for ty in 0..kern.k {
                    for tx in 0..kern.k {
                        let sy = y as isize + ty as isize - pad;
                        let sx = x as isize + tx as isize - pad;
                        for ic in 0..kern.in_c {
                            acc = acc + kern.get(oc, ic, ty, tx) * grid.padded(sy, sx, ic);
                        }
                    }
                }
                out.set(y, x, oc, acc);
            }
        }
    }
    Ok(out)
}

/// Where a `k x k` kernel should sample, in feature-grid units, when its
/// window is reshaped to the given anchor.
///
/// Tap `(ty, tx)` (row-major) has displacement `r = (tx - m, ty - m)` with
/// `m = (k - 1) / 2`; its location is the anchor center plus `r` scaled by
/// `(w / k, h / k)` and rotated by the anchor angle, all divided by the
/// stride.
pub fn sampling_locations<F: Real>(
    anchor: &crate::geometry::OrientedBox<F>,
    k: usize,
    stride: u32,
) -> Result<Vec<Point<F>>, FeatopsError> {
    if k.is_multiple_of(2) {
        return Err(FeatopsError::EvenKernel { k });
    }
    if stride == 0 {
        return Err(FeatopsError::ZeroStride);
    }
    let floor = real::<F>(MIN_ANCHOR_SIDE);
    for side in [anchor.w(), anchor.h()] {
        if side < floor {
            return Err(FeatopsError::TinyAnchorSide {
                side: side.to_f64().unwrap_or(f64::NAN),
            });
        }
    }
    let s = real::<F>(stride as f64);
    let kf = real::<F>(k as f64);
    let (sx, sy) = (anchor.w() / kf, anchor.h() / kf);
    let (sin, cos) = anchor.theta().sin_cos();
    let m = (k / 2) as isize;
    let mut out = Vec::with_capacity(k * k);
    for ty in 0..k as isize {
        for tx in 0..k as isize {
            let dx = sx * real::<F>((tx - m) as f64);
            let dy = sy * real::<F>((ty - m) as f64);
            out.push(Point {
                x: (anchor.cx() + cos * dx - sin * dy) / s,
                y: (anchor.cy() + sin * dx + cos * dy) / s,
            });
        }
    }
    Ok(out)
}

/// Per-location sampling offsets for [`align_conv`]: for each grid cell
/// and each of the `k * k` taps, the displacement from the plain
/// convolution's sampling point, stored as interleaved `(dx, dy)` at
/// index `(y * w + x) * 2 * k * k + 2 * t`.
#[derive(Debug, Clone, PartialEq)]
pub struct OffsetField<F = f64> {
    h: usize,
    w: usize,
    k: usize,
    stride: u32,
    data: Vec<F>,
}

impl<F: Real> OffsetField<F> {
    pub fn zeros(h: usize, w: usize, k: usize, stride: u32) -> Self {
        OffsetField {
            h,
            w,
            k,
            stride,
            data: vec![F::zero(); h * w * 2 * k * k],
        }
    }

    pub fn from_raw(
        h: usize,
        w: usize,
        k: usize,
        stride: u32,
        data: Vec<F>,
    ) -> Result<Self, FeatopsError> {
        let expected = h * w * 2 * k * k;
        if data.len() != expected {
            return Err(FeatopsError::DataSizeMismatch {
                expected,
                got: data.len(),
            });
        }
        Ok(OffsetField { h, w, k, stride, data })
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn stride(&self) -> u32 {
        self.stride
    }

    /// Offset `(dx, dy)` of tap `t` at cell `(y, x)`.
    pub fn get(&self, y: usize, x: usize, t: usize) -> (F, F) {
        let base = (y * self.w + x) * 2 * self.k * self.k + 2 * t;
        (self.data[base], self.data[base + 1])
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }
}

/// Offsets that move each tap of a plain convolution onto the sampling
/// locations of the per-cell anchor: `offset = L - p - r`.
///
/// Anchors centered on the stride lattice with sides `k * stride` and no
/// rotation yield exactly zero offsets.
pub fn offset_field<F: Real>(anchors: &AnchorMap<F>, k: usize) -> Result<OffsetField<F>, FeatopsError> {
    if k.is_multiple_of(2) {
        return Err(FeatopsError::EvenKernel { k });
    }
    let (h, w, stride) = (anchors.h(), anchors.w(), anchors.stride());
    let m = (k / 2) as isize;
    let mut data = Vec::with_capacity(h * w * 2 * k * k);
    for y in 0..h {
        for x in 0..w {
            let locs = sampling_locations(anchors.get(y, x), k, stride)?;
            for (t, loc) in locs.iter().enumerate() {
                let (ty, tx) = ((t / k) as isize, (t % k) as isize);
                data.push(loc.x - real::<F>(x as f64) - real::<F>((tx - m) as f64));
                data.push(loc.y - real::<F>(y as f64) - real::<F>((ty - m) as f64));
            }
        }
    }
    OffsetField::from_raw(h, w, k, stride, data)
}

/// Convolution whose taps are displaced per location by an offset field
/// and read through bilinear interpolation (zero padding outside the
/// grid). With an all-zero field this is exactly [`conv2d_ref`].
pub fn align_conv<F: Real>(
    grid: &FeatureGrid<F>,
    kern: &ConvKernel<F>,
    offsets: &OffsetField<F>,
) -> Result<FeatureGrid<F>, FeatopsError> {
    if kern.k.is_multiple_of(2) {
        return Err(FeatopsError::EvenKernel { k: kern.k });
    }
    if kern.in_c != grid.c {
        return Err(FeatopsError::ChannelMismatch {
            expected: kern.in_c,
            got: grid.c,
        });
    }
    if offsets.h != grid.h || offsets.w != grid.w || offsets.k != kern.k {
        return Err(FeatopsError::OffsetShapeMismatch {
            h: offsets.h,
            w: offsets.w,
            k: offsets.k,
            gh: grid.h,
            gw: grid.w,
            gk: kern.k,
        });
    }
    let pad = (kern.k / 2) as isize;
    let mut out = FeatureGrid::zeros(grid.h, grid.w, kern.out_c, grid.stride);
    for y in 0..grid.h {
        for x in 0..grid.w {
            for oc in 0..kern.out_c {
                let mut acc = F::zero();
                for ty in 0..kern.k {
                    for tx in 0..kern.k {
                        let t = ty * kern.k + tx;
                        let (dx, dy) = offsets.get(y, x, t);
                        let sx = real::<F>((x as isize + tx as isize - pad) as f64) + dx;
                        let sy = real::<F>((y as isize + ty as isize - pad) as f64) + dy;
                        for ic in 0..kern.in_c {
                            acc = acc + kern.get(oc, ic, ty, tx) * bilinear_sample(grid, sx, sy, ic);
                        }
                    }
                }
                out.set(y, x, oc, acc);
            }
        }
    }
    Ok(out)
}
