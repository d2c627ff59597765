//! Orientation-aware features: grids whose channels carry responses for
//! several filter rotations, convolutions that materialize those rotations
//! from one stored filter, and pooling back down to rotation-invariant
//! channels.

use thiserror::Error;

use crate::featops::{conv2d_ref, ConvKernel, FeatureGrid, FeatopsError};
use crate::scalar::Real;

/// Fixed window size of rotating filters: rotations permute the 8 border
/// taps of a 3x3 stencil.
pub const ARF_KERNEL_SIZE: usize = 3;

/// Border taps `(ty, tx)` of the 3x3 stencil in clockwise order starting
/// at the top-left (y grows downward). One step along the ring is a 45
/// degree clockwise rotation of the stencil.
pub const RING: [(usize, usize); 8] = [
    (0, 0),
    (0, 1),
    (0, 2),
    (1, 2),
    (2, 2),
    (2, 1),
    (2, 0),
    (1, 0),
];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OrientationError {
    #[error("orientation count {n} is not one of 1, 2, 4, 8")]
    UnsupportedOrientations { n: usize },
    #[error("{c} channels cannot carry {n} orientations per base channel")]
    ChannelsNotDivisible { c: usize, n: usize },
    #[error("filter expects {expected} base input channels, grid has {got}")]
    BaseMismatch { expected: usize, got: usize },
    #[error("orientation counts differ: filter {filter}, grid {grid}")]
    OrientationMismatch { filter: usize, grid: usize },
    #[error(transparent)]
    Featops(#[from] FeatopsError),
}

fn check_orientations(n: usize) -> Result<(), OrientationError> {
    if matches!(n, 1 | 2 | 4 | 8) {
        Ok(())
    } else {
        Err(OrientationError::UnsupportedOrientations { n })
    }
}

/// Feature grid whose channels are grouped as `base * orientations`, the
/// orientation index innermost: channel `b * n + o` holds base channel
/// `b` at rotation `o`.
#[derive(Debug, Clone, PartialEq)]
pub struct OrientedFeatureGrid<F = f64> {
    grid: FeatureGrid<F>,
    base: usize,
    orientations: usize,
}

impl<F: Real> OrientedFeatureGrid<F> {
    pub fn new(grid: FeatureGrid<F>, orientations: usize) -> Result<Self, OrientationError> {
        check_orientations(orientations)?;
        if !grid.c().is_multiple_of(orientations) {
            return Err(OrientationError::ChannelsNotDivisible {
                c: grid.c(),
                n: orientations,
            });
        }
        let base = grid.c() / orientations;
        Ok(OrientedFeatureGrid { grid, base, orientations })
    }

    pub fn zeros(h: usize, w: usize, base: usize, orientations: usize, stride: u32) -> Result<Self, OrientationError> {
        check_orientations(orientations)?;
        Ok(OrientedFeatureGrid {
            grid: FeatureGrid::zeros(h, w, base * orientations, stride),
            base,
            orientations,
        })
    }

    /// Fills from a closure, visiting `(y, x, b, o)` with `o` innermost.
    pub fn from_fn(
        h: usize,
        w: usize,
        base: usize,
        orientations: usize,
        stride: u32,
        mut f: impl FnMut(usize, usize, usize, usize) -> F,
    ) -> Result<Self, OrientationError> {
        check_orientations(orientations)?;
        let grid = FeatureGrid::from_fn(h, w, base * orientations, stride, |y, x, c| {
            f(y, x, c / orientations, c % orientations)
        });
        Ok(OrientedFeatureGrid { grid, base, orientations })
    }

    pub fn h(&self) -> usize {
        self.grid.h()
    }

    pub fn w(&self) -> usize {
        self.grid.w()
    }

    pub fn base(&self) -> usize {
        self.base
    }

    pub fn orientations(&self) -> usize {
        self.orientations
    }

    pub fn get(&self, y: usize, x: usize, b: usize, o: usize) -> F {
        self.grid.get(y, x, b * self.orientations + o)
    }

    pub fn set(&mut self, y: usize, x: usize, b: usize, o: usize, v: F) {
        self.grid.set(y, x, b * self.orientations + o, v);
    }

    pub fn grid(&self) -> &FeatureGrid<F> {
        &self.grid
    }

    pub fn into_grid(self) -> FeatureGrid<F> {
        self.grid
    }
}

/// One stored 3x3 filter bank whose rotated copies are materialized on
/// demand. Weight index: `(((ob * in_base + ib) * n + o) * 3 + ty) * 3 + tx`.
#[derive(Debug, Clone, PartialEq)]
pub struct RotatingFilter<F = f64> {
    out_base: usize,
    in_base: usize,
    n: usize,
    weights: Vec<F>,
}

impl<F: Real> RotatingFilter<F> {
    pub fn from_weights(
        out_base: usize,
        in_base: usize,
        n: usize,
        weights: Vec<F>,
    ) -> Result<Self, OrientationError> {
        check_orientations(n)?;
        let expected = out_base * in_base * n * 9;
        if weights.len() != expected {
            return Err(OrientationError::Featops(FeatopsError::DataSizeMismatch {
                expected,
                got: weights.len(),
            }));
        }
        Ok(RotatingFilter { out_base, in_base, n, weights })
    }

    /// Fills from a closure, visiting `(ob, ib, o, ty, tx)` with `tx`
    /// innermost.
    pub fn from_fn(
        out_base: usize,
        in_base: usize,
        n: usize,
        mut f: impl FnMut(usize, usize, usize, usize, usize) -> F,
    ) -> Result<Self, OrientationError> {
        check_orientations(n)?;
        let mut weights = Vec::with_capacity(out_base * in_base * n * 9);
        for ob in 0..out_base {
            for ib in 0..in_base {
                for o in 0..n {
                    for ty in 0..3 {
                        for tx in 0..3 {
                            weights.push(f(ob, ib, o, ty, tx));
                        }
                    }
                }
            }
        }
        Ok(RotatingFilter { out_base, in_base, n, weights })
    }

    pub fn out_base(&self) -> usize {
        self.out_base
    }

    pub fn in_base(&self) -> usize {
        self.in_base
    }

    pub fn orientations(&self) -> usize {
        self.n
    }

    fn idx(&self, ob: usize, ib: usize, o: usize, ty: usize, tx: usize) -> usize {
        (((ob * self.in_base + ib) * self.n + o) * 3 + ty) * 3 + tx
    }

    pub fn get(&self, ob: usize, ib: usize, o: usize, ty: usize, tx: usize) -> F {
        self.weights[self.idx(ob, ib, o, ty, tx)]
    }

    pub fn weights(&self) -> &[F] {
        &self.weights
    }

    /// The filter rotated clockwise by `i * (360 / n)` degrees: border taps
    /// shift `i * (8 / n)` ring positions, the center stays, and
    /// orientation slice `o` takes its weights from slice `(o - i) mod n`.
    ///
    /// Rotation permutes weights, so composing rotations is exact:
    /// `rotate(i).rotate(j) == rotate((i + j) % n)` bit for bit.
    pub fn rotate(&self, i: usize) -> RotatingFilter<F> {
        let i = i % self.n;
        let shift = i * (8 / self.n);
        let mut weights = vec![F::zero(); self.weights.len()];
        for ob in 0..self.out_base {
            for ib in 0..self.in_base {
                for o in 0..self.n {
                    let src_o = (o + self.n - i) % self.n;
                    weights[self.idx(ob, ib, o, 1, 1)] = self.get(ob, ib, src_o, 1, 1);
                    for (j, &(sy, sx)) in RING.iter().enumerate() {
                        let (dy, dx) = RING[(j + shift) % 8];
                        weights[self.idx(ob, ib, o, dy, dx)] = self.get(ob, ib, src_o, sy, sx);
                    }
                }
            }
        }
        RotatingFilter {
            out_base: self.out_base,
            in_base: self.in_base,
            n: self.n,
            weights,
        }
    }

    /// Plain convolution weights over interleaved channels: input channel
    /// `ib * n + o`, output channel `ob`.
    pub fn as_kernel(&self) -> ConvKernel<F> {
        ConvKernel::from_fn(self.out_base, self.in_base * self.n, 3, |ob, ic, ty, tx| {
            self.get(ob, ic / self.n, ic % self.n, ty, tx)
        })
    }
}

/// Convolution with every rotation of the filter: output channel
/// `ob * n + i` is the response of rotation `i` against all input
/// orientation channels.
pub fn arf_conv<F: Real>(
    x: &OrientedFeatureGrid<F>,
    filter: &RotatingFilter<F>,
) -> Result<OrientedFeatureGrid<F>, OrientationError> {
    if filter.in_base != x.base {
        return Err(OrientationError::BaseMismatch {
            expected: filter.in_base,
            got: x.base,
        });
    }
    if filter.n != x.orientations {
        return Err(OrientationError::OrientationMismatch {
            filter: filter.n,
            grid: x.orientations,
        });
    }
    let mut out = OrientedFeatureGrid::zeros(
        x.h(),
        x.w(),
        filter.out_base,
        filter.n,
        x.grid().stride(),
    )?;
    for i in 0..filter.n {
        let response = conv2d_ref(x.grid(), &filter.rotate(i).as_kernel())?;
        for y in 0..x.h() {
            for xx in 0..x.w() {
                for ob in 0..filter.out_base {
                    out.set(y, xx, ob, i, response.get(y, xx, ob));
                }
            }
        }
    }
    Ok(out)
}

/// Collapses orientation channels by taking, per base channel, the
/// maximum over all rotation responses.
pub fn orientation_pool<F: Real>(x: &OrientedFeatureGrid<F>) -> FeatureGrid<F> {
    FeatureGrid::from_fn(x.h(), x.w(), x.base, x.grid().stride(), |y, xx, b| {
        let mut best = x.get(y, xx, b, 0);
        for o in 1..x.orientations {
            let v = x.get(y, xx, b, o);
            if v > best {
                best = v;
            }
        }
        best
    })
}
