//! Anchor generation over a feature pyramid and IoU-based assignment of
//! anchors to ground-truth boxes.

use thiserror::Error;

use crate::geometry::{rotated_iou, OrientedBox};
use crate::scalar::{real, Real};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnchorError {
    #[error("anchor grid is {expected} boxes, got {got}")]
    GridSizeMismatch { expected: usize, got: usize },
    #[error("foreground threshold {fg} must be >= background threshold {bg}")]
    InvalidThresholds { fg: f64, bg: f64 },
    #[error("stride must be positive")]
    ZeroStride,
}

/// One anchor per spatial location of a feature map.
///
/// Boxes are stored row-major (`y * w + x`), matching feature-grid layout.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorMap<F = f64> {
    h: usize,
    w: usize,
    stride: u32,
    boxes: Vec<OrientedBox<F>>,
}

impl<F: Real> AnchorMap<F> {
    pub fn from_boxes(
        h: usize,
        w: usize,
        stride: u32,
        boxes: Vec<OrientedBox<F>>,
    ) -> Result<Self, AnchorError> {
        if stride == 0 {
            return Err(AnchorError::ZeroStride);
        }
        if boxes.len() != h * w {
            return Err(AnchorError::GridSizeMismatch {
                expected: h * w,
                got: boxes.len(),
            });
        }
        Ok(AnchorMap { h, w, stride, boxes })
    }

    /// Axis-aligned squares of side `k * stride` centered exactly on
    /// `stride * (x, y)`. With a `k x k` sampling grid these anchors
    /// reproduce the taps of a standard convolution.
    pub fn identity(h: usize, w: usize, k: usize, stride: u32) -> Self {
        let s = real::<F>(stride as f64);
        let side = s * real::<F>(k as f64);
        let mut boxes = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                boxes.push(
                    OrientedBox::new(
                        s * real::<F>(x as f64),
                        s * real::<F>(y as f64),
                        side,
                        side,
                        F::zero(),
                    )
                    .expect("positive sides"),
                );
            }
        }
        AnchorMap { h, w, stride, boxes }
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn stride(&self) -> u32 {
        self.stride
    }

    pub fn get(&self, y: usize, x: usize) -> &OrientedBox<F> {
        &self.boxes[y * self.w + x]
    }

    /// Row-major anchor list.
    pub fn boxes(&self) -> &[OrientedBox<F>] {
        &self.boxes
    }
}

/// Feature pyramid description: one stride per level plus the square anchor
/// side expressed as a multiple of the stride.
#[derive(Debug, Clone, PartialEq)]
pub struct PyramidSpec<F = f64> {
    pub strides: Vec<u32>,
    pub scale: F,
}

impl<F: Real> Default for PyramidSpec<F> {
    /// Five levels with strides 8..128 and anchor side `4 * stride`,
    /// i.e. anchor sizes 32, 64, 128, 256, 512.
    fn default() -> Self {
        PyramidSpec {
            strides: vec![8, 16, 32, 64, 128],
            scale: real::<F>(4.0),
        }
    }
}

/// One square, axis-aligned anchor per location: center
/// `stride * (x + 1/2, y + 1/2)`, side `scale * stride`, angle zero.
pub fn generate_anchors<F: Real>(
    stride: u32,
    scale: F,
    h: usize,
    w: usize,
) -> Result<AnchorMap<F>, AnchorError> {
    if stride == 0 {
        return Err(AnchorError::ZeroStride);
    }
    let s = real::<F>(stride as f64);
    let side = scale * s;
    let half = real::<F>(0.5);
    let mut boxes = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let cx = s * (real::<F>(x as f64) + half);
            let cy = s * (real::<F>(y as f64) + half);
            boxes.push(OrientedBox::new(cx, cy, side, side, F::zero()).expect("positive sides"));
        }
    }
    AnchorMap::from_boxes(h, w, stride, boxes)
}

/// Label assigned to one anchor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnchorLabel {
    /// Matched to the ground-truth box with this index.
    Positive { gt: usize },
    Negative,
    /// Between the thresholds; excluded from every loss.
    Ignore,
}

/// Assignment of every anchor in a scene.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment<F = f64> {
    pub labels: Vec<AnchorLabel>,
    /// Highest IoU of each anchor against any ground-truth box.
    pub max_iou: Vec<F>,
}

impl<F: Real> Assignment<F> {
    pub fn positive_count(&self) -> usize {
        self.labels
            .iter()
            .filter(|l| matches!(l, AnchorLabel::Positive { .. }))
            .count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssignParams<F = f64> {
    /// An anchor is positive when its best IoU is >= `fg`.
    pub fg: F,
    /// An anchor is negative when its best IoU is < `bg`.
    pub bg: F,
    /// Additionally match each ground truth to its best-IoU anchor even
    /// below `fg` (requires a strictly positive IoU).
    pub low_quality_rescue: bool,
}

impl<F: Real> Default for AssignParams<F> {
    fn default() -> Self {
        AssignParams {
            fg: real::<F>(0.5),
            bg: real::<F>(0.4),
            low_quality_rescue: true,
        }
    }
}

/// Assigns every anchor a label by rotated IoU against the ground truth.
///
/// Ties in an anchor's best ground truth resolve to the lowest index, as
/// does the best anchor of a ground truth during rescue; when several
/// ground truths rescue the same anchor the highest index wins (they are
/// processed in order). With no ground truth every anchor is negative.
pub fn assign<F: Real>(
    anchors: &[OrientedBox<F>],
    gts: &[OrientedBox<F>],
    params: &AssignParams<F>,
) -> Result<Assignment<F>, AnchorError> {
    if params.bg > params.fg {
        return Err(AnchorError::InvalidThresholds {
            fg: params.fg.to_f64().unwrap_or(f64::NAN),
            bg: params.bg.to_f64().unwrap_or(f64::NAN),
        });
    }
    let mut labels = vec![AnchorLabel::Negative; anchors.len()];
    let mut max_iou = vec![F::zero(); anchors.len()];
    if gts.is_empty() {
        return Ok(Assignment { labels, max_iou });
    }

    let mut iou = vec![F::zero(); anchors.len() * gts.len()];
    for (ai, a) in anchors.iter().enumerate() {
        for (gi, g) in gts.iter().enumerate() {
            iou[ai * gts.len() + gi] = rotated_iou(a, g);
        }
    }

    for ai in 0..anchors.len() {
        let row = &iou[ai * gts.len()..(ai + 1) * gts.len()];
        let mut best = F::zero();
        let mut best_gt = None;
        for (gi, &v) in row.iter().enumerate() {
            if best_gt.is_none() || v > best {
                best = v;
                best_gt = Some(gi);
            }
        }
        max_iou[ai] = best;
        labels[ai] = if best >= params.fg {
            AnchorLabel::Positive {
                gt: best_gt.expect("non-empty gts"),
            }
        } else if best < params.bg {
            AnchorLabel::Negative
        } else {
            AnchorLabel::Ignore
        };
    }

    if params.low_quality_rescue {
        for gi in 0..gts.len() {
            let mut best = F::zero();
            let mut best_anchor = None;
            for ai in 0..anchors.len() {
                let v = iou[ai * gts.len() + gi];
                if v > best {
                    best = v;
                    best_anchor = Some(ai);
                }
            }
            if let Some(ai) = best_anchor {
                labels[ai] = AnchorLabel::Positive { gt: gi };
            }
        }
    }

    Ok(Assignment { labels, max_iou })
}
