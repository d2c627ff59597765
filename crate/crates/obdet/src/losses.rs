//! Scalar reference evaluation of the detection objective: focal
//! classification loss, smooth-L1 regression loss over box deltas, and the
//! combined two-stage total.

use thiserror::Error;

use crate::anchors::AnchorLabel;
use crate::boxcodec::{encode, BoxDelta};
use crate::geometry::OrientedBox;
use crate::scalar::{real, Real};

/// Probabilities are clamped into `[CLAMP, 1 - CLAMP]` before taking logs.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LossError {
    #[error("{what}: expected {expected} entries, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("class {class} out of range for {num_classes} classes")]
    ClassOutOfRange { class: usize, num_classes: usize },
    #[error("label references ground-truth {gt} but only {count} exist")]
    GtOutOfRange { gt: usize, count: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FocalParams<F = f64> {
    pub alpha: F,
    pub gamma: F,
}

impl<F: Real> Default for FocalParams<F> {
    fn default() -> Self {
        FocalParams {
            alpha: real::<F>(0.25),
            gamma: real::<F>(2.0),
        }
    }
}

/// Focal loss of one predicted probability: `-a_t (1 - p_t)^gamma ln(p_t)`
/// with `p_t = p` and `a_t = alpha` for positives, `p_t = 1 - p` and
/// `a_t = 1 - alpha` for negatives. `p` is clamped away from 0 and 1, so
/// any finite input is safe.
pub fn focal_loss<F: Real>(p: F, is_positive: bool, params: &FocalParams<F>) -> F {
    let lo = real::<F>(PROB_CLAMP);
    let hi = F::one() - lo;
    let p = p.max(lo).min(hi);
    let (p_t, a_t) = if is_positive {
        (p, params.alpha)
    } else {
        (F::one() - p, F::one() - params.alpha)
    };
    -a_t * (F::one() - p_t).powf(params.gamma) * p_t.ln()
}

/// Smooth-L1 distance between two delta vectors, summed over the five
/// components: `0.5 d^2 / beta` inside `|d| < beta`, `|d| - beta / 2`
/// outside. The branches agree at `|d| = beta`.
pub fn smooth_l1<F: Real>(pred: &BoxDelta<F>, target: &BoxDelta<F>, beta: F) -> F {
    let half = real::<F>(0.5);
    let mut total = F::zero();
    for (p, t) in pred.components().iter().zip(target.components()) {
        let d = (*p - t).abs();
        total = total
            + if d < beta {
                half * d * d / beta
            } else {
                d - half * beta
            };
    }
    total
}

/// A ground-truth object: its box and category index.
#[derive(Debug, Clone, PartialEq)]
pub struct GtObject<F = f64> {
    pub bbox: OrientedBox<F>,
    pub class: usize,
}

/// Predictions and assignment for one head: per-anchor class
/// probabilities (one per category) and regressed deltas, alongside the
/// anchors the deltas are relative to and their assigned labels.
#[derive(Debug, Clone, Copy)]
pub struct BranchData<'a, F = f64> {
    pub anchors: &'a [OrientedBox<F>],
    pub labels: &'a [AnchorLabel],
    pub class_probs: &'a [Vec<F>],
    pub deltas: &'a [BoxDelta<F>],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MultitaskParams<F = f64> {
    /// Weight of the refinement-stage term.
    pub lambda: F,
    pub focal: FocalParams<F>,
    pub smooth_l1_beta: F,
}

impl<F: Real> Default for MultitaskParams<F> {
    fn default() -> Self {
        MultitaskParams {
            lambda: F::one(),
            focal: FocalParams::default(),
            smooth_l1_beta: real::<F>(1.0 / 9.0),
        }
    }
}

/// Raw loss sums per stage and term, their positive counts, and the
/// normalized total. The stored fields always satisfy
/// `total = (fam_cls + fam_reg) / max(n_fam_pos, 1)
///        + lambda * (odm_cls + odm_reg) / max(n_odm_pos, 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown<F = f64> {
    pub fam_cls: F,
    pub fam_reg: F,
    pub odm_cls: F,
    pub odm_reg: F,
    pub n_fam_pos: usize,
    pub n_odm_pos: usize,
    pub total: F,
    /// True when neither stage had any predictions.
    pub empty: bool,
}

/// Sums `terms` pairwise (splitting in halves recursively), which fixes
/// the reduction tree independent of any chunking a caller might use.
pub fn pairwise_sum<F: Real>(terms: &[F]) -> F {
    match terms.len() {
        0 => F::zero(),
        1 => terms[0],
        2 => terms[0] + terms[1],
        n => {
            let mid = n / 2;
            pairwise_sum(&terms[..mid]) + pairwise_sum(&terms[mid..])
        }
    }
}

fn branch_terms<F: Real>(
    branch: &BranchData<'_, F>,
    gts: &[GtObject<F>],
    num_classes: usize,
    params: &MultitaskParams<F>,
) -> Result<(F, F, usize), LossError> {
    let n = branch.anchors.len();
    for (what, got) in [
        ("labels", branch.labels.len()),
        ("class_probs", branch.class_probs.len()),
        ("deltas", branch.deltas.len()),
    ] {
        if got != n {
            return Err(LossError::LengthMismatch {
                what,
                expected: n,
                got,
            });
        }
    }

    let mut cls_terms = Vec::new();
    let mut reg_terms = Vec::new();
    let mut positives = 0usize;
    for i in 0..n {
        let label = branch.labels[i];
        if label == AnchorLabel::Ignore {
            continue;
        }
        let probs = &branch.class_probs[i];
        if probs.len() != num_classes {
            return Err(LossError::LengthMismatch {
                what: "class_probs row",
                expected: num_classes,
                got: probs.len(),
            });
        }
        let gt = match label {
            AnchorLabel::Positive { gt } => {
                let g = gts.get(gt).ok_or(LossError::GtOutOfRange {
                    gt,
                    count: gts.len(),
                })?;
                if g.class >= num_classes {
                    return Err(LossError::ClassOutOfRange {
                        class: g.class,
                        num_classes,
                    });
                }
                Some(g)
            }
            _ => None,
        };
        for (c, &p) in probs.iter().enumerate() {
            let is_target = gt.is_some_and(|g| g.class == c);
            cls_terms.push(focal_loss(p, is_target, &params.focal));
        }
        if let Some(g) = gt {
            positives += 1;
            let target = encode(&g.bbox, &branch.anchors[i]);
            reg_terms.push(smooth_l1(&branch.deltas[i], &target, params.smooth_l1_beta));
        }
    }
    Ok((pairwise_sum(&cls_terms), pairwise_sum(&reg_terms), positives))
}

/// Evaluates the full two-stage objective.
///
/// Classification counts every non-ignore anchor (positives against their
/// ground truth's one-hot row, negatives against all-zero); regression
/// counts positives only, with targets re-encoded against each branch's
/// own anchors. Each stage is normalized by its positive count floored at
/// one, and the refinement stage is scaled by `lambda`.
pub fn multitask_loss<F: Real>(
    fam: &BranchData<'_, F>,
    odm: &BranchData<'_, F>,
    gts: &[GtObject<F>],
    num_classes: usize,
    params: &MultitaskParams<F>,
) -> Result<LossBreakdown<F>, LossError> {
    let (fam_cls, fam_reg, n_fam_pos) = branch_terms(fam, gts, num_classes, params)?;
    let (odm_cls, odm_reg, n_odm_pos) = branch_terms(odm, gts, num_classes, params)?;
    let nf = real::<F>(n_fam_pos.max(1) as f64);
    let no = real::<F>(n_odm_pos.max(1) as f64);
    let total = (fam_cls + fam_reg) / nf + params.lambda * (odm_cls + odm_reg) / no;
    Ok(LossBreakdown {
        fam_cls,
        fam_reg,
        odm_cls,
        odm_reg,
        n_fam_pos,
        n_odm_pos,
        total,
        empty: fam.anchors.is_empty() && odm.anchors.is_empty(),
    })
}
