//! Inference-side selection: score filtering with top-k truncation and
//! greedy rotated non-maximum suppression.

use crate::geometry::{rotated_iou, OrientedBox};
use crate::scalar::{real, Real};

/// One scored, classified box.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection<F = f64> {
    pub bbox: OrientedBox<F>,
    pub class: usize,
    pub score: F,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TopkParams<F = f64> {
    pub k: usize,
    pub score_thr: F,
}

impl<F: Real> Default for TopkParams<F> {
    fn default() -> Self {
        TopkParams {
            k: 2000,
            score_thr: real::<F>(0.05),
        }
    }
}

impl<F: Real> TopkParams<F> {
    /// Variant used between cascade stages: keep everything above zero
    /// score so the refinement stage sees the full candidate set.
    pub fn unfiltered(k: usize) -> Self {
        TopkParams {
            k,
            score_thr: F::zero(),
        }
    }
}

/// Drops detections scoring below the threshold, sorts the rest by
/// descending score (stable: ties keep their input order), and truncates
/// to `k`.
pub fn select_topk<F: Real>(dets: &[Detection<F>], params: &TopkParams<F>) -> Vec<Detection<F>> {
    let mut keep: Vec<&Detection<F>> = dets.iter().filter(|d| d.score >= params.score_thr).collect();
    keep.sort_by(|a, b| b.score.partial_cmp(&a.score).expect("finite scores"));
    keep.into_iter().take(params.k).cloned().collect()
}

/// Greedy suppression: visit detections in descending score (ties by
/// lower input index), keep each one that does not overlap an already
/// kept detection above `iou_thr`, and return the kept indices into
/// `dets` in visit order. With `per_class` only same-class pairs
/// suppress each other.
pub fn rotated_nms_indices<F: Real>(
    dets: &[Detection<F>],
    iou_thr: F,
    per_class: bool,
) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.partial_cmp(&dets[a].score).expect("finite scores"));
    let mut kept: Vec<usize> = Vec::new();
    'cand: for &i in &order {
        for &j in &kept {
            if per_class && dets[i].class != dets[j].class {
                continue;
            }
            if rotated_iou(&dets[i].bbox, &dets[j].bbox) > iou_thr {
                continue 'cand;
            }
        }
        kept.push(i);
    }
    kept
}

/// [`rotated_nms_indices`], materialized: the surviving detections in
/// descending score order.
pub fn rotated_nms<F: Real>(dets: &[Detection<F>], iou_thr: F, per_class: bool) -> Vec<Detection<F>> {
    rotated_nms_indices(dets, iou_thr, per_class)
        .into_iter()
        .map(|i| dets[i].clone())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(cx: f64, cy: f64, w: f64, h: f64, theta: f64, class: usize, score: f64) -> Detection<f64> {
        Detection {
            bbox: OrientedBox::new(cx, cy, w, h, theta).unwrap(),
            class,
            score,
        }
    }

    #[test]
    fn topk_filters_sorts_and_truncates() {
        let dets = vec![
            det(0.0, 0.0, 2.0, 1.0, 0.0, 0, 0.3),
            det(9.0, 0.0, 2.0, 1.0, 0.0, 0, 0.9),
            det(0.0, 9.0, 2.0, 1.0, 0.0, 0, 0.01),
            det(9.0, 9.0, 2.0, 1.0, 0.0, 0, 0.6),
        ];
        let out = select_topk(&dets, &TopkParams::default());
        let scores: Vec<f64> = out.iter().map(|d| d.score).collect();
        assert_eq!(scores, vec![0.9, 0.6, 0.3]);
        let out2 = select_topk(
            &dets,
            &TopkParams {
                k: 2,
                score_thr: 0.05,
            },
        );
        assert_eq!(out2.len(), 2);
        assert_eq!(out2[1].score, 0.6);
    }

    #[test]
    fn topk_threshold_is_inclusive_and_k_zero_is_empty() {
        let dets = vec![det(0.0, 0.0, 2.0, 1.0, 0.0, 0, 0.05)];
        assert_eq!(select_topk(&dets, &TopkParams::default()).len(), 1);
        assert!(select_topk(&dets, &TopkParams { k: 0, score_thr: 0.0 }).is_empty());
    }

    #[test]
    fn topk_ties_keep_input_order() {
        let dets = vec![
            det(0.0, 0.0, 2.0, 1.0, 0.0, 0, 0.5),
            det(1.0, 0.0, 2.0, 1.0, 0.0, 1, 0.5),
            det(2.0, 0.0, 2.0, 1.0, 0.0, 2, 0.5),
        ];
        let out = select_topk(&dets, &TopkParams { k: 10, score_thr: 0.0 });
        let classes: Vec<usize> = out.iter().map(|d| d.class).collect();
        assert_eq!(classes, vec![0, 1, 2]);
    }

    #[test]
    fn unfiltered_params_keep_zero_scores() {
        let dets = vec![det(0.0, 0.0, 2.0, 1.0, 0.0, 0, 0.0)];
        assert_eq!(select_topk(&dets, &TopkParams::unfiltered(5)).len(), 1);
    }

    #[test]
    fn nms_keeps_highest_of_identical_pair() {
        let dets = vec![
            det(0.0, 0.0, 4.0, 2.0, 0.3, 0, 0.8),
            det(0.0, 0.0, 4.0, 2.0, 0.3, 0, 0.9),
        ];
        let out = rotated_nms(&dets, 0.5, true);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].score, 0.9);
    }

    #[test]
    fn nms_keeps_disjoint_boxes() {
        let dets = vec![
            det(0.0, 0.0, 2.0, 1.0, 0.0, 0, 0.9),
            det(50.0, 0.0, 2.0, 1.0, 0.0, 0, 0.8),
            det(0.0, 50.0, 2.0, 1.0, 0.0, 0, 0.7),
        ];
        assert_eq!(rotated_nms(&dets, 0.5, true).len(), 3);
    }

    #[test]
    fn nms_suppression_is_strictly_above_threshold() {
        // 3x1 boxes offset by 1 have IoU exactly 0.5.
        let dets = vec![
            det(0.0, 0.0, 3.0, 1.0, 0.0, 0, 0.9),
            det(1.0, 0.0, 3.0, 1.0, 0.0, 0, 0.8),
        ];
        assert_eq!(rotated_nms(&dets, 0.5, true).len(), 2);
        assert_eq!(rotated_nms(&dets, 0.49, true).len(), 1);
    }

    #[test]
    fn nms_per_class_ignores_other_classes() {
        let dets = vec![
            det(0.0, 0.0, 4.0, 2.0, 0.0, 0, 0.9),
            det(0.0, 0.0, 4.0, 2.0, 0.0, 1, 0.8),
        ];
        assert_eq!(rotated_nms(&dets, 0.5, true).len(), 2);
        assert_eq!(rotated_nms(&dets, 0.5, false).len(), 1);
    }

    #[test]
    fn nms_ties_break_by_input_index() {
        let dets = vec![
            det(0.0, 0.0, 4.0, 2.0, 0.0, 0, 0.9),
            det(0.0, 0.0, 4.0, 2.0, 0.0, 0, 0.9),
        ];
        let kept = rotated_nms_indices(&dets, 0.5, true);
        assert_eq!(kept, vec![0]);
    }

    #[test]
    fn nms_output_is_sorted_and_a_subset() {
        let dets: Vec<Detection<f64>> = (0..20)
            .map(|i| {
                det(
                    (i % 5) as f64 * 1.5,
                    (i / 5) as f64 * 1.5,
                    3.0,
                    2.0,
                    0.1 * i as f64,
                    i % 2,
                    (i as f64 * 0.37).fract(),
                )
            })
            .collect();
        let kept = rotated_nms_indices(&dets, 0.3, true);
        for w in kept.windows(2) {
            assert!(dets[w[0]].score >= dets[w[1]].score);
        }
        let out = rotated_nms(&dets, 0.3, true);
        for d in &out {
            assert!(dets.iter().any(|o| o == d));
        }
    }

    #[test]
    fn nms_is_idempotent() {
        let dets: Vec<Detection<f64>> = (0..30)
            .map(|i| {
                det(
                    ((i * 7) % 11) as f64,
                    ((i * 3) % 7) as f64,
                    4.0,
                    2.0,
                    0.2 * (i % 5) as f64,
                    0,
                    ((i as f64) * 0.61).fract(),
                )
            })
            .collect();
        let once = rotated_nms(&dets, 0.4, true);
        let twice = rotated_nms(&once, 0.4, true);
        assert_eq!(once, twice);
    }

    #[test]
    fn nms_no_surviving_pair_overlaps_above_threshold() {
        let dets: Vec<Detection<f64>> = (0..40)
            .map(|i| {
                det(
                    ((i * 13) % 9) as f64 * 0.8,
                    ((i * 5) % 8) as f64 * 0.8,
                    3.0,
                    1.5,
                    0.15 * (i % 7) as f64,
                    i % 3,
                    ((i as f64) * 0.43).fract(),
                )
            })
            .collect();
        let out = rotated_nms(&dets, 0.35, true);
        for (a, da) in out.iter().enumerate() {
            for db in &out[a + 1..] {
                if da.class == db.class {
                    assert!(rotated_iou(&da.bbox, &db.bbox) <= 0.35 + 1e-12);
                }
            }
        }
    }

    // Greedy suppression is not monotone in the threshold. Four unit
    // squares: A sits above B; C and D flank B. At a loose threshold B is
    // suppressed by A, freeing C and D (3 survivors). Tightening the
    // threshold lets B survive, and B then suppresses both C and D
    // (2 survivors).
    #[test]
    fn raising_nms_threshold_can_reduce_survivors() {
        let dets = vec![
            det(0.0, 0.25, 1.0, 1.0, 0.0, 0, 0.9),        // A
            det(0.0, 0.0, 1.0, 1.0, 0.0, 0, 0.8),         // B
            det(-3.0 / 17.0, 0.0, 1.0, 1.0, 0.0, 0, 0.7), // C
            det(3.0 / 17.0, 0.0, 1.0, 1.0, 0.0, 0, 0.6),  // D
        ];
        // iou(A, B) = 0.6, iou(B, C) = iou(B, D) = 0.7, iou(A, C) ~ 0.46.
        assert_eq!(rotated_nms_indices(&dets, 0.5, true), vec![0, 2, 3]);
        assert_eq!(rotated_nms_indices(&dets, 0.65, true), vec![0, 1]);
    }
}
