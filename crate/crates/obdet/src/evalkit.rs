//! Detection evaluation: greedy matching of ranked detections against
//! ground truth, precision-recall curves, 11-point and all-point average
//! precision, and multi-threshold mean AP tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::geometry::{rotated_iou, OrientedBox};

/// A detection to be evaluated: which image it belongs to, its box, and
/// its confidence.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredBox {
    pub image: String,
    pub bbox: OrientedBox<f64>,
    pub score: f64,
}

/// One annotated object. Difficult objects are excluded from the ground
/// truth total and detections covering them are ignored rather than
/// penalized.
#[derive(Debug, Clone, PartialEq)]
pub struct GtRecord {
    pub image: String,
    pub bbox: OrientedBox<f64>,
    pub difficult: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum MatchOutcome {
    TruePositive,
    FalsePositive,
    /// Matched a difficult object; counts as neither TP nor FP.
    Ignored,
}

/// Ranked matching outcomes with the running precision and recall at
/// each rank. Recall is non-decreasing along the ranking.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrCurve {
    pub outcomes: Vec<MatchOutcome>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    /// Number of non-difficult ground-truth objects.
    pub gt_count: usize,
}

impl PrCurve {
    pub fn tp_count(&self) -> usize {
        self.outcomes
            .iter()
            .filter(|o| **o == MatchOutcome::TruePositive)
            .count()
    }
}

/// Greedy matching in descending score order (ties keep input order).
///
/// Each detection takes the highest-IoU unmatched non-difficult ground
/// truth of its own image (ties to the lowest index); at or above
/// `iou_thr` that is a true positive. Otherwise, if it overlaps any
/// difficult object at `iou_thr` or more it is ignored; else it is a
/// false positive.
pub fn match_detections(dets: &[ScoredBox], gts: &[GtRecord], iou_thr: f64) -> PrCurve {
    let mut by_image: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, g) in gts.iter().enumerate() {
        by_image.entry(g.image.as_str()).or_default().push(i);
    }
    let gt_count = gts.iter().filter(|g| !g.difficult).count();

    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.partial_cmp(&dets[a].score).expect("finite scores"));

    let mut matched = vec![false; gts.len()];
    let mut outcomes = Vec::with_capacity(dets.len());
    let mut precision = Vec::with_capacity(dets.len());
    let mut recall = Vec::with_capacity(dets.len());
    let (mut tp, mut fp) = (0usize, 0usize);

    for &di in &order {
        let det = &dets[di];
        let candidates = by_image.get(det.image.as_str());
        let mut best_iou = 0.0;
        let mut best_gt = None;
        let mut best_difficult_iou = 0.0;
        if let Some(idxs) = candidates {
            for &gi in idxs {
                let iou = rotated_iou(&det.bbox, &gts[gi].bbox);
                if gts[gi].difficult {
                    if iou > best_difficult_iou {
                        best_difficult_iou = iou;
                    }
                } else if !matched[gi] && iou > best_iou {
                    best_iou = iou;
                    best_gt = Some(gi);
                }
            }
        }
        // best_gt is only set on strictly positive IoU, so a threshold of
        // zero still requires actual overlap.
        let outcome = if let Some(gi) = best_gt.filter(|_| best_iou >= iou_thr) {
            matched[gi] = true;
            MatchOutcome::TruePositive
        } else if best_difficult_iou >= iou_thr && best_difficult_iou > 0.0 {
            MatchOutcome::Ignored
        } else {
            MatchOutcome::FalsePositive
        };
        match outcome {
            MatchOutcome::TruePositive => tp += 1,
            MatchOutcome::FalsePositive => fp += 1,
            MatchOutcome::Ignored => {}
        }
        outcomes.push(outcome);
        precision.push(if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 });
        recall.push(if gt_count == 0 { 0.0 } else { tp as f64 / gt_count as f64 });
    }

    PrCurve {
        outcomes,
        precision,
        recall,
        gt_count,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ApMetric {
    /// Mean of max-interpolated precision at recalls 0, 0.1, ..., 1.0.
    Voc07,
    /// Area under the max-interpolated precision envelope.
    Voc12,
}

impl ApMetric {
    pub fn name(self) -> &'static str {
        match self {
            ApMetric::Voc07 => "voc07",
            ApMetric::Voc12 => "voc12",
        }
    }
}

/// An AP value; `defined` is false when the class had no ground truth,
/// in which case `value` is 0 and the class is excluded from means.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ApResult {
    pub value: f64,
    pub defined: bool,
}

pub fn average_precision(pr: &PrCurve, metric: ApMetric) -> ApResult {
    if pr.gt_count == 0 {
        return ApResult {
            value: 0.0,
            defined: false,
        };
    }
    let value = match metric {
        ApMetric::Voc07 => {
            let mut acc = 0.0;
            for t in 0..=10 {
                let r = t as f64 / 10.0;
                let mut best = 0.0;
                for i in 0..pr.recall.len() {
                    if pr.recall[i] >= r && pr.precision[i] > best {
                        best = pr.precision[i];
                    }
                }
                acc += best;
            }
            acc / 11.0
        }
        ApMetric::Voc12 => {
            let n = pr.recall.len();
            let mut mrec = Vec::with_capacity(n + 2);
            let mut mpre = Vec::with_capacity(n + 2);
            mrec.push(0.0);
            mpre.push(0.0);
            mrec.extend_from_slice(&pr.recall);
            mpre.extend_from_slice(&pr.precision);
            mrec.push(1.0);
            mpre.push(0.0);
            for i in (0..mpre.len() - 1).rev() {
                if mpre[i + 1] > mpre[i] {
                    mpre[i] = mpre[i + 1];
                }
            }
            let mut acc = 0.0;
            for i in 0..mrec.len() - 1 {
                if mrec[i + 1] != mrec[i] {
                    acc += (mrec[i + 1] - mrec[i]) * mpre[i + 1];
                }
            }
            acc
        }
    };
    ApResult {
        value,
        defined: true,
    }
}

/// The ten IoU thresholds 0.5, 0.55, ..., 0.95 used for threshold-swept
/// evaluation.
pub const COCO_THRESHOLDS: [f64; 10] = [0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95];

/// Per-class AP column of an evaluation table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassEval {
    pub class: String,
    /// One entry per threshold, same order as the report's `thresholds`.
    pub ap: Vec<ApResult>,
}

/// Full evaluation: AP per class and threshold, the unweighted class
/// mean per threshold (classes without ground truth excluded), and the
/// mean of those means.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub metric: ApMetric,
    pub thresholds: Vec<f64>,
    pub classes: Vec<ClassEval>,
    pub map_per_threshold: Vec<f64>,
    pub mean_over_thresholds: f64,
}

impl EvalReport {
    /// Tab-separated table: one row per class, one `mAP` row, and (for
    /// multi-threshold sweeps) a final `mAP@mean` row. Undefined APs
    /// print as `n/a`.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("class");
        for t in &self.thresholds {
            let _ = write!(s, "\tap@{:.2}", t);
        }
        s.push('\n');
        for ce in &self.classes {
            s.push_str(&ce.class);
            for ap in &ce.ap {
                if ap.defined {
                    let _ = write!(s, "\t{:.6}", ap.value);
                } else {
                    s.push_str("\tn/a");
                }
            }
            s.push('\n');
        }
        s.push_str("mAP");
        for m in &self.map_per_threshold {
            let _ = write!(s, "\t{:.6}", m);
        }
        s.push('\n');
        if self.thresholds.len() > 1 {
            let _ = writeln!(s, "mAP@mean\t{:.6}", self.mean_over_thresholds);
        }
        s
    }
}

/// Evaluates every class at every threshold. The class set is the union
/// of the two maps' keys, in sorted order.
pub fn map_eval(
    dets: &BTreeMap<String, Vec<ScoredBox>>,
    gts: &BTreeMap<String, Vec<GtRecord>>,
    thresholds: &[f64],
    metric: ApMetric,
) -> EvalReport {
    static EMPTY_DETS: Vec<ScoredBox> = Vec::new();
    static EMPTY_GTS: Vec<GtRecord> = Vec::new();
    let mut names: Vec<&String> = dets.keys().chain(gts.keys()).collect();
    names.sort();
    names.dedup();

    let mut classes = Vec::with_capacity(names.len());
    for name in &names {
        let d = dets.get(*name).unwrap_or(&EMPTY_DETS);
        let g = gts.get(*name).unwrap_or(&EMPTY_GTS);
        let ap = thresholds
            .iter()
            .map(|&thr| average_precision(&match_detections(d, g, thr), metric))
            .collect();
        classes.push(ClassEval {
            class: (*name).clone(),
            ap,
        });
    }

    let map_per_threshold: Vec<f64> = (0..thresholds.len())
        .map(|ti| {
            let defined: Vec<f64> = classes
                .iter()
                .filter(|c| c.ap[ti].defined)
                .map(|c| c.ap[ti].value)
                .collect();
            if defined.is_empty() {
                0.0
            } else {
                defined.iter().sum::<f64>() / defined.len() as f64
            }
        })
        .collect();
    let mean_over_thresholds = if map_per_threshold.is_empty() {
        0.0
    } else {
        map_per_threshold.iter().sum::<f64>() / map_per_threshold.len() as f64
    };

    EvalReport {
        metric,
        thresholds: thresholds.to_vec(),
        classes,
        map_per_threshold,
        mean_over_thresholds,
    }
}
