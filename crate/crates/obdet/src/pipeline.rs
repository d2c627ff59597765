//! Large-image orchestration: tiling plans, chip-to-global mapping,
//! cross-chip detection merging, a deterministic synthetic detector for
//! end-to-end tests, and the head-forward composition exercising the
//! alignment and orientation stages together.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::anchors::{AnchorError, AnchorMap};
use crate::boxcodec::{decode, BoxDelta};
use crate::featops::{align_conv, conv2d_ref, offset_field, ConvKernel, FeatureGrid, FeatopsError};
use crate::geometry::{GeometryError, OrientedBox};
use crate::losses::GtObject;
use crate::orientation::{
    arf_conv, orientation_pool, OrientationError, OrientedFeatureGrid, RotatingFilter,
};
use crate::postprocess::{rotated_nms, Detection};

/// Merge suppression is tighter than per-image suppression because
/// duplicates from overlapping chips are near-identical.
pub const DEFAULT_MERGE_IOU: f64 = 0.1;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("image dimensions must be positive, got {w}x{h}")]
    EmptyImage { w: u32, h: u32 },
    #[error("chip size must be positive")]
    ZeroChip,
    #[error("stride {stride} must be in 1..={chip}")]
    InvalidStride { stride: u32, chip: u32 },
    #[error("plan line {line}: {msg}")]
    PlanParse { line: usize, msg: String },
    #[error("{expected} anchor maps for {got} feature levels")]
    LevelCountMismatch { expected: usize, got: usize },
    #[error("level {level}: feature grid is {gh}x{gw}, anchor map is {ah}x{aw}")]
    GridAnchorMismatch {
        level: usize,
        gh: usize,
        gw: usize,
        ah: usize,
        aw: usize,
    },
    #[error("level {level}: expected {expected} feature channels, got {got}")]
    ChannelMismatch {
        level: usize,
        expected: usize,
        got: usize,
    },
    #[error("head config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Featops(#[from] FeatopsError),
    #[error(transparent)]
    Orientation(#[from] OrientationError),
    #[error(transparent)]
    Anchors(#[from] AnchorError),
}

/// One crop window in global pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub x0: u32,
    pub y0: u32,
    pub w: u32,
    pub h: u32,
}

impl Window {
    /// Half-open ownership test: is a global point inside this window?
    pub fn contains_center(&self, cx: f64, cy: f64) -> bool {
        cx >= self.x0 as f64
            && cx < (self.x0 + self.w) as f64
            && cy >= self.y0 as f64
            && cy < (self.y0 + self.h) as f64
    }
}

/// A set of windows jointly covering an image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TilePlan {
    pub image_w: u32,
    pub image_h: u32,
    pub chip: u32,
    pub stride: u32,
    pub windows: Vec<Window>,
}

fn axis_origins(dim: u32, chip: u32, stride: u32) -> Vec<u32> {
    if dim <= chip {
        return vec![0];
    }
    let mut origins = Vec::new();
    let mut o = 0u64;
    while o + chip as u64 - 1 < dim as u64 - 1 {
        // Window starting at o does not reach the last pixel yet.
        if o + (chip as u64) < dim as u64 {
            origins.push(o as u32);
            o += stride as u64;
        } else {
            break;
        }
    }
    origins.push(dim - chip);
    origins.dedup();
    origins
}

/// Tiles an image with fixed-size square chips at a regular stride, the
/// final row and column clamped to the image boundary. An image no larger
/// than the chip yields a single whole-image window.
pub fn plan_tiles(
    image_w: u32,
    image_h: u32,
    chip: u32,
    stride: u32,
) -> Result<TilePlan, PipelineError> {
    if image_w == 0 || image_h == 0 {
        return Err(PipelineError::EmptyImage {
            w: image_w,
            h: image_h,
        });
    }
    if chip == 0 {
        return Err(PipelineError::ZeroChip);
    }
    if stride == 0 || stride > chip {
        return Err(PipelineError::InvalidStride { stride, chip });
    }
    let xs = axis_origins(image_w, chip, stride);
    let ys = axis_origins(image_h, chip, stride);
    let ww = image_w.min(chip);
    let wh = image_h.min(chip);
    let mut windows = Vec::with_capacity(xs.len() * ys.len());
    for &y0 in &ys {
        for &x0 in &xs {
            windows.push(Window { x0, y0, w: ww, h: wh });
        }
    }
    Ok(TilePlan {
        image_w,
        image_h,
        chip,
        stride,
        windows,
    })
}

impl TilePlan {
    /// Exact coverage check by interval arithmetic: slice the image into
    /// elementary horizontal slabs at window edges and verify the windows
    /// spanning each slab cover the full width.
    pub fn covers_image(&self) -> bool {
        let mut ys: Vec<u64> = vec![0, self.image_h as u64];
        for w in &self.windows {
            ys.push(w.y0 as u64);
            ys.push(w.y0 as u64 + w.h as u64);
        }
        ys.sort_unstable();
        ys.dedup();
        for slab in ys.windows(2) {
            let (a, b) = (slab[0], slab[1]);
            if a >= self.image_h as u64 || b > self.image_h as u64 {
                continue;
            }
            let mut spans: Vec<(u64, u64)> = self
                .windows
                .iter()
                .filter(|w| (w.y0 as u64) <= a && w.y0 as u64 + w.h as u64 >= b)
                .map(|w| (w.x0 as u64, w.x0 as u64 + w.w as u64))
                .collect();
            spans.sort_unstable();
            let mut reach = 0u64;
            for (x0, x1) in spans {
                if x0 > reach {
                    return false;
                }
                reach = reach.max(x1);
            }
            if reach < self.image_w as u64 {
                return false;
            }
        }
        true
    }

    /// Plan file: header `W H chip stride`, then one `x0 y0 w h` line per
    /// window.
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{} {} {} {}\n",
            self.image_w, self.image_h, self.chip, self.stride
        );
        for w in &self.windows {
            s.push_str(&format!("{} {} {} {}\n", w.x0, w.y0, w.w, w.h));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<TilePlan, PipelineError> {
        let parse4 = |line_no: usize, line: &str| -> Result<[u32; 4], PipelineError> {
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 4 {
                return Err(PipelineError::PlanParse {
                    line: line_no,
                    msg: format!("expected 4 fields, got {}", fields.len()),
                });
            }
            let mut out = [0u32; 4];
            for (i, f) in fields.iter().enumerate() {
                out[i] = f.parse().map_err(|_| PipelineError::PlanParse {
                    line: line_no,
                    msg: format!("not an unsigned integer: {f:?}"),
                })?;
            }
            Ok(out)
        };
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (hdr_no, hdr) = lines.next().ok_or(PipelineError::PlanParse {
            line: 1,
            msg: "empty plan".to_string(),
        })?;
        let [image_w, image_h, chip, stride] = parse4(hdr_no + 1, hdr)?;
        let mut windows = Vec::new();
        for (no, line) in lines {
            let [x0, y0, w, h] = parse4(no + 1, line)?;
            if x0 as u64 + w as u64 > image_w as u64 || y0 as u64 + h as u64 > image_h as u64 {
                return Err(PipelineError::PlanParse {
                    line: no + 1,
                    msg: format!("window {x0} {y0} {w} {h} exceeds the image"),
                });
            }
            windows.push(Window { x0, y0, w, h });
        }
        Ok(TilePlan {
            image_w,
            image_h,
            chip,
            stride,
            windows,
        })
    }
}

/// Translates a chip-local detection into global coordinates.
pub fn chip_to_global(det: &Detection<f64>, window: &Window) -> Detection<f64> {
    Detection {
        bbox: det.bbox.translated(window.x0 as f64, window.y0 as f64),
        class: det.class,
        score: det.score,
    }
}

/// Maps every chip's detections to global coordinates and collapses
/// cross-chip duplicates with per-class suppression. Results are
/// independent of chip order: everything is sorted canonically before
/// the greedy pass.
pub fn merge_detections(
    per_chip: &[(Window, Vec<Detection<f64>>)],
    nms_thr: f64,
) -> Vec<Detection<f64>> {
    let mut global: Vec<Detection<f64>> = per_chip
        .iter()
        .flat_map(|(w, dets)| dets.iter().map(|d| chip_to_global(d, w)))
        .collect();
    global.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .expect("finite scores")
            .then(a.class.cmp(&b.class))
            .then(a.bbox.cx().partial_cmp(&b.bbox.cx()).expect("finite"))
            .then(a.bbox.cy().partial_cmp(&b.bbox.cy()).expect("finite"))
            .then(a.bbox.w().partial_cmp(&b.bbox.w()).expect("finite"))
            .then(a.bbox.h().partial_cmp(&b.bbox.h()).expect("finite"))
            .then(a.bbox.theta().partial_cmp(&b.bbox.theta()).expect("finite"))
    });
    rotated_nms(&global, nms_thr, true)
}

/// Bounded perturbation magnitudes for the synthetic detector: absolute
/// center shift in pixels, relative side scaling, absolute angle shift in
/// radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JitterSpec {
    pub center: f64,
    pub sides: f64,
    pub angle: f64,
}

impl JitterSpec {
    pub fn none() -> Self {
        JitterSpec {
            center: 0.0,
            sides: 0.0,
            angle: 0.0,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.center == 0.0 && self.sides == 0.0 && self.angle == 0.0
    }
}

/// Stands in for a trained detector on one chip: every ground truth whose
/// center falls inside the window (half-open) is reported in chip-local
/// coordinates, perturbed within the jitter bounds, with a score that
/// decreases with the worst relative perturbation (1.0 at zero jitter,
/// at least 0.5). Deterministic in (inputs, seed).
pub fn simulate_chip_detections(
    gts: &[GtObject<f64>],
    window: &Window,
    jitter: &JitterSpec,
    seed: u64,
) -> Vec<Detection<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for gt in gts {
        if !window.contains_center(gt.bbox.cx(), gt.bbox.cy()) {
            continue;
        }
        let local = gt.bbox.translated(-(window.x0 as f64), -(window.y0 as f64));
        if jitter.is_zero() {
            out.push(Detection {
                bbox: local,
                class: gt.class,
                score: 1.0,
            });
            continue;
        }
        let mut worst = 0.0f64;
        let mut draw = |bound: f64| -> f64 {
            if bound == 0.0 {
                return 0.0;
            }
            let v = rng.gen_range(-bound..=bound);
            worst = worst.max((v / bound).abs());
            v
        };
        let dcx = draw(jitter.center);
        let dcy = draw(jitter.center);
        let dw = draw(jitter.sides);
        let dh = draw(jitter.sides);
        let dt = draw(jitter.angle);
        let bbox = OrientedBox::new(
            local.cx() + dcx,
            local.cy() + dcy,
            local.w() * (1.0 + dw),
            local.h() * (1.0 + dh),
            local.theta() + dt,
        )
        .expect("bounded jitter keeps sides positive");
        out.push(Detection {
            bbox,
            class: gt.class,
            score: 1.0 - 0.5 * worst,
        });
    }
    out
}

/// Shape configuration of the two-stage head.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadConfig {
    /// Feature channels per level (C).
    pub channels: usize,
    /// Convolutions ahead of the alignment stage.
    pub fam_depth: usize,
    /// Convolutions in each refinement-stage branch.
    pub odm_depth: usize,
    /// Rotation count of the rotating filters (N).
    pub orientations: usize,
    pub num_classes: usize,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig {
            channels: 256,
            fam_depth: 2,
            odm_depth: 2,
            orientations: 8,
            num_classes: 15,
        }
    }
}

impl HeadConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.fam_depth == 0 || self.odm_depth == 0 {
            return Err(PipelineError::BadConfig("depths must be >= 1".to_string()));
        }
        if self.num_classes == 0 {
            return Err(PipelineError::BadConfig("num_classes must be >= 1".to_string()));
        }
        if !matches!(self.orientations, 1 | 2 | 4 | 8) {
            return Err(PipelineError::BadConfig(format!(
                "orientations {} not one of 1, 2, 4, 8",
                self.orientations
            )));
        }
        if self.channels == 0 || !self.channels.is_multiple_of(self.orientations) {
            return Err(PipelineError::BadConfig(format!(
                "channels {} must be a positive multiple of orientations {}",
                self.channels, self.orientations
            )));
        }
        Ok(())
    }

    /// Channels on the rotation-invariant path after pooling.
    pub fn pooled_channels(&self) -> usize {
        self.channels / self.orientations
    }
}

/// Every learned tensor of the head, filled with seeded uniform noise for
/// shape and composition tests.
#[derive(Debug, Clone)]
pub struct HeadWeights {
    pub config: HeadConfig,
    pub fam_convs: Vec<ConvKernel<f64>>,
    /// Produces the 5 refinement deltas per location.
    pub arn_head: ConvKernel<f64>,
    pub align_kernel: ConvKernel<f64>,
    pub arf: RotatingFilter<f64>,
    pub cls_convs: Vec<ConvKernel<f64>>,
    pub cls_head: ConvKernel<f64>,
    pub reg_convs: Vec<ConvKernel<f64>>,
    pub reg_head: ConvKernel<f64>,
}

impl HeadWeights {
    pub fn random(config: HeadConfig, seed: u64) -> Result<Self, PipelineError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut next = move || rng.gen_range(-0.05..0.05);
        let c = config.channels;
        let base = config.pooled_channels();
        let fam_convs = (0..config.fam_depth)
            .map(|_| ConvKernel::from_fn(c, c, 3, |_, _, _, _| next()))
            .collect();
        let arn_head = ConvKernel::from_fn(5, c, 1, |_, _, _, _| next());
        let align_kernel = ConvKernel::from_fn(c, c, 3, |_, _, _, _| next());
        let arf = RotatingFilter::from_fn(base, base, config.orientations, |_, _, _, _, _| next())?;
        let cls_convs = (0..config.odm_depth)
            .map(|_| ConvKernel::from_fn(base, base, 3, |_, _, _, _| next()))
            .collect();
        let cls_head = ConvKernel::from_fn(config.num_classes, base, 1, |_, _, _, _| next());
        let reg_convs = (0..config.odm_depth)
            .map(|_| ConvKernel::from_fn(c, c, 3, |_, _, _, _| next()))
            .collect();
        let reg_head = ConvKernel::from_fn(5, c, 1, |_, _, _, _| next());
        Ok(HeadWeights {
            config,
            fam_convs,
            arn_head,
            align_kernel,
            arf,
            cls_convs,
            cls_head,
            reg_convs,
            reg_head,
        })
    }
}

/// One pyramid level's head output.
#[derive(Debug, Clone)]
pub struct LevelOutput {
    /// Anchors after applying the refinement deltas.
    pub refined: AnchorMap<f64>,
    /// One candidate per location, scored by the best class probability.
    pub detections: Vec<Detection<f64>>,
}

fn relu(g: &FeatureGrid<f64>) -> FeatureGrid<f64> {
    g.map(|v| v.max(0.0))
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Splits the refinement-stage trunk: rotation responses are pooled to an
/// orientation-invariant grid (`channels / n`) for classification while
/// the full orientation-sensitive grid feeds regression.
pub fn odm_paths(
    aligned: &FeatureGrid<f64>,
    arf: &RotatingFilter<f64>,
) -> Result<(FeatureGrid<f64>, FeatureGrid<f64>), PipelineError> {
    let oriented = OrientedFeatureGrid::new(aligned.clone(), arf.orientations())?;
    let responses = arf_conv(&oriented, arf)?;
    let sensitive = relu(responses.grid());
    let invariant = orientation_pool(
        &OrientedFeatureGrid::new(sensitive.clone(), arf.orientations())?,
    );
    Ok((invariant, sensitive))
}

fn deltas_at(grid: &FeatureGrid<f64>, y: usize, x: usize) -> BoxDelta<f64> {
    BoxDelta {
        dx: grid.get(y, x, 0),
        dy: grid.get(y, x, 1),
        dw: grid.get(y, x, 2),
        dh: grid.get(y, x, 3),
        dtheta: grid.get(y, x, 4),
    }
}

/// Runs the full head over one or more pyramid levels: refine the
/// per-location anchors, re-sample features along the refined boxes,
/// evaluate the rotation-aware trunk, and decode per-location candidate
/// detections.
pub fn head_forward(
    features: &[FeatureGrid<f64>],
    anchors: &[AnchorMap<f64>],
    weights: &HeadWeights,
) -> Result<Vec<LevelOutput>, PipelineError> {
    weights.config.validate()?;
    if features.len() != anchors.len() {
        return Err(PipelineError::LevelCountMismatch {
            expected: features.len(),
            got: anchors.len(),
        });
    }
    let mut out = Vec::with_capacity(features.len());
    for (level, (grid, amap)) in features.iter().zip(anchors).enumerate() {
        if grid.c() != weights.config.channels {
            return Err(PipelineError::ChannelMismatch {
                level,
                expected: weights.config.channels,
                got: grid.c(),
            });
        }
        if grid.h() != amap.h() || grid.w() != amap.w() {
            return Err(PipelineError::GridAnchorMismatch {
                level,
                gh: grid.h(),
                gw: grid.w(),
                ah: amap.h(),
                aw: amap.w(),
            });
        }

        let mut x = grid.clone();
        for conv in &weights.fam_convs {
            x = relu(&conv2d_ref(&x, conv)?);
        }
        let arn = conv2d_ref(&x, &weights.arn_head)?;
        let mut refined_boxes = Vec::with_capacity(amap.h() * amap.w());
        for y in 0..amap.h() {
            for xx in 0..amap.w() {
                let decoded = decode(&deltas_at(&arn, y, xx), amap.get(y, xx))?;
                refined_boxes.push(decoded.bbox);
            }
        }
        let refined = AnchorMap::from_boxes(amap.h(), amap.w(), amap.stride(), refined_boxes)?;

        let offsets = offset_field(&refined, 3)?;
        let aligned = relu(&align_conv(&x, &weights.align_kernel, &offsets)?);
        let (invariant, sensitive) = odm_paths(&aligned, &weights.arf)?;

        let mut cls = invariant;
        for conv in &weights.cls_convs {
            cls = relu(&conv2d_ref(&cls, conv)?);
        }
        let logits = conv2d_ref(&cls, &weights.cls_head)?;

        let mut reg = sensitive;
        for conv in &weights.reg_convs {
            reg = relu(&conv2d_ref(&reg, conv)?);
        }
        let odm = conv2d_ref(&reg, &weights.reg_head)?;

        let mut detections = Vec::with_capacity(amap.h() * amap.w());
        for y in 0..amap.h() {
            for xx in 0..amap.w() {
                let decoded = decode(&deltas_at(&odm, y, xx), refined.get(y, xx))?;
                let mut best = (0usize, f64::NEG_INFINITY);
                for cidx in 0..weights.config.num_classes {
                    let p = sigmoid(logits.get(y, xx, cidx));
                    if p > best.1 {
                        best = (cidx, p);
                    }
                }
                detections.push(Detection {
                    bbox: decoded.bbox,
                    class: best.0,
                    score: best.1,
                });
            }
        }
        out.push(LevelOutput { refined, detections });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anchors::generate_anchors;

    #[test]
    fn default_plan_covers_a_large_image() {
        let plan = plan_tiles(4000, 4000, 1024, 824).unwrap();
        assert_eq!(plan.windows.len(), 25);
        let xs: Vec<u32> = plan.windows[..5].iter().map(|w| w.x0).collect();
        assert_eq!(xs, vec![0, 824, 1648, 2472, 2976]);
        assert!(plan.windows.iter().all(|w| w.w == 1024 && w.h == 1024));
        assert!(plan.covers_image());
    }

    #[test]
    fn small_image_is_one_window() {
        let plan = plan_tiles(640, 480, 1024, 824).unwrap();
        assert_eq!(
            plan.windows,
            vec![Window { x0: 0, y0: 0, w: 640, h: 480 }]
        );
        assert!(plan.covers_image());
    }

    #[test]
    fn stride_equal_to_chip_tiles_without_overlap() {
        let plan = plan_tiles(3072, 1024, 1024, 1024).unwrap();
        let xs: Vec<u32> = plan.windows.iter().map(|w| w.x0).collect();
        assert_eq!(xs, vec![0, 1024, 2048]);
        assert!(plan.covers_image());
    }

    #[test]
    fn invalid_plans_are_rejected() {
        assert!(matches!(
            plan_tiles(0, 100, 64, 32),
            Err(PipelineError::EmptyImage { .. })
        ));
        assert!(matches!(
            plan_tiles(100, 100, 64, 65),
            Err(PipelineError::InvalidStride { stride: 65, chip: 64 })
        ));
        assert!(matches!(
            plan_tiles(100, 100, 64, 0),
            Err(PipelineError::InvalidStride { .. })
        ));
    }

    #[test]
    fn coverage_holds_across_random_shapes() {
        let mut state = 99u64;
        let mut next = || {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            (state >> 33) as u32
        };
        for _ in 0..200 {
            let w = 1 + next() % 2500;
            let h = 1 + next() % 2500;
            let chip = 128 + next() % 1400;
            // Upper half of the chip keeps the window count bounded.
            let stride = chip - next() % (chip / 2 + 1);
            let plan = plan_tiles(w, h, chip, stride).unwrap();
            assert!(plan.covers_image(), "w={w} h={h} chip={chip} stride={stride}");
        }
        // Degenerate shapes: tiny chips, stride 1, one-pixel images.
        for (w, h, chip, stride) in [
            (50, 50, 3, 1),
            (7, 5, 4, 2),
            (100, 1, 10, 3),
            (1, 1, 1, 1),
            (2500, 999, 1000, 999),
        ] {
            let plan = plan_tiles(w, h, chip, stride).unwrap();
            assert!(plan.covers_image(), "w={w} h={h} chip={chip} stride={stride}");
        }
    }

    #[test]
    fn coverage_check_detects_gaps() {
        let mut plan = plan_tiles(2048, 1024, 1024, 1024).unwrap();
        plan.windows.remove(1);
        assert!(!plan.covers_image());
    }

    #[test]
    fn plan_text_round_trips() {
        let plan = plan_tiles(4000, 3000, 1024, 824).unwrap();
        let text = plan.to_text();
        let back = TilePlan::from_text(&text).unwrap();
        assert_eq!(back, plan);
        assert!(text.starts_with("4000 3000 1024 824\n"));
    }

    #[test]
    fn plan_text_rejects_bad_windows() {
        let err = TilePlan::from_text("100 100 64 32\n90 0 64 64\n").unwrap_err();
        assert!(matches!(err, PipelineError::PlanParse { line: 2, .. }));
        let err = TilePlan::from_text("100 100\n").unwrap_err();
        assert!(matches!(err, PipelineError::PlanParse { line: 1, .. }));
    }

    fn det(cx: f64, cy: f64, w: f64, h: f64, theta: f64, class: usize, score: f64) -> Detection<f64> {
        Detection {
            bbox: OrientedBox::new(cx, cy, w, h, theta).unwrap(),
            class,
            score,
        }
    }

    #[test]
    fn chip_to_global_translates_center_only() {
        let w = Window { x0: 824, y0: 0, w: 1024, h: 1024 };
        let d = det(100.0, 100.0, 8.0, 4.0, 0.4, 3, 0.9);
        let g = chip_to_global(&d, &w);
        assert_eq!(g.bbox.cx(), 924.0);
        assert_eq!(g.bbox.cy(), 100.0);
        assert_eq!(g.bbox.w(), 8.0);
        // Translation must not touch the angle bits.
        assert_eq!(g.bbox.theta(), d.bbox.theta());
        assert_eq!((g.class, g.score), (3, 0.9));
        let origin = Window { x0: 0, y0: 0, w: 1024, h: 1024 };
        assert_eq!(chip_to_global(&d, &origin), d);
    }

    #[test]
    fn merge_collapses_cross_chip_duplicates() {
        let w1 = Window { x0: 0, y0: 0, w: 1024, h: 1024 };
        let w2 = Window { x0: 824, y0: 0, w: 1024, h: 1024 };
        // Same global object (900, 100) seen from both chips.
        let per_chip = vec![
            (w1, vec![det(900.0, 100.0, 40.0, 20.0, 0.3, 2, 0.8)]),
            (w2, vec![det(76.0, 100.0, 40.0, 20.0, 0.3, 2, 0.95)]),
        ];
        let merged = merge_detections(&per_chip, DEFAULT_MERGE_IOU);
        assert_eq!(merged.len(), 1);
        assert_eq!(merged[0].score, 0.95);
        assert_eq!(merged[0].bbox.cx(), 900.0);
    }

    #[test]
    fn merge_keeps_disjoint_objects_and_ignores_chip_order() {
        let w1 = Window { x0: 0, y0: 0, w: 1024, h: 1024 };
        let w2 = Window { x0: 824, y0: 0, w: 1024, h: 1024 };
        let a = (w1, vec![det(100.0, 100.0, 40.0, 20.0, 0.0, 0, 0.9)]);
        let b = (w2, vec![det(900.0, 900.0, 40.0, 20.0, 0.4, 1, 0.8)]);
        let fwd = merge_detections(&[a.clone(), b.clone()], DEFAULT_MERGE_IOU);
        let rev = merge_detections(&[b, a], DEFAULT_MERGE_IOU);
        assert_eq!(fwd.len(), 2);
        assert_eq!(fwd, rev);
    }

    fn gt(cx: f64, cy: f64, w: f64, h: f64, theta: f64, class: usize) -> GtObject<f64> {
        GtObject {
            bbox: OrientedBox::new(cx, cy, w, h, theta).unwrap(),
            class,
        }
    }

    #[test]
    fn zero_jitter_reproduces_owned_gts_exactly() {
        let window = Window { x0: 100, y0: 200, w: 512, h: 512 };
        let gts = vec![
            gt(150.5, 250.25, 40.0, 20.0, 0.3, 2),
            gt(99.0, 300.0, 40.0, 20.0, 0.0, 1), // center left of the window
            gt(612.0, 250.0, 40.0, 20.0, 0.0, 0), // center exactly on the right edge
        ];
        let dets = simulate_chip_detections(&gts, &window, &JitterSpec::none(), 7);
        assert_eq!(dets.len(), 1);
        assert_eq!(dets[0].score, 1.0);
        assert_eq!(dets[0].class, 2);
        // Bit-exact clone of the translated ground truth.
        assert_eq!(dets[0].bbox, gts[0].bbox.translated(-100.0, -200.0));
        assert_eq!(dets[0].bbox.cx(), 50.5);
        assert_eq!(dets[0].bbox.cy(), 50.25);
        assert_eq!(dets[0].bbox.w(), 40.0);
    }

    #[test]
    fn jitter_is_bounded_and_deterministic() {
        let window = Window { x0: 0, y0: 0, w: 1024, h: 1024 };
        let gts: Vec<GtObject<f64>> = (0..20)
            .map(|i| gt(50.0 + 40.0 * i as f64 % 900.0, 500.0, 30.0, 14.0, 0.2, i % 3))
            .collect();
        let jit = JitterSpec {
            center: 2.0,
            sides: 0.05,
            angle: 0.05,
        };
        let a = simulate_chip_detections(&gts, &window, &jit, 42);
        let b = simulate_chip_detections(&gts, &window, &jit, 42);
        assert_eq!(a, b);
        let c = simulate_chip_detections(&gts, &window, &jit, 43);
        assert_ne!(a, c);
        for (d, g) in a.iter().zip(&gts) {
            assert!((d.bbox.cx() - g.bbox.cx()).abs() <= 2.0);
            assert!((d.bbox.cy() - g.bbox.cy()).abs() <= 2.0);
            assert!(d.bbox.w() <= g.bbox.w() * 1.05 + 1e-9);
            assert!(d.score >= 0.5 && d.score <= 1.0);
        }
    }

    #[test]
    fn tiled_equals_whole_image_away_from_borders() {
        // Objects well inside chip interiors: tiling plus merge gives the
        // same set as a single whole-image pass.
        let gts = vec![
            gt(512.0, 512.0, 60.0, 30.0, 0.25, 0),
            gt(1500.0, 400.0, 80.0, 40.0, 1.1, 1),
            gt(400.0, 1500.0, 50.0, 25.0, -0.5, 2),
        ];
        let plan = plan_tiles(2048, 2048, 1024, 824).unwrap();
        let per_chip: Vec<(Window, Vec<Detection<f64>>)> = plan
            .windows
            .iter()
            .map(|w| (*w, simulate_chip_detections(&gts, w, &JitterSpec::none(), 5)))
            .collect();
        let merged = merge_detections(&per_chip, DEFAULT_MERGE_IOU);
        let whole_window = Window { x0: 0, y0: 0, w: 2048, h: 2048 };
        let whole = simulate_chip_detections(&gts, &whole_window, &JitterSpec::none(), 5);
        let whole_merged = merge_detections(&[(whole_window, whole)], DEFAULT_MERGE_IOU);
        assert_eq!(merged, whole_merged);
        assert_eq!(merged.len(), 3);
    }

    #[test]
    fn head_config_validation() {
        assert!(HeadConfig::default().validate().is_ok());
        assert_eq!(HeadConfig::default().pooled_channels(), 32);
        let bad = HeadConfig {
            channels: 10,
            ..HeadConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = HeadConfig {
            fam_depth: 0,
            ..HeadConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    fn tiny_cfg() -> HeadConfig {
        HeadConfig {
            channels: 8,
            fam_depth: 1,
            odm_depth: 1,
            orientations: 4,
            num_classes: 3,
        }
    }

    fn tiny_inputs(cfg: &HeadConfig) -> (Vec<FeatureGrid<f64>>, Vec<AnchorMap<f64>>) {
        let grid = FeatureGrid::from_fn(4, 4, cfg.channels, 8, |y, x, c| {
            ((y * 31 + x * 17 + c * 7) % 13) as f64 * 0.1 - 0.6
        });
        let amap = generate_anchors(8, 4.0, 4, 4).unwrap();
        (vec![grid], vec![amap])
    }

    #[test]
    fn head_forward_shapes_and_determinism() {
        let cfg = tiny_cfg();
        let weights = HeadWeights::random(cfg, 11).unwrap();
        let (features, anchors) = tiny_inputs(&cfg);
        let out = head_forward(&features, &anchors, &weights).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].detections.len(), 16);
        assert_eq!((out[0].refined.h(), out[0].refined.w()), (4, 4));
        for d in &out[0].detections {
            assert!(d.score > 0.0 && d.score < 1.0);
            assert!(d.class < cfg.num_classes);
        }
        let again = head_forward(&features, &anchors, &HeadWeights::random(cfg, 11).unwrap()).unwrap();
        assert_eq!(out[0].detections, again[0].detections);
    }

    #[test]
    fn zero_refinement_keeps_anchors() {
        let cfg = tiny_cfg();
        let mut weights = HeadWeights::random(cfg, 11).unwrap();
        weights.arn_head = ConvKernel::from_fn(5, cfg.channels, 1, |_, _, _, _| 0.0);
        let (features, anchors) = tiny_inputs(&cfg);
        let out = head_forward(&features, &anchors, &weights).unwrap();
        assert_eq!(out[0].refined, anchors[0]);
    }

    #[test]
    fn invariant_path_narrows_by_orientation_count() {
        let cfg = HeadConfig {
            channels: 256,
            fam_depth: 1,
            odm_depth: 1,
            orientations: 8,
            num_classes: 2,
        };
        let weights = HeadWeights::random(cfg, 3).unwrap();
        let aligned = FeatureGrid::from_fn(3, 3, 256, 8, |y, x, c| {
            ((y + x + c) % 5) as f64 * 0.2 - 0.4
        });
        let (invariant, sensitive) = odm_paths(&aligned, &weights.arf).unwrap();
        assert_eq!(invariant.c(), 32);
        assert_eq!(sensitive.c(), 256);
    }

    #[test]
    fn head_forward_rejects_mismatched_shapes() {
        let cfg = tiny_cfg();
        let weights = HeadWeights::random(cfg, 11).unwrap();
        let (features, _) = tiny_inputs(&cfg);
        let wrong = vec![generate_anchors(8, 4.0, 3, 4).unwrap()];
        assert!(matches!(
            head_forward(&features, &wrong, &weights),
            Err(PipelineError::GridAnchorMismatch { .. })
        ));
        let bad_grid = vec![FeatureGrid::zeros(4, 4, 6, 8)];
        let amap = vec![generate_anchors(8, 4.0, 4, 4).unwrap()];
        assert!(matches!(
            head_forward(&bad_grid, &amap, &weights),
            Err(PipelineError::ChannelMismatch { .. })
        ));
    }
}
