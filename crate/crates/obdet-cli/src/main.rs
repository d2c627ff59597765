//! Batch tools around the `obdet` kernels. Every subcommand is
//! deterministic for identical inputs, writes output files atomically
//! (temp file + rename), and exits non-zero on any error.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use obdet::evalkit::{map_eval, ApMetric, GtRecord, ScoredBox, COCO_THRESHOLDS};
use obdet::featops::offset_field;
use obdet::geometry::{OrientedBox, Point, Quad};
use obdet::ioformats::{
    chip_file_name, class_file_name, normalize_category, parse_chip_detections,
    parse_dota_annotation, parse_detections, read_grid, write_offset_field, ChipDetLine,
    DetectionLine,
};
use obdet::pipeline::TilePlan;
use obdet::postprocess::{rotated_nms_indices, Detection};

#[derive(Parser)]
#[command(
    name = "obdet",
    version,
    about = "Oriented-detection batch tools: tiling, merging, NMS, offsets, evaluation"
)]
struct Cli {
    /// Worker threads for file-heavy subcommands (0 = one per core)
    #[arg(long, global = true, env = "OBDET_THREADS", default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Plan square crop windows covering a large image
    Tile(TileArgs),
    /// Map per-chip detections to global coordinates and merge duplicates
    Merge(MergeArgs),
    /// Score per-class detections against ground-truth annotations
    Eval(EvalArgs),
    /// Greedy rotated non-maximum suppression over one detection file
    Nms(NmsArgs),
    /// Compute the alignment offset field for a stored anchor map
    Offsets(OffsetsArgs),
}

#[derive(Args)]
struct TileArgs {
    /// Image width in pixels
    #[arg(long)]
    width: u32,
    /// Image height in pixels
    #[arg(long)]
    height: u32,
    /// Window side length
    #[arg(long, default_value_t = 1024)]
    chip: u32,
    /// Step between window origins (must not exceed the chip size)
    #[arg(long, default_value_t = 824)]
    stride: u32,
    /// Plan file to write
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MergeArgs {
    /// Plan file produced by `tile`
    #[arg(long)]
    plan: PathBuf,
    /// Directory of per-window files chip_0000.txt, chip_0001.txt, ...
    #[arg(long)]
    chips: PathBuf,
    /// Merge suppression threshold (duplicates from overlapping chips)
    #[arg(long, default_value_t = 0.1)]
    nms: f64,
    /// Image id written into the per-class output lines
    #[arg(long, default_value = "image")]
    image: String,
    /// Directory for the per-class output files
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Directory of per-class detection files (<class>.txt)
    #[arg(long)]
    dets: PathBuf,
    /// Directory of per-image annotation files (<image>.txt)
    #[arg(long)]
    gt: PathBuf,
    /// Matching IoU threshold
    #[arg(long, default_value_t = 0.5)]
    iou: f64,
    /// Sweep IoU 0.50:0.05:0.95 instead of the single --iou value
    #[arg(long)]
    range: bool,
    /// Average-precision interpolation rule
    #[arg(long, value_enum, default_value_t = MetricArg::Voc07)]
    metric: MetricArg,
    /// Emit the report as JSON instead of a TSV table
    #[arg(long)]
    json: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    /// 11-point interpolated average precision
    Voc07,
    /// Area under the precision envelope
    Voc12,
}

impl From<MetricArg> for ApMetric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Voc07 => ApMetric::Voc07,
            MetricArg::Voc12 => ApMetric::Voc12,
        }
    }
}

#[derive(Args)]
struct NmsArgs {
    /// Detection file: `category score x1 y1 ... x4 y4` per line
    #[arg(long = "in")]
    input: PathBuf,
    /// Suppression IoU threshold
    #[arg(long, default_value_t = 0.5)]
    iou: f64,
    /// Suppress across categories instead of within each category
    #[arg(long)]
    class_agnostic: bool,
    /// Output file (defaults to stdout)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OffsetsArgs {
    /// Anchor container: a binary grid file with 5 channels
    /// (cx, cy, w, h, theta per location)
    #[arg(long)]
    anchors: PathBuf,
    /// Kernel size (odd)
    #[arg(long, default_value_t = 3)]
    k: usize,
    /// Feature stride of the anchor lattice
    #[arg(long, default_value_t = 8)]
    stride: u32,
    /// Binary offset container to write
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the field as text (header, then 2k^2 values per location)
    #[arg(long)]
    dump: bool,
}

fn main() {
    let cli = Cli::parse();
    if cli.threads > 0 {
        // Ignore re-initialization: only the first pool wins.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global();
    }
    let result = match cli.command {
        Command::Tile(args) => cmd_tile(args),
        Command::Merge(args) => cmd_merge(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Nms(args) => cmd_nms(args),
        Command::Offsets(args) => cmd_offsets(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

/// Writes via a temporary file in the target directory plus rename, so
/// readers never observe a partial file.
fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .with_context(|| format!("creating temporary file in {}", dir.display()))?;
    tmp.write_all(contents)?;
    tmp.persist(path)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn cmd_tile(args: TileArgs) -> Result<()> {
    let plan = obdet::pipeline::plan_tiles(args.width, args.height, args.chip, args.stride)?;
    write_atomic(&args.out, plan.to_text().as_bytes())?;
    println!("{} windows", plan.windows.len());
    Ok(())
}

fn translated_quad(q: &Quad<f64>, dx: f64, dy: f64) -> Quad<f64> {
    let v = q.vertices();
    Quad::new([
        Point { x: v[0].x + dx, y: v[0].y + dy },
        Point { x: v[1].x + dx, y: v[1].y + dy },
        Point { x: v[2].x + dx, y: v[2].y + dy },
        Point { x: v[3].x + dx, y: v[3].y + dy },
    ])
}

fn cmd_merge(args: MergeArgs) -> Result<()> {
    let plan_text = fs::read_to_string(&args.plan)
        .with_context(|| format!("reading plan {}", args.plan.display()))?;
    let plan = TilePlan::from_text(&plan_text)?;

    // One detection list per window, read and mapped to global
    // coordinates in parallel. A missing file names its window.
    let per_chip: Vec<Vec<ChipDetLine>> = plan
        .windows
        .par_iter()
        .enumerate()
        .map(|(i, win)| -> Result<Vec<ChipDetLine>> {
            let path = args.chips.join(chip_file_name(i));
            let text = fs::read_to_string(&path).with_context(|| {
                format!(
                    "window {i} ({} {} {} {}): missing chip file {}",
                    win.x0,
                    win.y0,
                    win.w,
                    win.h,
                    path.display()
                )
            })?;
            let dets = parse_chip_detections(&text)
                .with_context(|| format!("parsing {}", path.display()))?;
            Ok(dets
                .into_iter()
                .map(|d| ChipDetLine {
                    quad: translated_quad(&d.quad, win.x0 as f64, win.y0 as f64),
                    ..d
                })
                .collect())
        })
        .collect::<Result<_>>()?;

    let mut lines: Vec<ChipDetLine> = per_chip.into_iter().flatten().collect();
    let total_in = lines.len();

    let class_ids: BTreeMap<String, usize> = lines
        .iter()
        .map(|d| d.category.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .enumerate()
        .map(|(i, c)| (c, i))
        .collect();

    let boxed = |d: &ChipDetLine| -> Result<Detection<f64>> {
        Ok(Detection {
            bbox: d.quad.min_area_box()?,
            class: class_ids[&d.category],
            score: d.score,
        })
    };
    let mut dets = lines.iter().map(boxed).collect::<Result<Vec<_>>>()?;

    // Canonical order makes the merge independent of chip order.
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        let (x, y) = (&dets[a], &dets[b]);
        y.score
            .total_cmp(&x.score)
            .then(x.class.cmp(&y.class))
            .then(x.bbox.cx().total_cmp(&y.bbox.cx()))
            .then(x.bbox.cy().total_cmp(&y.bbox.cy()))
            .then(x.bbox.w().total_cmp(&y.bbox.w()))
            .then(x.bbox.h().total_cmp(&y.bbox.h()))
            .then(x.bbox.theta().total_cmp(&y.bbox.theta()))
    });
    dets = order.iter().map(|&i| dets[i].clone()).collect();
    lines = order.iter().map(|&i| lines[i].clone()).collect();

    let kept = rotated_nms_indices(&dets, args.nms, true);

    fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let mut per_class: BTreeMap<String, Vec<DetectionLine>> = BTreeMap::new();
    for &i in &kept {
        per_class
            .entry(lines[i].category.clone())
            .or_default()
            .push(DetectionLine {
                image: args.image.clone(),
                score: lines[i].score,
                quad: lines[i].quad,
            });
    }
    for (class, dets) in &per_class {
        let path = args.out.join(class_file_name(class));
        write_atomic(&path, obdet::ioformats::emit_detections(dets).as_bytes())?;
    }
    println!(
        "{} detections in, {} after merge, {} classes",
        total_in,
        kept.len(),
        per_class.len()
    );
    Ok(())
}

fn txt_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading directory {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "txt"))
        .collect();
    files.sort();
    Ok(files)
}

fn file_stem(path: &Path) -> String {
    path.file_stem().unwrap_or_default().to_string_lossy().into_owned()
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let det_files = txt_files(&args.dets)?;
    let dets: Vec<(String, Vec<ScoredBox>)> = det_files
        .par_iter()
        .map(|path| -> Result<(String, Vec<ScoredBox>)> {
            let class = normalize_category(&file_stem(path));
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            let lines = parse_detections(&text)
                .with_context(|| format!("parsing {}", path.display()))?;
            let boxes = lines
                .into_iter()
                .map(|d| {
                    Ok(ScoredBox {
                        image: d.image,
                        bbox: d.quad.min_area_box()?,
                        score: d.score,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((class, boxes))
        })
        .collect::<Result<_>>()?;

    let gt_files = txt_files(&args.gt)?;
    let gts: Vec<(String, Vec<(String, GtRecord)>)> = gt_files
        .par_iter()
        .map(|path| -> Result<(String, Vec<(String, GtRecord)>)> {
            let image = file_stem(path);
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            let (records, warnings) = parse_dota_annotation(&text)
                .with_context(|| format!("parsing {}", path.display()))?;
            for w in warnings {
                eprintln!("warning: {}: {w}", path.display());
            }
            let rows = records
                .into_iter()
                .map(|r| {
                    Ok((
                        r.category,
                        GtRecord {
                            image: image.clone(),
                            bbox: r.quad.min_area_box()?,
                            difficult: r.difficult,
                        },
                    ))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((image, rows))
        })
        .collect::<Result<_>>()?;

    let mut dmap: BTreeMap<String, Vec<ScoredBox>> = BTreeMap::new();
    for (class, boxes) in dets {
        dmap.entry(class).or_default().extend(boxes);
    }
    let mut gmap: BTreeMap<String, Vec<GtRecord>> = BTreeMap::new();
    for (_, rows) in gts {
        for (class, rec) in rows {
            gmap.entry(class).or_default().push(rec);
        }
    }

    let det_classes: BTreeSet<String> = dmap.keys().cloned().collect();
    let gt_classes: BTreeSet<String> = gmap.keys().cloned().collect();
    if det_classes != gt_classes {
        let only_dets: Vec<_> = det_classes.difference(&gt_classes).collect();
        let only_gts: Vec<_> = gt_classes.difference(&det_classes).collect();
        eprintln!(
            "warning: class sets differ (detections only: {only_dets:?}; ground truth only: {only_gts:?}); evaluating the intersection"
        );
        dmap.retain(|c, _| gt_classes.contains(c));
        gmap.retain(|c, _| det_classes.contains(c));
    }

    let thresholds: Vec<f64> = if args.range {
        COCO_THRESHOLDS.to_vec()
    } else {
        vec![args.iou]
    };
    let report = map_eval(&dmap, &gmap, &thresholds, args.metric.into());
    if args.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        print!("{}", report.to_tsv());
    }
    Ok(())
}

fn cmd_nms(args: NmsArgs) -> Result<()> {
    let text = fs::read_to_string(&args.input)
        .with_context(|| format!("reading {}", args.input.display()))?;
    let lines = parse_chip_detections(&text)
        .with_context(|| format!("parsing {}", args.input.display()))?;
    let class_ids: BTreeMap<String, usize> = lines
        .iter()
        .map(|d| d.category.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .enumerate()
        .map(|(i, c)| (c, i))
        .collect();
    let dets = lines
        .iter()
        .map(|d| {
            Ok(Detection {
                bbox: d.quad.min_area_box()?,
                class: class_ids[&d.category],
                score: d.score,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let kept = rotated_nms_indices(&dets, args.iou, !args.class_agnostic);
    let survivors: Vec<ChipDetLine> = kept.iter().map(|&i| lines[i].clone()).collect();
    let out_text = obdet::ioformats::emit_chip_detections(&survivors);
    match &args.out {
        Some(path) => write_atomic(path, out_text.as_bytes())?,
        None => print!("{out_text}"),
    }
    eprintln!("{} detections in, {} kept", lines.len(), kept.len());
    Ok(())
}

fn cmd_offsets(args: OffsetsArgs) -> Result<()> {
    let bytes = fs::read(&args.anchors)
        .with_context(|| format!("reading {}", args.anchors.display()))?;
    let grid = read_grid(&mut bytes.as_slice())
        .with_context(|| format!("decoding {}", args.anchors.display()))?;
    if grid.c() != 5 {
        bail!(
            "{}: anchor container must have 5 channels (cx, cy, w, h, theta), got {}",
            args.anchors.display(),
            grid.c()
        );
    }
    let mut boxes = Vec::with_capacity(grid.h() * grid.w());
    for y in 0..grid.h() {
        for x in 0..grid.w() {
            boxes.push(
                OrientedBox::new(
                    grid.get(y, x, 0),
                    grid.get(y, x, 1),
                    grid.get(y, x, 2),
                    grid.get(y, x, 3),
                    grid.get(y, x, 4),
                )
                .with_context(|| format!("anchor at ({y}, {x})"))?,
            );
        }
    }
    let anchors = obdet::anchors::AnchorMap::from_boxes(grid.h(), grid.w(), args.stride, boxes)?;
    let field = offset_field(&anchors, args.k)?;

    if let Some(path) = &args.out {
        let mut buf = Vec::new();
        write_offset_field(&mut buf, &field)?;
        write_atomic(path, &buf)?;
    }
    if args.dump || args.out.is_none() {
        let per_loc = 2 * args.k * args.k;
        let mut s = format!(
            "{} {} {} {}\n",
            field.h(),
            field.w(),
            args.k,
            field.stride()
        );
        for chunk in field.data().chunks(per_loc) {
            let row: Vec<String> = chunk.iter().map(|v| format!("{v:.6}")).collect();
            s.push_str(&row.join(" "));
            s.push('\n');
        }
        print!("{s}");
    }
    Ok(())
}
