//! `nwd`: box-similarity analysis from the command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 check failure.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use nwd_core::analysis::{
    assignment_stats, assignment_stats_table, curve_table, grad_check, nms_per_image, BSizeMode,
    DeviationAxis,
};
use nwd_core::annotation::{
    detections_to_json, load_coco_with, load_detections, synth_offset_scene, synth_tiny_scene,
    to_coco_json, AnchorGridConfig, LoadOptions, OffsetSceneSpec,
};
use nwd_core::assign::{DEFAULT_NEG_THRESHOLD, DEFAULT_POS_THRESHOLD};
use nwd_core::nms::{DEFAULT_NMS_THRESHOLD, DEFAULT_SCORE_FLOOR};
use nwd_core::report::{fmt_sig9, Format};
use nwd_core::{BoundingBox, Error, MetricKind, NmsConfig, DEFAULT_NWD_CONSTANT};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_CHECK: u8 = 3;

#[derive(Parser)]
#[command(
    name = "nwd",
    version,
    about = "Bounding-box similarity analysis: NWD and the IoU family"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Similarity of two boxes given as cx,cy,w,h.
    Metric(MetricArgs),
    /// Metric value against integer center deviation, one column per box size.
    Curve(CurveArgs),
    /// Label-assignment statistics per metric over a COCO annotation file.
    AssignStats(AssignStatsArgs),
    /// Non-maximum suppression over a detection file.
    Nms(NmsArgs),
    /// Compare analytic loss gradients with central finite differences.
    GradCheck(GradCheckArgs),
    /// Write a seeded synthetic tiny-object dataset in COCO format.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Iou,
    Giou,
    Diou,
    Ciou,
    Nwd,
}

impl Kind {
    fn metric(self, c: f64) -> Result<MetricKind, Error> {
        let kind = match self {
            Kind::Iou => MetricKind::Iou,
            Kind::Giou => MetricKind::Giou,
            Kind::Diou => MetricKind::Diou,
            Kind::Ciou => MetricKind::Ciou,
            Kind::Nwd => MetricKind::Nwd { c },
        };
        kind.validate()?;
        Ok(kind)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum OutputFormat {
    Csv,
    Json,
}

impl From<OutputFormat> for Format {
    fn from(f: OutputFormat) -> Self {
        match f {
            OutputFormat::Csv => Format::Csv,
            OutputFormat::Json => Format::Json,
        }
    }
}

#[derive(Args)]
struct Output {
    /// Output file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: OutputFormat,
}

fn parse_box(s: &str) -> Result<BoundingBox, String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| format!("expected cx,cy,w,h: {e}"))?;
    let [cx, cy, w, h] = parts[..] else {
        return Err(format!(
            "expected 4 comma-separated numbers, got {}",
            parts.len()
        ));
    };
    BoundingBox::new(cx, cy, w, h).map_err(|e| e.to_string())
}

#[derive(Args)]
struct MetricArgs {
    #[arg(long, value_enum)]
    kind: Kind,
    /// NWD normalization constant in pixels.
    #[arg(long, default_value_t = DEFAULT_NWD_CONSTANT)]
    c: f64,
    #[arg(long, value_parser = parse_box, allow_hyphen_values = true)]
    a: BoundingBox,
    #[arg(long, value_parser = parse_box, allow_hyphen_values = true)]
    b: BoundingBox,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Axis {
    Diagonal,
    Horizontal,
}

#[derive(Clone, Copy, ValueEnum)]
enum BSize {
    Equal,
    Half,
}

#[derive(Args)]
struct CurveArgs {
    #[arg(long, value_enum)]
    kind: Kind,
    #[arg(long, default_value_t = DEFAULT_NWD_CONSTANT)]
    c: f64,
    /// Side lengths (pixels) of the reference box, one curve each.
    #[arg(long, value_delimiter = ',', default_value = "4,8,16,32")]
    sizes: Vec<u32>,
    #[arg(long, value_enum, default_value = "diagonal")]
    axis: Axis,
    /// Largest deviation in pixels (per axis for diagonal moves).
    #[arg(long, default_value_t = 16)]
    max_deviation: u32,
    #[arg(long = "b-size", value_enum, default_value = "equal")]
    b_size: BSize,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct AnchorArgs {
    #[arg(long, value_delimiter = ',', default_value = "4,8,16,32,64")]
    strides: Vec<u32>,
    #[arg(long, value_delimiter = ',', default_value = "8")]
    scales: Vec<f64>,
    /// Anchor aspect ratios (h/w).
    #[arg(long, value_delimiter = ',', default_value = "0.5,1,2")]
    ratios: Vec<f64>,
}

#[derive(Args)]
struct AssignStatsArgs {
    /// COCO-format annotation file.
    #[arg(long)]
    annotations: PathBuf,
    #[arg(
        long,
        value_enum,
        value_delimiter = ',',
        default_value = "iou,giou,diou,ciou,nwd"
    )]
    kinds: Vec<Kind>,
    #[arg(long, default_value_t = DEFAULT_NWD_CONSTANT)]
    c: f64,
    #[arg(long, default_value_t = DEFAULT_POS_THRESHOLD)]
    theta_p: f64,
    #[arg(long, default_value_t = DEFAULT_NEG_THRESHOLD)]
    theta_n: f64,
    #[command(flatten)]
    anchors: AnchorArgs,
    /// Clip ground truths to the image bounds on load.
    #[arg(long)]
    clip: bool,
    /// Worker threads; output is identical for any value.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[command(flatten)]
    output: Output,
}

#[derive(Args)]
struct NmsArgs {
    /// Detection file: JSON list of {bbox: [cx,cy,w,h], score, category_id, image_id}.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "iou")]
    kind: Kind,
    #[arg(long, default_value_t = DEFAULT_NWD_CONSTANT)]
    c: f64,
    #[arg(long, default_value_t = DEFAULT_NMS_THRESHOLD, allow_hyphen_values = true)]
    nms_threshold: f64,
    #[arg(long, default_value_t = DEFAULT_SCORE_FLOOR)]
    score_floor: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradCheckArgs {
    #[arg(long, value_enum)]
    kind: Kind,
    #[arg(long, default_value_t = DEFAULT_NWD_CONSTANT)]
    c: f64,
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    output: Output,
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthMode {
    /// Uniformly placed objects with random integer sizes.
    Random,
    /// Fixed-size objects displaced diagonally from anchor-grid centers.
    Offset,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_enum, default_value = "random")]
    mode: SynthMode,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    images: u64,
    /// Objects per image.
    #[arg(long, default_value_t = 50)]
    objects: usize,
    /// Random mode: smallest side in pixels.
    #[arg(long, default_value_t = 2)]
    min_size: u32,
    /// Random mode: largest side in pixels.
    #[arg(long, default_value_t = 16)]
    max_size: u32,
    #[arg(long, default_value_t = 256)]
    image_size: u32,
    /// Offset mode: ground-truth side in pixels.
    #[arg(long, default_value_t = 6)]
    gt_size: u32,
    /// Offset mode: anchor-grid stride in pixels.
    #[arg(long, default_value_t = 8)]
    stride: u32,
    /// Offset mode: smallest per-axis offset from the anchor center.
    #[arg(long, default_value_t = 2)]
    min_offset: u32,
    /// Offset mode: largest per-axis offset from the anchor center.
    #[arg(long, default_value_t = 4)]
    max_offset: u32,
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Data(String),
    Check(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidBox { .. }
            | Error::InvalidConstant(_)
            | Error::InvalidThresholds { .. }
            | Error::InvalidParameters(_) => Failure::Usage(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(path) => {
            fs::write(path, text).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
        }
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Failure::Data(format!("stdout: {e}"))),
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Metric(args) => {
            let kind = args.kind.metric(args.c)?;
            let value = nwd_core::similarity(kind, &args.a, &args.b)?;
            emit(args.out.as_deref(), &format!("{}\n", fmt_sig9(value)))
        }
        Command::Curve(args) => {
            let kind = args.kind.metric(args.c)?;
            let axis = match args.axis {
                Axis::Diagonal => DeviationAxis::Diagonal,
                Axis::Horizontal => DeviationAxis::Horizontal,
            };
            let mode = match args.b_size {
                BSize::Equal => BSizeMode::Equal,
                BSize::Half => BSizeMode::Half,
            };
            let table = curve_table(kind, &args.sizes, axis, args.max_deviation, mode)?;
            emit(
                args.output.out.as_deref(),
                &table.render(args.output.format.into())?,
            )
        }
        Command::AssignStats(args) => {
            let metrics = args
                .kinds
                .iter()
                .map(|k| k.metric(args.c))
                .collect::<Result<Vec<_>, _>>()?;
            let anchors = AnchorGridConfig::new(
                args.anchors.strides,
                args.anchors.scales,
                args.anchors.ratios,
            )?;
            let images = load_coco_with(&args.annotations, &LoadOptions { clip: args.clip })?;
            let stats = assignment_stats(
                &images,
                &anchors,
                &metrics,
                args.theta_p,
                args.theta_n,
                args.jobs,
            )?;
            let table = assignment_stats_table(&stats);
            emit(
                args.output.out.as_deref(),
                &table.render(args.output.format.into())?,
            )
        }
        Command::Nms(args) => {
            let cfg = NmsConfig::new(
                args.kind.metric(args.c)?,
                args.nms_threshold,
                args.score_floor,
            )?;
            let records = load_detections(&args.input)?;
            let kept = nms_per_image(&records, &cfg)?;
            emit(args.out.as_deref(), &detections_to_json(&kept))
        }
        Command::GradCheck(args) => {
            let report = grad_check(args.kind.metric(args.c)?, args.trials, args.seed)?;
            emit(
                args.output.out.as_deref(),
                &report.table().render(args.output.format.into())?,
            )?;
            if report.passed() {
                Ok(())
            } else {
                Err(Failure::Check(format!(
                    "{} of {} trials exceeded the gradient tolerance",
                    report.failures, report.trials
                )))
            }
        }
        Command::Synth(args) => {
            let images = (0..args.images)
                .map(|k| {
                    let seed = args.seed.wrapping_add(k);
                    match args.mode {
                        SynthMode::Random => synth_tiny_scene(
                            seed,
                            args.objects,
                            (args.min_size, args.max_size),
                            args.image_size,
                        ),
                        SynthMode::Offset => synth_offset_scene(
                            seed,
                            &OffsetSceneSpec {
                                n_objects: args.objects,
                                gt_size: args.gt_size,
                                stride: args.stride,
                                offset_range: (args.min_offset, args.max_offset),
                                image_size: args.image_size,
                            },
                        ),
                    }
                })
                .collect::<Result<Vec<_>, _>>()?;
            emit(args.out.as_deref(), &to_coco_json(&images))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_DATA)
        }
        Err(Failure::Check(msg)) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(EXIT_CHECK)
        }
    }
}
