//! Metric sensitivity curves, dataset-level assignment statistics and
//! finite-difference gradient checks.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::annotation::{generate_anchors, AnchorGridConfig, AnnotatedImage, DetectionRecord};
use crate::assign::{assign, AssignerConfig};
use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::loss::loss;
use crate::metrics::MetricKind;
use crate::nms::{nms_indices, NmsConfig};
use crate::report::Table;
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeviationAxis {
    /// Offset `(d, d)`; the reported deviation is `d` pixels per axis.
    Diagonal,
    /// Offset `(d, 0)`.
    Horizontal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BSizeMode {
    Equal,
    /// The moving box has half the side length of the reference box.
    Half,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveSpec {
    pub metric: MetricKind,
    pub gt_size: u32,
    pub axis: DeviationAxis,
    pub max_deviation: u32,
    pub b_size_mode: BSizeMode,
}

/// Metric value between a square reference box `A = (s/2, s/2, s, s)` and a
/// box `B` whose center is moved by each integer deviation in
/// `0..=max_deviation`.
pub fn curve(spec: &CurveSpec) -> Result<Vec<(u32, f64)>> {
    spec.metric.validate()?;
    if spec.gt_size == 0 || spec.max_deviation == 0 {
        return Err(Error::InvalidParameters(
            "curve needs a positive box size and max deviation >= 1".into(),
        ));
    }
    let side = spec.gt_size as f64;
    let a = BoundingBox::new(side / 2.0, side / 2.0, side, side)?;
    let b_side = match spec.b_size_mode {
        BSizeMode::Equal => side,
        BSizeMode::Half => side / 2.0,
    };
    (0..=spec.max_deviation)
        .map(|d| {
            let off = d as f64;
            let (dx, dy) = match spec.axis {
                DeviationAxis::Diagonal => (off, off),
                DeviationAxis::Horizontal => (off, 0.0),
            };
            let b = BoundingBox::new(a.cx() + dx, a.cy() + dy, b_side, b_side)?;
            Ok((d, spec.metric.eval(&a, &b)))
        })
        .collect()
}

/// Side-by-side curves for several box sizes: one `deviation` column and one
/// value column per size.
pub fn curve_table(
    metric: MetricKind,
    sizes: &[u32],
    axis: DeviationAxis,
    max_deviation: u32,
    b_size_mode: BSizeMode,
) -> Result<Table> {
    let curves = sizes
        .iter()
        .map(|&gt_size| {
            curve(&CurveSpec {
                metric,
                gt_size,
                axis,
                max_deviation,
                b_size_mode,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut headers = vec!["deviation_px".to_string()];
    headers.extend(sizes.iter().map(|s| format!("{metric}_size{s}px")));
    let mut table = Table::new(headers);
    for d in 0..=max_deviation as usize {
        let mut row = vec![(d as i64).into()];
        row.extend(curves.iter().map(|c| c[d].1.into()));
        table.push(row);
    }
    Ok(table)
}

/// Aggregate assignment statistics for one metric over a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentStats {
    pub metric: MetricKind,
    pub images: usize,
    pub gts: usize,
    pub positives: usize,
    pub negatives: usize,
    pub ignores: usize,
    pub zero_positive_gts: usize,
}

impl AssignmentStats {
    pub fn avg_positives_per_gt(&self) -> f64 {
        self.positives as f64 / self.gts as f64
    }

    pub fn zero_positive_fraction(&self) -> f64 {
        self.zero_positive_gts as f64 / self.gts as f64
    }
}

/// Runs label assignment on every image for each metric.
///
/// Images are processed on `jobs` worker threads and reduced in image order,
/// so the result does not depend on `jobs`.
pub fn assignment_stats(
    images: &[AnnotatedImage],
    anchors: &AnchorGridConfig,
    metrics: &[MetricKind],
    pos_threshold: f64,
    neg_threshold: f64,
    jobs: usize,
) -> Result<Vec<AssignmentStats>> {
    let total_gts: usize = images.iter().map(|i| i.gts.len()).sum();
    if total_gts == 0 {
        return Err(Error::UndefinedStatistic(
            "dataset has no ground-truth boxes; positives per ground truth is undefined",
        ));
    }
    let configs = metrics
        .iter()
        .map(|&m| AssignerConfig::new(m, pos_threshold, neg_threshold))
        .collect::<Result<Vec<_>>>()?;
    anchors.validate()?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidParameters(format!("thread pool: {e}")))?;

    // Per image, per metric: (positives, negatives, ignores, zero-positive gts).
    let per_image: Vec<Vec<[usize; 4]>> = pool.install(|| {
        images
            .par_iter()
            .map(|img| {
                let grid = generate_anchors(img.width, img.height, anchors)?;
                let boxes = img.boxes();
                configs
                    .iter()
                    .map(|cfg| {
                        let r = assign(&grid, &boxes, cfg)?;
                        Ok([
                            r.num_positive(),
                            r.num_negative(),
                            r.num_ignore(),
                            r.zero_positive_gts(),
                        ])
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()
    })?;

    Ok(configs
        .iter()
        .enumerate()
        .map(|(m, cfg)| {
            let mut sums = [0usize; 4];
            for counts in &per_image {
                for k in 0..4 {
                    sums[k] += counts[m][k];
                }
            }
            AssignmentStats {
                metric: cfg.metric,
                images: images.len(),
                gts: total_gts,
                positives: sums[0],
                negatives: sums[1],
                ignores: sums[2],
                zero_positive_gts: sums[3],
            }
        })
        .collect())
}

pub fn assignment_stats_table(stats: &[AssignmentStats]) -> Table {
    let mut table = Table::new([
        "metric",
        "images",
        "gts",
        "avg_positives_per_gt",
        "zero_positive_gt_fraction",
        "positives",
        "negatives",
        "ignores",
    ]);
    for s in stats {
        table.push(vec![
            s.metric.name().into(),
            s.images.into(),
            s.gts.into(),
            s.avg_positives_per_gt().into(),
            s.zero_positive_fraction().into(),
            s.positives.into(),
            s.negatives.into(),
            s.ignores.into(),
        ]);
    }
    table
}

/// Runs NMS independently on each image of a detection file.
///
/// Output is grouped by ascending image id; within an image, detections are
/// in descending score order (input order among ties).
pub fn nms_per_image(records: &[DetectionRecord], cfg: &NmsConfig) -> Result<Vec<DetectionRecord>> {
    cfg.validate()?;
    let mut by_image: BTreeMap<u64, Vec<DetectionRecord>> = BTreeMap::new();
    for r in records {
        by_image.entry(r.image_id).or_default().push(*r);
    }
    let mut out = Vec::new();
    for group in by_image.values() {
        let dets: Vec<_> = group.iter().map(DetectionRecord::detection).collect();
        out.extend(nms_indices(&dets, cfg)?.into_iter().map(|i| group[i]));
    }
    Ok(out)
}

pub const GRAD_CHECK_STEP: f64 = 1e-6;
pub const GRAD_CHECK_TOLERANCE: f64 = 1e-5;

/// Minimum distance kept between parallel edges of the two boxes, so that
/// no finite-difference probe straddles a kink of the IoU family.
const EDGE_MARGIN: f64 = 1e-3;

/// Central finite differences of `f` at the box parameters `(cx, cy, w, h)`.
pub fn central_difference(
    f: impl Fn(&BoundingBox) -> Result<f64>,
    at: &BoundingBox,
    step: f64,
) -> Result<[f64; 4]> {
    let p = at.to_array();
    let mut out = [0.0; 4];
    for (i, slot) in out.iter_mut().enumerate() {
        let mut hi = p;
        let mut lo = p;
        hi[i] += step;
        lo[i] -= step;
        *slot = (f(&BoundingBox::try_from(hi)?)? - f(&BoundingBox::try_from(lo)?)?) / (2.0 * step);
    }
    Ok(out)
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, zero when both vectors are zero.
pub fn relative_error(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    let norm = |v: &[f64; 4]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: [f64; 4] = std::array::from_fn(|i| a[i] - b[i]);
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// True when the pair sits away from every non-smooth configuration: edge
/// coincidences (including touching boxes) and `pred == gt`.
pub fn is_smooth_pair(p: &BoundingBox, g: &BoundingBox) -> bool {
    let xs = [p.x1(), p.x2()];
    let gxs = [g.x1(), g.x2()];
    let ys = [p.y1(), p.y2()];
    let gys = [g.y1(), g.y2()];
    let apart = |a: &[f64; 2], b: &[f64; 2]| {
        a.iter()
            .all(|u| b.iter().all(|v| (u - v).abs() > EDGE_MARGIN))
    };
    let d: f64 = p
        .to_array()
        .iter()
        .zip(g.to_array())
        .map(|(u, v)| (u - v) * (u - v))
        .sum::<f64>()
        .sqrt();
    apart(&xs, &gxs) && apart(&ys, &gys) && d > 1e-5
}

/// Draws a random smooth (pred, gt) pair. The prediction's center lies within
/// one gt size of the gt center, so most pairs overlap and some do not.
pub fn random_pair(rng: &mut SeededRng) -> (BoundingBox, BoundingBox) {
    loop {
        let gw = rng.uniform(2.0, 32.0);
        let gh = rng.uniform(2.0, 32.0);
        let gt = BoundingBox::new(rng.uniform(0.0, 64.0), rng.uniform(0.0, 64.0), gw, gh)
            .expect("positive size");
        let pred = BoundingBox::new(
            gt.cx() + rng.uniform(-gw, gw),
            gt.cy() + rng.uniform(-gh, gh),
            rng.uniform(2.0, 32.0),
            rng.uniform(2.0, 32.0),
        )
        .expect("positive size");
        if is_smooth_pair(&pred, &gt) {
            return (pred, gt);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub metric: MetricKind,
    pub trials: usize,
    pub seed: u64,
    pub failures: usize,
    pub max_relative_error: f64,
    /// Trials where the boxes do not overlap.
    pub disjoint_pairs: usize,
    /// Trials where the analytic position gradient `(∂/∂cx, ∂/∂cy)` is zero.
    pub zero_position_gradient: usize,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }

    pub fn table(&self) -> Table {
        let mut table = Table::new([
            "loss",
            "trials",
            "seed",
            "failures",
            "max_relative_error",
            "tolerance",
            "disjoint_pairs",
            "zero_position_gradient",
            "status",
        ]);
        table.push(vec![
            format!("{}_loss", self.metric.name()).into(),
            self.trials.into(),
            self.seed.to_string().into(),
            self.failures.into(),
            self.max_relative_error.into(),
            GRAD_CHECK_TOLERANCE.into(),
            self.disjoint_pairs.into(),
            self.zero_position_gradient.into(),
            if self.passed() { "pass" } else { "fail" }.into(),
        ]);
        table
    }
}

/// Compares analytic loss gradients with central finite differences on
/// `trials` random pairs.
pub fn grad_check(metric: MetricKind, trials: usize, seed: u64) -> Result<GradCheckReport> {
    metric.validate()?;
    if trials == 0 {
        return Err(Error::InvalidParameters(
            "gradient check needs at least one trial".into(),
        ));
    }
    let mut rng = SeededRng::new(seed);
    let mut report = GradCheckReport {
        metric,
        trials,
        seed,
        failures: 0,
        max_relative_error: 0.0,
        disjoint_pairs: 0,
        zero_position_gradient: 0,
    };
    for _ in 0..trials {
        let (pred, gt) = random_pair(&mut rng);
        let analytic = loss(metric, &pred, &gt)?;
        let numeric =
            central_difference(|p| Ok(loss(metric, p, &gt)?.value), &pred, GRAD_CHECK_STEP)?;
        let err = relative_error(&analytic.grad, &numeric);
        report.max_relative_error = report.max_relative_error.max(err);
        if err.is_nan() || err >= GRAD_CHECK_TOLERANCE {
            report.failures += 1;
        }
        if crate::metrics::iou(&pred, &gt) == 0.0 {
            report.disjoint_pairs += 1;
        }
        if analytic.position_grad_norm() == 0.0 {
            report.zero_position_gradient += 1;
        }
    }
    Ok(report)
}
