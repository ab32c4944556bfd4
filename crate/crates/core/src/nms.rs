//! Greedy class-wise non-maximum suppression with a pluggable metric.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::metrics::MetricKind;

pub const DEFAULT_NMS_THRESHOLD: f64 = 0.5;
pub const DEFAULT_SCORE_FLOOR: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub bbox: BoundingBox,
    pub score: f64,
    pub category: i64,
}

impl Detection {
    pub fn new(bbox: BoundingBox, score: f64, category: i64) -> Self {
        Self {
            bbox,
            score,
            category,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NmsConfig {
    pub metric: MetricKind,
    /// A detection is suppressed when its similarity to a kept detection of
    /// the same category is strictly greater than this.
    pub threshold: f64,
    /// Detections scoring below this are dropped before suppression.
    pub score_floor: f64,
}

impl NmsConfig {
    pub fn new(metric: MetricKind, threshold: f64, score_floor: f64) -> Result<Self> {
        let cfg = Self {
            metric,
            threshold,
            score_floor,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.metric.validate()?;
        let (lo, hi) = self.metric.range();
        if !(self.threshold >= lo && self.threshold <= hi) {
            return Err(Error::InvalidParameters(format!(
                "NMS threshold {} outside the {} range [{lo}, {hi}]",
                self.threshold, self.metric
            )));
        }
        if !(0.0..=1.0).contains(&self.score_floor) {
            return Err(Error::InvalidParameters(format!(
                "score floor {} outside [0, 1]",
                self.score_floor
            )));
        }
        Ok(())
    }
}

impl Default for NmsConfig {
    fn default() -> Self {
        Self {
            metric: MetricKind::Iou,
            threshold: DEFAULT_NMS_THRESHOLD,
            score_floor: DEFAULT_SCORE_FLOOR,
        }
    }
}

/// Descending score, then ascending input index.
fn rank(dets: &[Detection], a: usize, b: usize) -> Ordering {
    dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b))
}

/// Runs NMS and returns the surviving detections in descending score order
/// (input order among equal scores).
pub fn nms(dets: &[Detection], cfg: &NmsConfig) -> Result<Vec<Detection>> {
    Ok(nms_indices(dets, cfg)?
        .into_iter()
        .map(|i| dets[i])
        .collect())
}

/// Like [`nms`] but returns indices into `dets`.
pub fn nms_indices(dets: &[Detection], cfg: &NmsConfig) -> Result<Vec<usize>> {
    cfg.validate()?;
    let mut order: Vec<usize> = (0..dets.len())
        .filter(|&i| dets[i].score >= cfg.score_floor)
        .collect();
    order.sort_by(|&a, &b| rank(dets, a, b));

    let mut by_category: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for &i in &order {
        by_category.entry(dets[i].category).or_default().push(i);
    }

    let mut keep = Vec::new();
    for candidates in by_category.values() {
        let mut suppressed = vec![false; candidates.len()];
        for (k, &i) in candidates.iter().enumerate() {
            if suppressed[k] {
                continue;
            }
            keep.push(i);
            let kept = &dets[i].bbox;
            for (s, &j) in suppressed[k + 1..].iter_mut().zip(&candidates[k + 1..]) {
                if !*s && cfg.metric.eval(kept, &dets[j].bbox) > cfg.threshold {
                    *s = true;
                }
            }
        }
    }
    keep.sort_by(|&a, &b| rank(dets, a, b));
    Ok(keep)
}

/// Literal quadratic NMS used as a test oracle: repeatedly take the best
/// remaining detection and discard everything of its category that overlaps
/// it too much.
pub fn nms_reference(dets: &[Detection], cfg: &NmsConfig) -> Result<Vec<Detection>> {
    cfg.validate()?;
    let mut remaining: Vec<usize> = (0..dets.len())
        .filter(|&i| dets[i].score >= cfg.score_floor)
        .collect();
    let mut out = Vec::new();
    while !remaining.is_empty() {
        let best = *remaining
            .iter()
            .min_by(|&&a, &&b| rank(dets, a, b))
            .expect("nonempty");
        out.push(dets[best]);
        remaining.retain(|&j| {
            j != best
                && !(dets[j].category == dets[best].category
                    && cfg.metric.eval(&dets[best].bbox, &dets[j].bbox) > cfg.threshold)
        });
    }
    Ok(out)
}
