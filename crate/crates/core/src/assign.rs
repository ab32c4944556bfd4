//! Max-similarity positive/negative anchor labelling with a pluggable metric.
//!
//! An anchor is positive when it is some ground truth's best anchor with
//! similarity above the negative threshold, or when its similarity with any
//! ground truth exceeds the positive threshold. It is negative when its
//! similarity with every ground truth is below the negative threshold, and
//! ignored otherwise.
//!
//! Ties are broken by lowest index: an anchor is assigned to the first ground
//! truth attaining its maximum similarity, and a ground truth's best anchor is
//! the first anchor attaining that ground truth's maximum.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::metrics::{similarity_matrix, MetricKind};

pub const DEFAULT_POS_THRESHOLD: f64 = 0.7;
pub const DEFAULT_NEG_THRESHOLD: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    /// Positive, carrying the index of the ground truth with maximal similarity.
    Positive(usize),
    Negative,
    Ignore,
}

impl Label {
    pub fn is_positive(&self) -> bool {
        matches!(self, Label::Positive(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssignerConfig {
    pub metric: MetricKind,
    pub pos_threshold: f64,
    pub neg_threshold: f64,
    /// When set to `(width, height)`, anchors lying entirely outside the
    /// image are labelled `Ignore` and take no part in either positive rule.
    pub border: Option<(f64, f64)>,
}

impl AssignerConfig {
    pub fn new(metric: MetricKind, pos_threshold: f64, neg_threshold: f64) -> Result<Self> {
        let cfg = Self {
            metric,
            pos_threshold,
            neg_threshold,
            border: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_border(mut self, width: f64, height: f64) -> Self {
        self.border = Some((width, height));
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.metric.validate()?;
        let (pos, neg) = (self.pos_threshold, self.neg_threshold);
        if !(pos.is_finite() && neg.is_finite() && neg >= 0.0 && neg <= pos) {
            return Err(Error::InvalidThresholds { pos, neg });
        }
        Ok(())
    }
}

impl Default for AssignerConfig {
    fn default() -> Self {
        Self {
            metric: MetricKind::Iou,
            pos_threshold: DEFAULT_POS_THRESHOLD,
            neg_threshold: DEFAULT_NEG_THRESHOLD,
            border: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssignmentResult {
    pub labels: Vec<Label>,
    pub per_gt_positive_count: Vec<usize>,
}

impl AssignmentResult {
    pub fn num_positive(&self) -> usize {
        self.per_gt_positive_count.iter().sum()
    }

    pub fn num_negative(&self) -> usize {
        self.labels
            .iter()
            .filter(|l| **l == Label::Negative)
            .count()
    }

    pub fn num_ignore(&self) -> usize {
        self.labels.iter().filter(|l| **l == Label::Ignore).count()
    }

    /// Ground truths that received no positive anchor.
    pub fn zero_positive_gts(&self) -> usize {
        self.per_gt_positive_count
            .iter()
            .filter(|&&n| n == 0)
            .count()
    }

    pub fn avg_positives_per_gt(&self) -> Result<f64> {
        if self.per_gt_positive_count.is_empty() {
            return Err(Error::UndefinedStatistic(
                "average positives per ground truth needs at least one ground truth",
            ));
        }
        Ok(self.num_positive() as f64 / self.per_gt_positive_count.len() as f64)
    }
}

/// Labels every anchor against the ground truths.
pub fn assign(
    anchors: &[BoundingBox],
    gts: &[BoundingBox],
    cfg: &AssignerConfig,
) -> Result<AssignmentResult> {
    cfg.validate()?;
    if anchors.is_empty() {
        return Err(Error::InvalidParameters(
            "label assignment needs at least one anchor".into(),
        ));
    }
    let valid: Vec<bool> = anchors
        .iter()
        .map(|a| cfg.border.is_none_or(|(w, h)| !a.is_outside(w, h)))
        .collect();
    let inactive = |j: usize| {
        if valid[j] {
            Label::Negative
        } else {
            Label::Ignore
        }
    };

    if gts.is_empty() {
        return Ok(AssignmentResult {
            labels: (0..anchors.len()).map(inactive).collect(),
            per_gt_positive_count: Vec::new(),
        });
    }

    // rows: ground truths, columns: anchors
    let sim = similarity_matrix(cfg.metric, gts, anchors)?;

    // Best ground truth per anchor (first maximum wins).
    let mut best_gt = vec![0usize; anchors.len()];
    let mut best_sim = vec![f64::NEG_INFINITY; anchors.len()];
    for (i, row) in sim.iter().enumerate() {
        for (j, &s) in row.iter().enumerate() {
            if s > best_sim[j] {
                best_sim[j] = s;
                best_gt[j] = i;
            }
        }
    }

    let mut labels: Vec<Label> = (0..anchors.len())
        .map(|j| {
            if !valid[j] {
                Label::Ignore
            } else if best_sim[j] > cfg.pos_threshold {
                Label::Positive(best_gt[j])
            } else if best_sim[j] < cfg.neg_threshold {
                Label::Negative
            } else {
                Label::Ignore
            }
        })
        .collect();

    // Each ground truth's best anchor, if its similarity clears the negative
    // threshold, is positive regardless of the other rules.
    for row in &sim {
        let best = row.iter().enumerate().filter(|(j, _)| valid[*j]).fold(
            None,
            |acc: Option<(usize, f64)>, (j, &s)| match acc {
                Some((_, bs)) if s <= bs => acc,
                _ => Some((j, s)),
            },
        );
        if let Some((j, s)) = best {
            if s > cfg.neg_threshold {
                labels[j] = Label::Positive(best_gt[j]);
            }
        }
    }

    let mut per_gt_positive_count = vec![0usize; gts.len()];
    for label in &labels {
        if let Label::Positive(i) = label {
            per_gt_positive_count[*i] += 1;
        }
    }
    Ok(AssignmentResult {
        labels,
        per_gt_positive_count,
    })
}

/// Mean number of positive anchors per ground truth.
pub fn avg_positives_per_gt(
    anchors: &[BoundingBox],
    gts: &[BoundingBox],
    cfg: &AssignerConfig,
) -> Result<f64> {
    if gts.is_empty() {
        return Err(Error::UndefinedStatistic(
            "average positives per ground truth needs at least one ground truth",
        ));
    }
    assign(anchors, gts, cfg)?.avg_positives_per_gt()
}

/// Number of anchors whose label changes when every ground truth is shifted
/// by `deviation` pixels.
pub fn label_flip_count(
    anchors: &[BoundingBox],
    gts: &[BoundingBox],
    cfg: &AssignerConfig,
    deviation: (i64, i64),
) -> Result<usize> {
    let (dx, dy) = (deviation.0 as f64, deviation.1 as f64);
    let shifted: Vec<BoundingBox> = gts.iter().map(|g| g.translated(dx, dy)).collect();
    let before = assign(anchors, gts, cfg)?;
    let after = assign(anchors, &shifted, cfg)?;
    Ok(before
        .labels
        .iter()
        .zip(&after.labels)
        .filter(|(a, b)| a != b)
        .count())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::nwd;

    fn bx(cx: f64, cy: f64, w: f64, h: f64) -> BoundingBox {
        BoundingBox::new(cx, cy, w, h).unwrap()
    }

    fn iou_cfg() -> AssignerConfig {
        AssignerConfig::new(MetricKind::Iou, 0.7, 0.3).unwrap()
    }

    #[test]
    fn two_anchor_example() {
        let gts = [bx(3.0, 3.0, 6.0, 6.0)];
        let anchors = [bx(4.0, 4.0, 8.0, 8.0), bx(12.0, 4.0, 8.0, 8.0)];
        let r = assign(&anchors, &gts, &iou_cfg()).unwrap();
        assert_eq!(r.labels, vec![Label::Positive(0), Label::Negative]);
        assert_eq!(r.per_gt_positive_count, vec![1]);
        assert_eq!(r.avg_positives_per_gt().unwrap(), 1.0);
        assert_eq!(
            avg_positives_per_gt(&anchors, &gts, &iou_cfg()).unwrap(),
            1.0
        );
    }

    #[test]
    fn no_gts_means_all_negative() {
        let anchors = [bx(4.0, 4.0, 8.0, 8.0), bx(12.0, 4.0, 8.0, 8.0)];
        let r = assign(&anchors, &[], &iou_cfg()).unwrap();
        assert_eq!(r.labels, vec![Label::Negative; 2]);
        assert!(r.per_gt_positive_count.is_empty());
        assert!(matches!(
            avg_positives_per_gt(&anchors, &[], &iou_cfg()),
            Err(Error::UndefinedStatistic(_))
        ));
    }

    #[test]
    fn unmatched_gt_gets_no_positive() {
        // A 2x2 gt in the corner of an 8x8 anchor: IoU = 4/64 < 0.3.
        let gts = [bx(1.0, 1.0, 2.0, 2.0)];
        let anchors = [bx(4.0, 4.0, 8.0, 8.0), bx(12.0, 4.0, 8.0, 8.0)];
        let r = assign(&anchors, &gts, &iou_cfg()).unwrap();
        assert_eq!(r.per_gt_positive_count, vec![0]);
        assert_eq!(r.labels, vec![Label::Negative, Label::Negative]);
        assert_eq!(r.zero_positive_gts(), 1);
    }

    #[test]
    fn rejects_inverted_thresholds() {
        assert!(matches!(
            AssignerConfig::new(MetricKind::Iou, 0.3, 0.7),
            Err(Error::InvalidThresholds { .. })
        ));
        assert!(AssignerConfig::new(MetricKind::Iou, 0.5, -0.1).is_err());
        assert!(AssignerConfig::new(MetricKind::Nwd { c: 0.0 }, 0.7, 0.3).is_err());
        let anchors = [bx(4.0, 4.0, 8.0, 8.0)];
        assert!(assign(&[], &anchors, &iou_cfg()).is_err());
    }

    #[test]
    fn ties_go_to_lowest_indices() {
        // Two identical anchors: the first is the gt's best anchor.
        let gts = [bx(0.0, 0.0, 4.0, 4.0)];
        let anchors = [bx(1.0, 0.0, 4.0, 4.0), bx(1.0, 0.0, 4.0, 4.0)];
        let r = assign(&anchors, &gts, &iou_cfg()).unwrap();
        assert_eq!(r.labels, vec![Label::Positive(0), Label::Ignore]);

        // Two identical gts: the anchor records the first.
        let gts = [bx(0.0, 0.0, 4.0, 4.0), bx(0.0, 0.0, 4.0, 4.0)];
        let anchors = [bx(0.0, 0.0, 4.0, 4.0)];
        let r = assign(&anchors, &gts, &iou_cfg()).unwrap();
        assert_eq!(r.labels, vec![Label::Positive(0)]);
        assert_eq!(r.per_gt_positive_count, vec![1, 0]);
    }

    #[test]
    fn high_similarity_rule_adds_positives() {
        let gts = [bx(0.0, 0.0, 10.0, 10.0)];
        let anchors = [
            bx(0.0, 0.0, 10.0, 10.0),
            bx(0.5, 0.0, 10.0, 10.0),
            bx(4.0, 0.0, 10.0, 10.0),
            bx(30.0, 0.0, 10.0, 10.0),
        ];
        let r = assign(&anchors, &gts, &iou_cfg()).unwrap();
        // IoU of anchor 2 is 60/140 ≈ 0.43: neither positive nor negative.
        assert_eq!(
            r.labels,
            vec![
                Label::Positive(0),
                Label::Positive(0),
                Label::Ignore,
                Label::Negative
            ]
        );
        assert_eq!(r.num_positive(), 2);
        assert_eq!(r.num_negative(), 1);
        assert_eq!(r.num_ignore(), 1);
    }

    #[test]
    fn border_filter_ignores_outside_anchors() {
        let gts = [bx(2.0, 2.0, 4.0, 4.0)];
        let anchors = [
            bx(-10.0, 2.0, 4.0, 4.0),
            bx(2.0, 2.0, 4.0, 4.0),
            bx(40.0, 2.0, 4.0, 4.0),
        ];
        let cfg = iou_cfg().with_border(32.0, 32.0);
        let r = assign(&anchors, &gts, &cfg).unwrap();
        assert_eq!(
            r.labels,
            vec![Label::Ignore, Label::Positive(0), Label::Ignore]
        );
        let r = assign(&anchors, &[], &cfg).unwrap();
        assert_eq!(
            r.labels,
            vec![Label::Ignore, Label::Negative, Label::Ignore]
        );
    }

    #[test]
    fn flip_counts() {
        let anchors = [bx(3.0, 3.0, 6.0, 6.0)];
        let gts = [bx(4.0, 4.0, 6.0, 6.0)];
        assert_eq!(
            label_flip_count(&anchors, &gts, &iou_cfg(), (0, 0)).unwrap(),
            0
        );
        // IoU falls from 25/47 to 4/68, below θn: Positive becomes Negative.
        assert_eq!(
            label_flip_count(&anchors, &gts, &iou_cfg(), (3, 3)).unwrap(),
            1
        );

        let nwd_cfg = AssignerConfig::new(MetricKind::Nwd { c: 12.8 }, 0.7, 0.3).unwrap();
        let shifted = nwd(&anchors[0], &gts[0].translated(3.0, 3.0), 12.8).unwrap();
        assert!(shifted > 0.3);
        assert_eq!(
            label_flip_count(&anchors, &gts, &nwd_cfg, (3, 3)).unwrap(),
            0
        );
    }
}
