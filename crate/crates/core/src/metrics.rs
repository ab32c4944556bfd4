//! Pairwise box similarity: the IoU family and the Normalized Wasserstein
//! Distance (NWD).

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BoundingBox, Gaussian2D};

/// Default NWD normalization constant, in pixels.
///
/// This is the mean absolute object size of the AI-TOD dataset. The constant
/// is dataset dependent; set it to the average object size of your data.
pub const DEFAULT_NWD_CONSTANT: f64 = 12.8;

/// Selects the similarity used by assignment, NMS and losses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MetricKind {
    Iou,
    Giou,
    Diou,
    Ciou,
    /// Normalized Wasserstein Distance with normalization constant `c` (pixels).
    Nwd {
        c: f64,
    },
}

impl MetricKind {
    pub const fn nwd_default() -> Self {
        MetricKind::Nwd {
            c: DEFAULT_NWD_CONSTANT,
        }
    }

    /// The four IoU-family metrics followed by NWD with constant `c`.
    pub fn all(c: f64) -> [MetricKind; 5] {
        [
            MetricKind::Iou,
            MetricKind::Giou,
            MetricKind::Diou,
            MetricKind::Ciou,
            MetricKind::Nwd { c },
        ]
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            MetricKind::Nwd { c } => check_constant(c),
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            MetricKind::Iou => "iou",
            MetricKind::Giou => "giou",
            MetricKind::Diou => "diou",
            MetricKind::Ciou => "ciou",
            MetricKind::Nwd { .. } => "nwd",
        }
    }

    /// Closed interval containing every value the metric can take.
    pub fn range(&self) -> (f64, f64) {
        match self {
            MetricKind::Iou | MetricKind::Nwd { .. } => (0.0, 1.0),
            MetricKind::Giou | MetricKind::Diou => (-1.0, 1.0),
            // DIoU ≥ −1 and the aspect penalty αv ≤ v ≤ 1.
            MetricKind::Ciou => (-2.0, 1.0),
        }
    }

    /// Evaluates the metric. The caller must have validated `self`.
    #[inline]
    pub(crate) fn eval(&self, a: &BoundingBox, b: &BoundingBox) -> f64 {
        match *self {
            MetricKind::Iou => iou(a, b),
            MetricKind::Giou => giou(a, b),
            MetricKind::Diou => diou(a, b),
            MetricKind::Ciou => ciou(a, b),
            MetricKind::Nwd { c } => nwd_unchecked(a, b, c),
        }
    }

    /// Parses a metric name, attaching `c` when the name is `nwd`.
    pub fn parse_with_constant(name: &str, c: f64) -> Result<Self> {
        let kind = match name.to_ascii_lowercase().as_str() {
            "iou" => MetricKind::Iou,
            "giou" => MetricKind::Giou,
            "diou" => MetricKind::Diou,
            "ciou" => MetricKind::Ciou,
            "nwd" => MetricKind::Nwd { c },
            other => {
                return Err(Error::InvalidParameters(format!(
                    "unknown metric `{other}` (expected iou, giou, diou, ciou or nwd)"
                )))
            }
        };
        kind.validate()?;
        Ok(kind)
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse_with_constant(s, DEFAULT_NWD_CONSTANT)
    }
}

fn check_constant(c: f64) -> Result<()> {
    if c > 0.0 && c.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidConstant(c))
    }
}

/// Overlap of the two boxes along each axis (clamped at zero).
#[inline]
pub(crate) fn intersection_wh(a: &BoundingBox, b: &BoundingBox) -> (f64, f64) {
    let iw = (a.x2().min(b.x2()) - a.x1().max(b.x1())).max(0.0);
    let ih = (a.y2().min(b.y2()) - a.y1().max(b.y1())).max(0.0);
    (iw, ih)
}

/// Area measured from the corners, so that the intersection of a box with
/// itself equals its area bit for bit.
#[inline]
pub(crate) fn corner_area(b: &BoundingBox) -> f64 {
    (b.x2() - b.x1()) * (b.y2() - b.y1())
}

/// Size of the smallest box enclosing both.
#[inline]
pub(crate) fn enclosing_wh(a: &BoundingBox, b: &BoundingBox) -> (f64, f64) {
    let ew = a.x2().max(b.x2()) - a.x1().min(b.x1());
    let eh = a.y2().max(b.y2()) - a.y1().min(b.y1());
    (ew, eh)
}

pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let (iw, ih) = intersection_wh(a, b);
    let inter = iw * ih;
    if inter == 0.0 {
        return 0.0;
    }
    inter / (corner_area(a) + corner_area(b) - inter)
}

/// IoU minus the fraction of the enclosing box not covered by the union.
pub fn giou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let (iw, ih) = intersection_wh(a, b);
    let inter = iw * ih;
    let union = corner_area(a) + corner_area(b) - inter;
    let (ew, eh) = enclosing_wh(a, b);
    let enclosing = ew * eh;
    inter / union - (enclosing - union) / enclosing
}

#[inline]
fn center_dist_sq(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let dx = a.cx() - b.cx();
    let dy = a.cy() - b.cy();
    dx * dx + dy * dy
}

/// IoU minus squared center distance over squared enclosing diagonal.
pub fn diou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let (ew, eh) = enclosing_wh(a, b);
    iou(a, b) - center_dist_sq(a, b) / (ew * ew + eh * eh)
}

/// Aspect-ratio consistency term `v` of CIoU.
#[inline]
pub(crate) fn aspect_term(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let d = (a.w() / a.h()).atan() - (b.w() / b.h()).atan();
    4.0 / (PI * PI) * d * d
}

/// DIoU minus `α·v`, with `α = v / ((1 − IoU) + v)` and `α = 0` when `v = 0`.
pub fn ciou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let overlap = iou(a, b);
    let (ew, eh) = enclosing_wh(a, b);
    let diou = overlap - center_dist_sq(a, b) / (ew * ew + eh * eh);
    let v = aspect_term(a, b);
    if v == 0.0 {
        return diou;
    }
    let alpha = v / ((1.0 - overlap) + v);
    diou - alpha * v
}

/// Squared 2-Wasserstein distance between two axis-aligned Gaussians, using
/// the general closed form
/// `‖m1−m2‖² + Tr(Σ1 + Σ2 − 2(Σ2^½ Σ1 Σ2^½)^½)`.
///
/// All matrices are diagonal, so every square root is taken element-wise.
pub fn wasserstein_sq_general(g1: &Gaussian2D, g2: &Gaussian2D) -> f64 {
    let mut dist = 0.0;
    for i in 0..2 {
        let dm = g1.mean[i] - g2.mean[i];
        dist += dm * dm;
    }
    let mut trace = 0.0;
    for i in 0..2 {
        let (s1, s2) = (g1.cov_diag[i], g2.cov_diag[i]);
        let root2 = s2.sqrt();
        let cross = (root2 * s1 * root2).sqrt();
        trace += s1 + s2 - 2.0 * cross;
    }
    // The trace term is a sum of squares analytically; rounding can make it
    // a hair negative when the covariances coincide.
    dist + trace.max(0.0)
}

/// Squared 2-Wasserstein distance in the Frobenius form
/// `‖m1−m2‖² + ‖Σ1^½ − Σ2^½‖_F²`.
pub fn wasserstein_sq_frobenius(g1: &Gaussian2D, g2: &Gaussian2D) -> f64 {
    let (r1, r2) = (g1.std_dev(), g2.std_dev());
    let mut sum = 0.0;
    for i in 0..2 {
        let dm = g1.mean[i] - g2.mean[i];
        let ds = r1[i] - r2[i];
        sum += dm * dm + ds * ds;
    }
    sum
}

/// Squared 2-Wasserstein distance between the Gaussians of two boxes:
/// the squared L2 distance between `[cx, cy, w/2, h/2]` vectors.
pub fn wasserstein_sq_boxes(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let dcx = a.cx() - b.cx();
    let dcy = a.cy() - b.cy();
    let dw = (a.w() - b.w()) / 2.0;
    let dh = (a.h() - b.h()) / 2.0;
    dcx * dcx + dcy * dcy + dw * dw + dh * dh
}

#[inline]
fn nwd_unchecked(a: &BoundingBox, b: &BoundingBox, c: f64) -> f64 {
    (-wasserstein_sq_boxes(a, b).sqrt() / c).exp()
}

/// Normalized Wasserstein Distance `exp(−W2 / c)`.
pub fn nwd(a: &BoundingBox, b: &BoundingBox, c: f64) -> Result<f64> {
    check_constant(c)?;
    Ok(nwd_unchecked(a, b, c))
}

/// Similarity of `a` and `b` under `kind`.
pub fn similarity(kind: MetricKind, a: &BoundingBox, b: &BoundingBox) -> Result<f64> {
    kind.validate()?;
    Ok(kind.eval(a, b))
}

/// Dense similarity matrix: `out[i][j] = similarity(rows[i], cols[j])`.
///
/// Rows are conventionally ground truths and columns candidates (anchors or
/// detections). Rows are computed in parallel; the result does not depend on
/// scheduling.
pub fn similarity_matrix(
    kind: MetricKind,
    rows: &[BoundingBox],
    cols: &[BoundingBox],
) -> Result<Vec<Vec<f64>>> {
    kind.validate()?;
    Ok(rows
        .par_iter()
        .map(|r| cols.iter().map(|c| kind.eval(r, c)).collect())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::box_to_gaussian;
    use proptest::prelude::*;

    fn bx(cx: f64, cy: f64, w: f64, h: f64) -> BoundingBox {
        BoundingBox::new(cx, cy, w, h).unwrap()
    }

    fn arb_box() -> impl Strategy<Value = BoundingBox> {
        (-50.0..50.0f64, -50.0..50.0f64, 0.5..40.0f64, 0.5..40.0f64)
            .prop_map(|(cx, cy, w, h)| bx(cx, cy, w, h))
    }

    #[test]
    fn iou_deviation_values() {
        let a = bx(3.0, 3.0, 6.0, 6.0);
        assert!((iou(&a, &bx(4.0, 4.0, 6.0, 6.0)) - 25.0 / 47.0).abs() < 1e-15);
        assert!((iou(&a, &bx(7.0, 7.0, 6.0, 6.0)) - 4.0 / 68.0).abs() < 1e-15);
        let a = bx(18.0, 18.0, 36.0, 36.0);
        assert!((iou(&a, &bx(19.0, 19.0, 36.0, 36.0)) - 1225.0 / 1367.0).abs() < 1e-15);
        assert!((iou(&a, &bx(22.0, 22.0, 36.0, 36.0)) - 1024.0 / 1568.0).abs() < 1e-15);
        assert_eq!(iou(&a, &a), 1.0);
    }

    #[test]
    fn iou_disjoint_and_touching() {
        let a = bx(1.0, 1.0, 2.0, 2.0);
        assert_eq!(iou(&a, &bx(5.0, 1.0, 2.0, 2.0)), 0.0);
        assert_eq!(iou(&a, &bx(3.0, 1.0, 2.0, 2.0)), 0.0);
    }

    #[test]
    fn giou_values() {
        let a = bx(1.0, 1.0, 2.0, 2.0);
        let b = bx(5.0, 1.0, 2.0, 2.0);
        assert!((giou(&a, &b) + 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(giou(&a, &a), 1.0);
        let outer = bx(0.0, 0.0, 10.0, 8.0);
        let inner = bx(1.0, -1.0, 3.0, 2.0);
        assert_eq!(giou(&outer, &inner), iou(&outer, &inner));
    }

    #[test]
    fn diou_values() {
        let a = bx(1.0, 1.0, 2.0, 2.0);
        let b = bx(5.0, 1.0, 2.0, 2.0);
        assert!((diou(&a, &b) + 0.4).abs() < 1e-15);
        assert_eq!(diou(&a, &a), 1.0);
        let big = bx(2.0, 2.0, 10.0, 6.0);
        let small = bx(2.0, 2.0, 3.0, 1.0);
        assert_eq!(diou(&big, &small), iou(&big, &small));
    }

    #[test]
    fn ciou_values() {
        let a = bx(0.0, 0.0, 2.0, 2.0);
        assert_eq!(ciou(&a, &a), 1.0);
        // Same aspect ratio: v = 0.
        let b = bx(3.0, 1.0, 4.0, 4.0);
        assert_eq!(ciou(&a, &b), diou(&a, &b));
        // Independent evaluation of the v/α chain for (0,0,2,2) vs (0,0,2,4):
        // IoU = 1/2, ρ = 0, v = 4/π²(atan 1 − atan ½)², α = v/(½ + v).
        let b = bx(0.0, 0.0, 2.0, 4.0);
        assert!((ciou(&a, &b) - 0.496_751_870_701_443).abs() < 1e-12);
    }

    #[test]
    fn wasserstein_values() {
        let g = |b: BoundingBox| box_to_gaussian(&b);
        let a = bx(0.0, 0.0, 6.0, 6.0);
        assert_eq!(wasserstein_sq_general(&g(a), &g(a)), 0.0);
        assert_eq!(
            wasserstein_sq_general(&g(a), &g(bx(1.0, 1.0, 6.0, 6.0))),
            2.0
        );
        assert_eq!(
            wasserstein_sq_general(&g(a), &g(bx(0.0, 0.0, 12.0, 12.0))),
            18.0
        );
        assert_eq!(wasserstein_sq_boxes(&a, &a), 0.0);
        assert_eq!(wasserstein_sq_boxes(&a, &bx(1.0, 1.0, 6.0, 6.0)), 2.0);
    }

    #[test]
    fn nwd_values() {
        let a = bx(0.0, 0.0, 6.0, 6.0);
        assert_eq!(nwd(&a, &a, 12.8).unwrap(), 1.0);
        assert_eq!(nwd(&a, &a, 0.1).unwrap(), 1.0);
        let v = nwd(&a, &bx(1.0, 1.0, 6.0, 6.0), 12.8).unwrap();
        assert!((v - 0.895_399_371_979_978_3).abs() < 1e-15);
        let small = nwd(&a, &bx(6.0, 6.0, 6.0, 6.0), 12.8).unwrap();
        let large = nwd(&bx(0.0, 0.0, 36.0, 36.0), &bx(6.0, 6.0, 36.0, 36.0), 12.8).unwrap();
        assert_eq!(small, large);
        assert!((small - 0.515_348_139_660_433_5).abs() < 1e-15);
    }

    #[test]
    fn nwd_rejects_bad_constant() {
        let a = bx(0.0, 0.0, 6.0, 6.0);
        assert!(matches!(nwd(&a, &a, 0.0), Err(Error::InvalidConstant(_))));
        assert!(nwd(&a, &a, -1.0).is_err());
        assert!(nwd(&a, &a, f64::NAN).is_err());
        assert!(similarity(MetricKind::Nwd { c: 0.0 }, &a, &a).is_err());
    }

    #[test]
    fn dispatch() {
        let a = bx(0.0, 0.0, 6.0, 6.0);
        assert_eq!(similarity(MetricKind::Iou, &a, &a).unwrap(), 1.0);
        let v = similarity(MetricKind::Nwd { c: 12.8 }, &a, &bx(1.0, 1.0, 6.0, 6.0)).unwrap();
        assert!((v - 0.8954).abs() < 1e-4);
        let g = similarity(
            MetricKind::Giou,
            &bx(1.0, 1.0, 2.0, 2.0),
            &bx(5.0, 1.0, 2.0, 2.0),
        );
        assert!((g.unwrap() + 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn parse_kinds() {
        assert_eq!("IoU".parse::<MetricKind>().unwrap(), MetricKind::Iou);
        assert_eq!(
            MetricKind::parse_with_constant("nwd", 4.0).unwrap(),
            MetricKind::Nwd { c: 4.0 }
        );
        assert!("jaccard".parse::<MetricKind>().is_err());
        assert!(MetricKind::parse_with_constant("nwd", -1.0).is_err());
    }

    #[test]
    fn matrix_layout() {
        let gts = [bx(0.0, 0.0, 4.0, 4.0), bx(10.0, 10.0, 4.0, 4.0)];
        let cands = [
            bx(0.0, 0.0, 4.0, 4.0),
            bx(1.0, 0.0, 4.0, 4.0),
            bx(10.0, 10.0, 4.0, 4.0),
        ];
        let m = similarity_matrix(MetricKind::Iou, &gts, &cands).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m[0].len(), 3);
        assert_eq!(m[0][0], 1.0);
        assert_eq!(m[1][2], 1.0);
        assert_eq!(m[1][0], 0.0);
        assert!((m[0][1] - 12.0 / 20.0).abs() < 1e-15);
    }

    #[test]
    fn nwd_separates_disjoint_boxes() {
        let a = bx(0.0, 0.0, 4.0, 4.0);
        let mut last = f64::INFINITY;
        for gap in 1..20 {
            let b = bx(4.0 + gap as f64, 0.0, 4.0, 4.0);
            assert_eq!(iou(&a, &b), 0.0);
            let v = nwd(&a, &b, 12.8).unwrap();
            assert!(v < last);
            last = v;
        }
    }

    #[test]
    fn nwd_tracks_size_of_nested_boxes() {
        let outer = bx(0.0, 0.0, 20.0, 20.0);
        let mut last = 1.0;
        for side in (1..20).rev() {
            let inner = bx(0.0, 0.0, side as f64, side as f64);
            let v = nwd(&outer, &inner, 12.8).unwrap();
            assert!(v < last);
            last = v;
        }
    }

    proptest! {
        #[test]
        fn symmetric(a in arb_box(), b in arb_box()) {
            for kind in MetricKind::all(12.8) {
                prop_assert_eq!(kind.eval(&a, &b), kind.eval(&b, &a), "{}", kind);
            }
        }

        #[test]
        fn identity_and_range(a in arb_box(), b in arb_box()) {
            for kind in MetricKind::all(12.8) {
                prop_assert_eq!(kind.eval(&a, &a), 1.0);
                let v = kind.eval(&a, &b);
                let (lo, hi) = kind.range();
                prop_assert!(v >= lo && v <= hi, "{kind} = {v}");
                if a != b {
                    prop_assert!(v < 1.0, "{kind} = {v}");
                }
            }
            prop_assert!(nwd(&a, &b, 12.8).unwrap() > 0.0);
        }

        #[test]
        fn wasserstein_forms_agree(a in arb_box(), b in arb_box()) {
            let (ga, gb) = (box_to_gaussian(&a), box_to_gaussian(&b));
            let general = wasserstein_sq_general(&ga, &gb);
            let frob = wasserstein_sq_frobenius(&ga, &gb);
            let vector = wasserstein_sq_boxes(&a, &b);
            prop_assert!((general - vector).abs() < 1e-9);
            prop_assert!((frob - vector).abs() < 1e-9);
        }

        #[test]
        fn nwd_translation_invariant(
            a in arb_box(), b in arb_box(), dx in -100i32..100, dy in -100i32..100,
        ) {
            let (dx, dy) = (dx as f64, dy as f64);
            let before = nwd(&a, &b, 12.8).unwrap();
            let after = nwd(&a.translated(dx, dy), &b.translated(dx, dy), 12.8).unwrap();
            prop_assert!((before - after).abs() < 1e-12);
        }

        #[test]
        fn nwd_scale_class_invariant(dx in -40i32..40, dy in -40i32..40, s in 1u32..64) {
            let (dx, dy, s) = (dx as f64, dy as f64, s as f64);
            let reference = nwd(&bx(0.0, 0.0, 1.0, 1.0), &bx(dx, dy, 1.0, 1.0), 12.8).unwrap();
            let v = nwd(&bx(0.0, 0.0, s, s), &bx(dx, dy, s, s), 12.8).unwrap();
            prop_assert_eq!(v, reference);
        }

        #[test]
        fn monotone_in_offset(
            a in arb_box(), ux in -1.0..1.0f64, uy in -1.0..1.0f64,
            t in 0.0..30.0f64, dt in 0.01..10.0f64,
        ) {
            prop_assume!(ux.abs() + uy.abs() > 0.1);
            let near = a.translated(ux * t, uy * t);
            let far = a.translated(ux * (t + dt), uy * (t + dt));
            prop_assert!(nwd(&a, &far, 12.8).unwrap() < nwd(&a, &near, 12.8).unwrap());
            prop_assert!(iou(&a, &far) <= iou(&a, &near) + 1e-12);
        }
    }
}
