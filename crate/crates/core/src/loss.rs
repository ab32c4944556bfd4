//! Box regression losses with analytic gradients.
//!
//! Every loss is `1 − similarity(pred, gt)` and its gradient is taken with
//! respect to the predicted box parameters `(cx, cy, w, h)`.

use std::f64::consts::PI;

use crate::error::Result;
use crate::geometry::BoundingBox;
use crate::metrics::{self, MetricKind};

/// Guard added under the square root of the NWD gradient denominator.
pub const NWD_GRAD_EPS: f64 = 1e-12;

/// Loss value and `[∂L/∂cx, ∂L/∂cy, ∂L/∂w, ∂L/∂h]` of the prediction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValueAndGrad {
    pub value: f64,
    pub grad: [f64; 4],
}

impl LossValueAndGrad {
    pub fn grad_norm(&self) -> f64 {
        self.grad.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    /// Norm of the `(cx, cy)` components only.
    pub fn position_grad_norm(&self) -> f64 {
        self.grad[0].hypot(self.grad[1])
    }
}

/// `L = 1 − exp(−W2(pred, gt) / c)`.
///
/// At `pred == gt` the distance is not differentiable; the gradient there is
/// the zero vector.
pub fn nwd_loss(pred: &BoundingBox, gt: &BoundingBox, c: f64) -> Result<LossValueAndGrad> {
    let similarity = metrics::nwd(pred, gt, c)?;
    let w2 = metrics::wasserstein_sq_boxes(pred, gt);
    let value = 1.0 - similarity;
    if w2 == 0.0 {
        return Ok(LossValueAndGrad {
            value,
            grad: [0.0; 4],
        });
    }
    // dL/dθ = NWD / c · dW2/dθ / (2 √W2²)
    let scale = similarity / c / (2.0 * (w2 + NWD_GRAD_EPS).sqrt());
    let grad = [
        scale * 2.0 * (pred.cx() - gt.cx()),
        scale * 2.0 * (pred.cy() - gt.cy()),
        scale * (pred.w() - gt.w()) / 2.0,
        scale * (pred.h() - gt.h()) / 2.0,
    ];
    Ok(LossValueAndGrad { value, grad })
}

/// Partial derivatives of the IoU-family building blocks with respect to the
/// predicted corners `[x1, y1, x2, y2]`.
struct OverlapTerms {
    inter: f64,
    union: f64,
    iou: f64,
    d_inter: [f64; 4],
    d_area: [f64; 4],
}

impl OverlapTerms {
    fn new(p: &BoundingBox, g: &BoundingBox) -> Self {
        let (iw, ih) = metrics::intersection_wh(p, g);
        let inter = iw * ih;
        let union = metrics::corner_area(p) + metrics::corner_area(g) - inter;

        let mut d_inter = [0.0; 4];
        if iw > 0.0 && ih > 0.0 {
            // The intersection edge follows the prediction only where the
            // prediction's edge is the binding one.
            if p.x1() > g.x1() {
                d_inter[0] = -ih;
            }
            if p.x2() < g.x2() {
                d_inter[2] = ih;
            }
            if p.y1() > g.y1() {
                d_inter[1] = -iw;
            }
            if p.y2() < g.y2() {
                d_inter[3] = iw;
            }
        }
        let d_area = [-p.h(), -p.w(), p.h(), p.w()];
        Self {
            inter,
            union,
            iou: if inter == 0.0 { 0.0 } else { inter / union },
            d_inter,
            d_area,
        }
    }

    fn d_union(&self) -> [f64; 4] {
        std::array::from_fn(|i| self.d_area[i] - self.d_inter[i])
    }

    fn d_iou(&self) -> [f64; 4] {
        if self.inter == 0.0 {
            return [0.0; 4];
        }
        let u2 = self.union * self.union;
        std::array::from_fn(|i| {
            (self.d_inter[i] * self.union - self.inter * (self.d_area[i] - self.d_inter[i])) / u2
        })
    }
}

/// Enclosing box size and its derivatives with respect to predicted corners.
fn enclosing_terms(p: &BoundingBox, g: &BoundingBox) -> (f64, f64, [f64; 4], [f64; 4]) {
    let (ew, eh) = metrics::enclosing_wh(p, g);
    let mut d_ew = [0.0; 4];
    let mut d_eh = [0.0; 4];
    if p.x1() < g.x1() {
        d_ew[0] = -1.0;
    }
    if p.x2() > g.x2() {
        d_ew[2] = 1.0;
    }
    if p.y1() < g.y1() {
        d_eh[1] = -1.0;
    }
    if p.y2() > g.y2() {
        d_eh[3] = 1.0;
    }
    (ew, eh, d_ew, d_eh)
}

/// Maps a gradient over corners `[x1, y1, x2, y2]` to `[cx, cy, w, h]`.
fn corners_to_center(d: [f64; 4]) -> [f64; 4] {
    [
        d[0] + d[2],
        d[1] + d[3],
        (d[2] - d[0]) / 2.0,
        (d[3] - d[1]) / 2.0,
    ]
}

fn from_similarity(value: f64, d_similarity: [f64; 4]) -> LossValueAndGrad {
    LossValueAndGrad {
        value: 1.0 - value,
        grad: d_similarity.map(|d| -d),
    }
}

/// `L = 1 − IoU`. Zero gradient whenever the boxes do not overlap, and zero
/// position gradient when one box strictly contains the other.
pub fn iou_loss(pred: &BoundingBox, gt: &BoundingBox) -> LossValueAndGrad {
    let t = OverlapTerms::new(pred, gt);
    from_similarity(t.iou, corners_to_center(t.d_iou()))
}

pub fn giou_loss(pred: &BoundingBox, gt: &BoundingBox) -> LossValueAndGrad {
    let t = OverlapTerms::new(pred, gt);
    let (ew, eh, d_ew, d_eh) = enclosing_terms(pred, gt);
    let enclosing = ew * eh;
    // GIoU = IoU − 1 + U/E
    let value = t.iou - (enclosing - t.union) / enclosing;
    let d_iou = t.d_iou();
    let d_union = t.d_union();
    let d_corner = std::array::from_fn(|i| {
        let d_enc = d_ew[i] * eh + ew * d_eh[i];
        d_iou[i] + (d_union[i] * enclosing - t.union * d_enc) / (enclosing * enclosing)
    });
    from_similarity(value, corners_to_center(d_corner))
}

/// DIoU value and its gradient in `[cx, cy, w, h]`, shared with CIoU.
fn diou_with_grad(pred: &BoundingBox, gt: &BoundingBox, t: &OverlapTerms) -> (f64, [f64; 4]) {
    let (ew, eh, d_ew, d_eh) = enclosing_terms(pred, gt);
    let diag = ew * ew + eh * eh;
    let dx = pred.cx() - gt.cx();
    let dy = pred.cy() - gt.cy();
    let rho = dx * dx + dy * dy;
    let value = t.iou - rho / diag;

    let d_iou = t.d_iou();
    let d_diag: [f64; 4] = std::array::from_fn(|i| 2.0 * ew * d_ew[i] + 2.0 * eh * d_eh[i]);
    // ρ² depends only on the center; handle it in center coordinates.
    let d_corner: [f64; 4] = std::array::from_fn(|i| d_iou[i] + rho * d_diag[i] / (diag * diag));
    let mut grad = corners_to_center(d_corner);
    grad[0] -= 2.0 * dx / diag;
    grad[1] -= 2.0 * dy / diag;
    (value, grad)
}

pub fn diou_loss(pred: &BoundingBox, gt: &BoundingBox) -> LossValueAndGrad {
    let t = OverlapTerms::new(pred, gt);
    let (value, grad) = diou_with_grad(pred, gt, &t);
    from_similarity(value, grad)
}

/// `L = 1 − CIoU`, differentiating through `α` as well as `v`.
pub fn ciou_loss(pred: &BoundingBox, gt: &BoundingBox) -> LossValueAndGrad {
    let t = OverlapTerms::new(pred, gt);
    let (diou, mut grad) = diou_with_grad(pred, gt, &t);

    let angle_diff = (pred.w() / pred.h()).atan() - (gt.w() / gt.h()).atan();
    let k = 4.0 / (PI * PI);
    let v = k * angle_diff * angle_diff;
    let s = (1.0 - t.iou) + v;
    if v == 0.0 || s == 0.0 {
        return from_similarity(diou, grad);
    }
    let alpha = v / s;
    let value = diou - alpha * v;

    // d(v²/S) = v(2S − v)/S² dv + v²/S² dIoU
    let (w, h) = (pred.w(), pred.h());
    let r2 = w * w + h * h;
    let dv_dw = 2.0 * k * angle_diff * h / r2;
    let dv_dh = -2.0 * k * angle_diff * w / r2;
    let coef_v = v * (2.0 * s - v) / (s * s);
    let coef_iou = v * v / (s * s);
    let d_iou = corners_to_center(t.d_iou());
    for i in 0..4 {
        grad[i] -= coef_iou * d_iou[i];
    }
    grad[2] -= coef_v * dv_dw;
    grad[3] -= coef_v * dv_dh;
    from_similarity(value, grad)
}

/// Loss for any metric kind.
pub fn loss(kind: MetricKind, pred: &BoundingBox, gt: &BoundingBox) -> Result<LossValueAndGrad> {
    Ok(match kind {
        MetricKind::Iou => iou_loss(pred, gt),
        MetricKind::Giou => giou_loss(pred, gt),
        MetricKind::Diou => diou_loss(pred, gt),
        MetricKind::Ciou => ciou_loss(pred, gt),
        MetricKind::Nwd { c } => nwd_loss(pred, gt, c)?,
    })
}
