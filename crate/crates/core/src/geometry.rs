//! Box representations and the box-to-Gaussian model.
//!
//! Boxes live in center-size form `(cx, cy, w, h)`. A box is modeled as the
//! axis-aligned 2D Gaussian whose one-sigma contour is the box's inscribed
//! ellipse: mean `(cx, cy)`, covariance `diag(w²/4, h²/4)`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box in center-size form. Width and height are always positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    cx: f64,
    cy: f64,
    w: f64,
    h: f64,
}

impl BoundingBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        if !(w > 0.0 && h > 0.0 && w.is_finite() && h.is_finite())
            || !cx.is_finite()
            || !cy.is_finite()
        {
            return Err(Error::InvalidBox { w, h });
        }
        Ok(Self { cx, cy, w, h })
    }

    /// Builds a box from corner coordinates `(x1, y1, x2, y2)`.
    pub fn from_corners(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let w = x2 - x1;
        let h = y2 - y1;
        Self::new(x1 + w / 2.0, y1 + h / 2.0, w, h)
    }

    /// Builds a box from the COCO convention: top-left corner plus size.
    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(x + w / 2.0, y + h / 2.0, w, h)
    }

    #[inline]
    pub fn cx(&self) -> f64 {
        self.cx
    }

    #[inline]
    pub fn cy(&self) -> f64 {
        self.cy
    }

    #[inline]
    pub fn w(&self) -> f64 {
        self.w
    }

    #[inline]
    pub fn h(&self) -> f64 {
        self.h
    }

    #[inline]
    pub fn x1(&self) -> f64 {
        self.cx - self.w / 2.0
    }

    #[inline]
    pub fn y1(&self) -> f64 {
        self.cy - self.h / 2.0
    }

    #[inline]
    pub fn x2(&self) -> f64 {
        self.cx + self.w / 2.0
    }

    #[inline]
    pub fn y2(&self) -> f64 {
        self.cy + self.h / 2.0
    }

    /// `[x1, y1, x2, y2]`
    pub fn corners(&self) -> [f64; 4] {
        [self.x1(), self.y1(), self.x2(), self.y2()]
    }

    /// `[x, y, w, h]` with `(x, y)` the top-left corner.
    pub fn to_xywh(&self) -> [f64; 4] {
        [self.x1(), self.y1(), self.w, self.h]
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.cx, self.cy, self.w, self.h]
    }

    #[inline]
    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// The same box shifted by `(dx, dy)`.
    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self {
            cx: self.cx + dx,
            cy: self.cy + dy,
            ..*self
        }
    }

    /// Clips the box to `[0, width] × [0, height]`.
    pub fn clipped(&self, width: f64, height: f64) -> Result<Self> {
        let x1 = self.x1().clamp(0.0, width);
        let y1 = self.y1().clamp(0.0, height);
        let x2 = self.x2().clamp(0.0, width);
        let y2 = self.y2().clamp(0.0, height);
        Self::from_corners(x1, y1, x2, y2)
    }

    /// True when the box has no overlap with `[0, width] × [0, height]`.
    pub fn is_outside(&self, width: f64, height: f64) -> bool {
        self.x2() <= 0.0 || self.y2() <= 0.0 || self.x1() >= width || self.y1() >= height
    }
}

impl TryFrom<[f64; 4]> for BoundingBox {
    type Error = Error;

    fn try_from(v: [f64; 4]) -> Result<Self> {
        Self::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        b.to_array()
    }
}

/// Axis-aligned 2D Gaussian: mean vector and the diagonal of its covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian2D {
    pub mean: [f64; 2],
    pub cov_diag: [f64; 2],
}

impl Gaussian2D {
    fn check(&self) -> Result<()> {
        let [sx, sy] = self.cov_diag;
        if sx > 0.0 && sy > 0.0 {
            Ok(())
        } else {
            Err(Error::SingularCovariance(sx, sy))
        }
    }

    /// Element-wise square root of the covariance, i.e. `(σx, σy)`.
    pub fn std_dev(&self) -> [f64; 2] {
        [self.cov_diag[0].sqrt(), self.cov_diag[1].sqrt()]
    }
}

impl From<&BoundingBox> for Gaussian2D {
    fn from(b: &BoundingBox) -> Self {
        box_to_gaussian(b)
    }
}

/// Models a box as `N((cx, cy), diag(w²/4, h²/4))`.
///
/// Infallible because `BoundingBox` cannot hold a nonpositive size.
pub fn box_to_gaussian(b: &BoundingBox) -> Gaussian2D {
    Gaussian2D {
        mean: [b.cx, b.cy],
        cov_diag: [b.w * b.w / 4.0, b.h * b.h / 4.0],
    }
}

/// Squared Mahalanobis distance `(x−μ)ᵀ Σ⁻¹ (x−μ)`.
pub fn mahalanobis_sq(g: &Gaussian2D, point: [f64; 2]) -> Result<f64> {
    g.check()?;
    let dx = point[0] - g.mean[0];
    let dy = point[1] - g.mean[1];
    Ok(dx * dx / g.cov_diag[0] + dy * dy / g.cov_diag[1])
}

/// Density of `g` at `point`.
pub fn gaussian_pdf(g: &Gaussian2D, point: [f64; 2]) -> Result<f64> {
    let m = mahalanobis_sq(g, point)?;
    let det_sqrt = (g.cov_diag[0] * g.cov_diag[1]).sqrt();
    Ok((-0.5 * m).exp() / (2.0 * PI * det_sqrt))
}
