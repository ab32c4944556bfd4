//! Bounding-box similarity toolkit built around the Normalized Wasserstein
//! Distance (NWD).
//!
//! Boxes are modeled as 2D Gaussians and compared with the closed-form
//! 2-Wasserstein distance, normalized to `(0, 1]`. The crate provides the
//! IoU-family metrics for comparison, and the three detector components that
//! consume a similarity metric: anchor label assignment, non-maximum
//! suppression, and box regression losses with analytic gradients.

pub mod analysis;
pub mod annotation;
pub mod assign;
pub mod error;
pub mod geometry;
pub mod loss;
pub mod metrics;
pub mod nms;
pub mod report;
pub mod rng;

pub use assign::{assign, AssignerConfig, AssignmentResult, Label};
pub use error::{Error, Result};
pub use geometry::{box_to_gaussian, BoundingBox, Gaussian2D};
pub use loss::LossValueAndGrad;
pub use metrics::{nwd, similarity, MetricKind, DEFAULT_NWD_CONSTANT};
pub use nms::{nms, Detection, NmsConfig};
