//! Soft-set confusion matrices and annealed surrogate training for metric-targeted classifiers.
//!
//! The numerical core is generic over [`Scalar`]; the aliases below fix it to `f64`,
//! which is what the model, trainer and verification code use.

// `!(x > 0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod diffengine;
pub mod error;
pub mod heaviside;
pub mod metrics;
pub mod model;
pub mod scalar;
pub mod softset;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
pub use metrics::{MetricKind, MetricSpec};
pub use model::MlpParams;
pub use scalar::Scalar;
pub use trainer::{fit, LossKind, TrainConfig};

pub type Tensor = diffengine::Tensor<f64>;
pub type Graph = diffengine::Graph<f64>;
pub type Temperature = heaviside::Temperature<f64>;
pub type ThresholdParams = heaviside::ThresholdParams<f64>;
pub type ProbVector = softset::ProbVector<f64>;
pub type SoftLabel = softset::SoftLabel<f64>;
pub type ConfusionMatrix = softset::SoftConfusionMatrix<f64>;
