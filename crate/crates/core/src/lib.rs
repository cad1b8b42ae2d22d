//! Prognostics engine: remaining-useful-life estimation and short-horizon
//! failure prediction from multivariate sensor sequences.
//!
//! The numeric core is generic over the floating point type through
//! [`Scalar`]; the aliases at the bottom of this file fix it to `f64`, which
//! is what the training code and the CLI use.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diffcore;
pub mod error;
pub mod metrics;
pub mod models;
pub mod pipeline;
pub mod scalar;
pub mod weibull;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Dense tensor in double precision.
pub type Tensor = diffcore::Tensor<f64>;
/// Named trainable parameters in double precision.
pub type ModelParams = diffcore::ModelParams<f64>;
/// Adam state in double precision.
pub type OptimizerState = diffcore::OptimizerState<f64>;
/// Weibull `(lambda, k)` pair in double precision.
pub type WeibullParams = weibull::WeibullParams<f64>;
/// Recurrent network in double precision.
pub type Network = models::Network<f64>;

/// Per-window model output in double precision.
pub type PredictionRecord = models::PredictionRecord<f64>;

/// Scored binary label in double precision.
pub type ScoredLabel = metrics::ScoredLabel<f64>;
