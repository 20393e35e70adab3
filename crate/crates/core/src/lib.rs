//! Anisotropic noise reshaping for local differential privacy.
//!
//! A public model's averaged Jacobian outer product identifies which input
//! directions matter to the downstream task. Records are whitened into a
//! coordinate system where those directions are stretched, bounded,
//! randomized by a standard LDP mechanism, and mapped back, so the released
//! noise concentrates where the model is insensitive.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the
//! mechanisms compute in `f64`.

// `!(x > 0.0)` is used on purpose: it rejects NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod io;
pub mod linalg;
pub mod mechanisms;
pub mod models;
pub mod pipeline;
mod scalar;
pub mod special;
pub mod subspace;

pub use error::{Error, Result};
pub use linalg::Matrix;
pub use mechanisms::{Norm, PrivacyBudget, RngStream};
pub use models::{DifferentiableModel, Model};
pub use pipeline::{Calibration, Pipeline, PipelineConfig};
pub use scalar::Scalar;
pub use subspace::ReshapeTransform;

pub type Matrix64 = Matrix<f64>;
pub type Matrix32 = Matrix<f32>;
pub type Model64 = Model<f64>;
pub type Model32 = Model<f32>;
pub type ReshapeTransform64 = ReshapeTransform<f64>;
pub type ReshapeTransform32 = ReshapeTransform<f32>;
pub type Calibration64 = Calibration<f64>;
pub type Calibration32 = Calibration<f32>;
pub type Pipeline64 = Pipeline<f64>;
pub type Pipeline32 = Pipeline<f32>;
