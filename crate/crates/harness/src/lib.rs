//! Experiment harness: synthetic workloads shaped like household energy
//! forecasting and feature-space classification, task metrics, and the
//! seeded ε sweep comparing each mechanism with and without reshaping.
//!
//! A sweep is bit-reproducible from its config and master seed. Every cell
//! draws from its own stream derived from the mechanism id, ε index, and
//! seed index, so results do not depend on the worker count.

pub mod config;
pub mod data;
pub mod metrics;
pub mod sweep;

pub use config::{Check, ExperimentConfig, MechanismEntry, Statistic, Task};
pub use data::{gen_synthetic_classification, gen_synthetic_regression, Dataset, Split};
pub use metrics::{accuracy, rmse};
pub use sweep::{run_sweep, SweepReport, TrialResult};
