use super::{Mechanism, PrivacyBudget, RngStream, SensitivityBound};
use crate::error::{Error, Result};

/// One draw from `Laplace(0, b)` by inverse CDF.
pub fn sample_laplace(rng: &mut RngStream, b: f64) -> f64 {
    let u = rng.uniform_open() - 0.5;
    -b * u.signum() * (-2.0 * u.abs()).ln_1p()
}

/// Adds i.i.d. `Laplace(0, b)` to every coordinate; `b = Δ₁/ε` gives ε-LDP.
#[derive(Clone, Debug, PartialEq)]
pub struct LaplaceMechanism {
    dim: usize,
    scale: f64,
}

impl LaplaceMechanism {
    pub fn new(dim: usize, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::Parameter(format!("Laplace scale must be positive, got {scale}")));
        }
        Ok(Self { dim, scale })
    }

    pub fn calibrate(dim: usize, l1_sensitivity: f64, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::Budget(format!("epsilon must be positive, got {epsilon}")));
        }
        if !(l1_sensitivity > 0.0) {
            return Err(Error::Parameter(format!("sensitivity must be positive, got {l1_sensitivity}")));
        }
        Self::new(dim, l1_sensitivity / epsilon)
    }

    /// Laplace is pure-ε; a budget with `δ > 0` is rejected.
    pub fn from_budget(dim: usize, budget: PrivacyBudget, sens: &SensitivityBound) -> Result<Self> {
        if budget.delta != 0.0 {
            return Err(Error::Budget(format!(
                "the Laplace mechanism is pure-epsilon; got delta = {}",
                budget.delta
            )));
        }
        Self::calibrate(dim, sens.delta1, budget.epsilon)
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Per-coordinate variance `2b²`.
    pub fn variance(&self) -> f64 {
        2.0 * self.scale * self.scale
    }
}

impl Mechanism for LaplaceMechanism {
    fn dim(&self) -> usize {
        self.dim
    }

    fn randomize(&self, y: &[f64], rng: &mut RngStream) -> Vec<f64> {
        assert_eq!(y.len(), self.dim, "Laplace input dimension");
        y.iter().map(|&v| v + sample_laplace(rng, self.scale)).collect()
    }
}
