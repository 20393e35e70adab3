use serde::{Deserialize, Serialize};

use super::{sample_laplace, Mechanism, RngStream};
use crate::error::{Error, Result};

/// How a budget is divided among coordinates with different ranges.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoordinateAllocation {
    /// Every coordinate spends `ε/m`: `b_j = m Δ_j / ε`.
    #[default]
    EqualRatio,
    /// Minimizes `Σ b_j²` under `Σ Δ_j/b_j = ε`:
    /// `b_j = Δ_j^{1/3} Σ_k Δ_k^{2/3} / ε`.
    MseOptimal,
}

impl std::str::FromStr for CoordinateAllocation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "equal-ratio" => Ok(Self::EqualRatio),
            "mse-optimal" => Ok(Self::MseOptimal),
            _ => Err(Error::Parameter(format!(
                "unknown allocation '{s}' (expected equal-ratio or mse-optimal)"
            ))),
        }
    }
}

/// Independent, non-identically scaled Laplace noise per coordinate.
#[derive(Clone, Debug, PartialEq)]
pub struct CoordinateLaplace {
    scales: Vec<f64>,
}

impl CoordinateLaplace {
    pub fn calibrate(sensitivities: &[f64], epsilon: f64, allocation: CoordinateAllocation) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::Budget(format!("epsilon must be positive, got {epsilon}")));
        }
        if sensitivities.is_empty() {
            return Err(Error::Parameter("no coordinates".into()));
        }
        if sensitivities.iter().any(|&d| !(d >= 0.0 && d.is_finite())) {
            return Err(Error::Parameter("coordinate sensitivities must be finite and non-negative".into()));
        }
        if sensitivities.iter().all(|&d| d == 0.0) {
            return Err(Error::Parameter("all coordinate sensitivities are zero".into()));
        }
        let m = sensitivities.len() as f64;
        let scales = match allocation {
            CoordinateAllocation::EqualRatio => sensitivities.iter().map(|&d| m * d / epsilon).collect(),
            CoordinateAllocation::MseOptimal => {
                let total: f64 = sensitivities.iter().map(|&d| d.powf(2.0 / 3.0)).sum();
                sensitivities.iter().map(|&d| d.cbrt() * total / epsilon).collect()
            }
        };
        Ok(Self { scales })
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    /// `Σ Δ_j / b_j`, skipping coordinates that carry no sensitivity.
    pub fn privacy_cost(&self, sensitivities: &[f64]) -> f64 {
        sensitivities
            .iter()
            .zip(&self.scales)
            .filter(|(&d, _)| d > 0.0)
            .map(|(d, b)| d / b)
            .sum()
    }

    /// `Σ 2 b_j²`
    pub fn total_variance(&self) -> f64 {
        self.scales.iter().map(|b| 2.0 * b * b).sum()
    }
}

impl Mechanism for CoordinateLaplace {
    fn dim(&self) -> usize {
        self.scales.len()
    }

    fn randomize(&self, y: &[f64], rng: &mut RngStream) -> Vec<f64> {
        assert_eq!(y.len(), self.scales.len(), "coordinate Laplace input dimension");
        y.iter()
            .zip(&self.scales)
            .map(|(&v, &b)| if b > 0.0 { v + sample_laplace(rng, b) } else { v })
            .collect()
    }
}
