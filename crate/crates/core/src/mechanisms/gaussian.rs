use super::{Mechanism, PrivacyBudget, RngStream};
use crate::error::{Error, Result};
use crate::special::{bisect, log_normal_cdf, normal_cdf};

/// Exact `δ` achieved by Gaussian noise `σ` at `(ε, Δ₂)`:
/// `Φ(Δ/2σ − εσ/Δ) − e^ε Φ(−Δ/2σ − εσ/Δ)`.
pub fn agm_delta(sigma: f64, epsilon: f64, l2_sensitivity: f64) -> f64 {
    let a = l2_sensitivity / (2.0 * sigma);
    let b = epsilon * sigma / l2_sensitivity;
    normal_cdf(a - b) - (epsilon + log_normal_cdf(-a - b)).exp()
}

/// Smallest `σ` (to bisection precision) with `agm_delta(σ) ≤ δ`.
///
/// The search aims `min(5e-14, 1e-8 δ)` below `δ`, so the answer stays
/// feasible when `Φ` is evaluated by a different implementation.
pub fn calibrate_agm(epsilon: f64, delta: f64, l2_sensitivity: f64) -> Result<f64> {
    PrivacyBudget::approximate(epsilon, delta)?;
    if !(l2_sensitivity > 0.0 && l2_sensitivity.is_finite()) {
        return Err(Error::Parameter(format!("sensitivity must be positive, got {l2_sensitivity}")));
    }
    let target = delta - (5e-14f64).min(1e-8 * delta);
    let excess = |s: f64| agm_delta(s, epsilon, l2_sensitivity) - target;
    let mut hi = l2_sensitivity;
    while excess(hi) > 0.0 {
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::Calibration("Gaussian noise scale search diverged".into()));
        }
    }
    let mut lo = hi;
    while excess(lo) <= 0.0 && lo > f64::MIN_POSITIVE {
        lo *= 0.5;
    }
    // bisect() returns a midpoint; take the feasible end of the final bracket
    let root = bisect(lo, hi, false, excess);
    let sigma = [root, root * (1.0 + 1e-15), root * (1.0 + 1e-14), hi]
        .into_iter()
        .find(|&s| excess(s) <= 0.0)
        .unwrap_or(hi);
    Ok(sigma)
}

/// `√(2 ln(1.25/δ)) Δ₂ / ε`, valid for `ε < 1` and loose everywhere.
pub fn classical_sigma(epsilon: f64, delta: f64, l2_sensitivity: f64) -> f64 {
    (2.0 * (1.25 / delta).ln()).sqrt() * l2_sensitivity / epsilon
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianMechanism {
    dim: usize,
    sigma: f64,
}

impl GaussianMechanism {
    pub fn new(dim: usize, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Parameter(format!("Gaussian σ must be positive, got {sigma}")));
        }
        Ok(Self { dim, sigma })
    }

    pub fn calibrate(dim: usize, l2_sensitivity: f64, budget: PrivacyBudget) -> Result<Self> {
        Self::new(dim, calibrate_agm(budget.epsilon, budget.delta, l2_sensitivity)?)
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}

impl Mechanism for GaussianMechanism {
    fn dim(&self) -> usize {
        self.dim
    }

    fn randomize(&self, y: &[f64], rng: &mut RngStream) -> Vec<f64> {
        assert_eq!(y.len(), self.dim, "Gaussian input dimension");
        y.iter().map(|&v| v + self.sigma * rng.standard_normal()).collect()
    }
}
