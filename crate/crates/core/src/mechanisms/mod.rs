//! Base LDP mechanisms operating in the whitened coordinate system.
//!
//! All mechanisms compute in `f64`. Each one is parameterized by a
//! privacy budget and a sensitivity derived from the bounding ball, and
//! draws randomness from an explicit [`RngStream`].

mod audit;
mod cw;
mod gaussian;
mod laplace;
mod privunit;

pub use audit::{audit, AuditConfig, AuditReport, Pairing};
pub use cw::{CoordinateAllocation, CoordinateLaplace};
pub use gaussian::{agm_delta, calibrate_agm, classical_sigma, GaussianMechanism};
pub use laplace::{sample_laplace, LaplaceMechanism};
pub use privunit::{PrivUnit2, PrivUnitG};

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Deterministic ChaCha20 stream. Derived streams are keyed by hashing the
/// master seed with a list of identifiers, so independent consumers never
/// share state.
#[derive(Clone, Debug)]
pub struct RngStream {
    inner: ChaCha20Rng,
}

impl RngStream {
    pub fn new(master: u64) -> Self {
        Self::derive(master, &[])
    }

    pub fn derive(master: u64, ids: &[u64]) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(b"aniso-ldp/rng");
        hasher.update(master.to_le_bytes());
        for id in ids {
            hasher.update(id.to_le_bytes());
        }
        let seed: [u8; 32] = hasher.finalize().into();
        Self {
            inner: ChaCha20Rng::from_seed(seed),
        }
    }

    /// Uniform on the open interval `(0, 1)`.
    pub fn uniform_open(&mut self) -> f64 {
        loop {
            let u = (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
            if u > 0.0 {
                return u;
            }
        }
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBudget {
    pub epsilon: f64,
    #[serde(default)]
    pub delta: f64,
}

impl PrivacyBudget {
    pub fn pure(epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::Budget(format!("epsilon must be positive and finite, got {epsilon}")));
        }
        Ok(Self { epsilon, delta: 0.0 })
    }

    pub fn approximate(epsilon: f64, delta: f64) -> Result<Self> {
        Self::pure(epsilon)?;
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::Budget(format!("delta must lie in (0, 1), got {delta}")));
        }
        Ok(Self { epsilon, delta })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    L1,
    L2,
    Linf,
}

impl Norm {
    pub fn of(self, v: &[f64]) -> f64 {
        match self {
            Norm::L1 => v.iter().map(|x| x.abs()).sum(),
            Norm::L2 => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
            Norm::Linf => v.iter().fold(0.0, |a, x| a.max(x.abs())),
        }
    }

    fn exponent_inverse(self) -> f64 {
        match self {
            Norm::L1 => 1.0,
            Norm::L2 => 0.5,
            Norm::Linf => 0.0,
        }
    }

    /// `sup ‖x‖_target` over the unit ball of `self` in `m` dimensions.
    pub fn unit_ball_extent(self, target: Norm, m: usize) -> f64 {
        let gap = target.exponent_inverse() - self.exponent_inverse();
        if gap <= 0.0 {
            1.0
        } else {
            (m as f64).powf(gap)
        }
    }
}

impl std::str::FromStr for Norm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l1" => Ok(Norm::L1),
            "l2" => Ok(Norm::L2),
            "linf" => Ok(Norm::Linf),
            _ => Err(Error::Parameter(format!("unknown norm '{s}' (expected l1, l2 or linf)"))),
        }
    }
}

impl std::fmt::Display for Norm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Norm::L1 => "l1",
            Norm::L2 => "l2",
            Norm::Linf => "linf",
        })
    }
}

/// How a bounding radius turns into a sensitivity.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SensitivityConvention {
    /// Two points of a radius-`ρ` ball can be `2ρ` apart.
    #[default]
    Diameter,
    /// Use `ρ` itself, as some published calibrations do. Halves the noise
    /// and no longer guarantees the nominal `ε`.
    Radius,
}

/// Worst-case `target`-norm distance between two points of a radius-`rho`
/// `ball`-norm ball in `m` dimensions.
pub fn ball_sensitivity(
    ball: Norm,
    rho: f64,
    m: usize,
    target: Norm,
    convention: SensitivityConvention,
) -> f64 {
    let width = match convention {
        SensitivityConvention::Diameter => 2.0 * rho,
        SensitivityConvention::Radius => rho,
    };
    width * ball.unit_ball_extent(target, m)
}

/// Sensitivities of a bounded domain in both norms the mechanisms use.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityBound {
    pub norm: Norm,
    pub delta1: f64,
    pub delta2: f64,
}

impl SensitivityBound {
    /// Sensitivities of a radius-`rho` ball of norm `ball` in `m` dimensions.
    pub fn of_ball(ball: Norm, rho: f64, m: usize, convention: SensitivityConvention) -> Result<Self> {
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::Parameter(format!("radius must be positive, got {rho}")));
        }
        Ok(Self {
            norm: ball,
            delta1: ball_sensitivity(ball, rho, m, Norm::L1, convention),
            delta2: ball_sensitivity(ball, rho, m, Norm::L2, convention),
        })
    }
}

/// A randomizer over `f64` vectors of fixed dimension.
pub trait Mechanism: Send + Sync {
    fn dim(&self) -> usize;

    fn randomize(&self, y: &[f64], rng: &mut RngStream) -> Vec<f64>;
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn derived_streams_are_reproducible_and_distinct() {
        let a: Vec<u64> = (0..4).map(|_| RngStream::derive(7, &[1, 2]).next_u64()).collect();
        assert!(a.windows(2).all(|w| w[0] == w[1]));
        assert_ne!(RngStream::derive(7, &[1, 2]).next_u64(), RngStream::derive(7, &[2, 1]).next_u64());
        assert_ne!(RngStream::derive(7, &[]).next_u64(), RngStream::derive(8, &[]).next_u64());
        let mut r = RngStream::new(1);
        let x: f64 = r.random();
        assert!((0.0..1.0).contains(&x));
    }

    #[test]
    fn uniform_open_stays_inside() {
        let mut r = RngStream::new(3);
        let mean = (0..100_000).map(|_| r.uniform_open()).inspect(|&u| assert!(u > 0.0 && u < 1.0)).sum::<f64>() / 1e5;
        assert!((mean - 0.5).abs() < 0.005);
    }

    #[test]
    fn budgets_validate() {
        assert!(PrivacyBudget::pure(0.0).is_err());
        assert!(PrivacyBudget::pure(f64::INFINITY).is_err());
        assert!(PrivacyBudget::approximate(1.0, 0.0).is_err());
        assert!(PrivacyBudget::approximate(1.0, 1e-5).is_ok());
    }

    #[test]
    fn ball_sensitivities() {
        use Norm::*;
        let d = SensitivityConvention::Diameter;
        assert_eq!(ball_sensitivity(L1, 1.5, 9, L1, d), 3.0);
        assert_eq!(ball_sensitivity(L2, 1.0, 9, L2, d), 2.0);
        assert!((ball_sensitivity(L2, 1.0, 9, L1, d) - 6.0).abs() < 1e-15);
        assert_eq!(ball_sensitivity(Linf, 1.0, 4, L1, d), 8.0);
        assert!((ball_sensitivity(Linf, 1.0, 4, L2, d) - 4.0).abs() < 1e-15);
        assert_eq!(ball_sensitivity(L1, 1.0, 4, L2, d), 2.0);
        assert_eq!(ball_sensitivity(L1, 1.5, 9, L1, SensitivityConvention::Radius), 1.5);
    }

    #[test]
    fn sensitivity_bound_of_l2_ball() {
        let s = SensitivityBound::of_ball(Norm::L2, 1.0, 4, SensitivityConvention::Diameter).unwrap();
        assert_eq!((s.delta1, s.delta2), (4.0, 2.0));
        assert!(SensitivityBound::of_ball(Norm::L2, 0.0, 4, SensitivityConvention::Diameter).is_err());
    }

    #[test]
    fn norms() {
        let v = [3.0, -4.0];
        assert_eq!(Norm::L1.of(&v), 7.0);
        assert_eq!(Norm::L2.of(&v), 5.0);
        assert_eq!(Norm::Linf.of(&v), 4.0);
        assert_eq!("linf".parse::<Norm>().unwrap(), Norm::Linf);
    }
}
