//! Unit-vector randomizers for ℓ2-bounded inputs.
//!
//! Both mechanisms split the budget `ε = ε₀ + ε₁`: `ε₁` fixes the size of
//! a "cap" around the input direction (the cap holds a `q = 1/(1+e^{ε₁})`
//! fraction of the reference measure), and `ε₀` fixes the probability
//! `p = e^{ε₀}/(1+e^{ε₀})` of landing in it. The density ratio between two
//! inputs is at most `p(1−q) / ((1−p)q) = e^ε`. The split is chosen on a
//! grid to maximize `E⟨V, v⟩`, which minimizes the debiased variance.

use super::{Mechanism, RngStream};
use crate::error::{Error, Result};
use crate::special::{beta_reg, bisect, ln_beta, normal_pdf, normal_quantile};

const SPLIT_GRID: usize = 100;
/// Cap sampling rejects from the uniform sphere in low dimension when the
/// target region is not too small; otherwise it inverts the CDF of
/// `⟨U, v⟩` and completes with a uniform orthogonal direction.
const REJECTION_MAX_DIM: usize = 16;
const REJECTION_MIN_MASS: f64 = 1.0 / 64.0;

fn check_setup(dim: usize, epsilon: f64) -> Result<()> {
    if dim == 0 {
        return Err(Error::Parameter("dimension must be positive".into()));
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::Budget(format!("epsilon must be positive, got {epsilon}")));
    }
    Ok(())
}

fn cap_probabilities(eps0: f64, eps1: f64) -> (f64, f64) {
    let p = 1.0 / (1.0 + (-eps0).exp());
    let q = 1.0 / (1.0 + eps1.exp());
    (p, q)
}

/// Pick the split on `{0, ε/100, …, ε}` that maximizes `objective(ε₀)`.
fn best_split(epsilon: f64, objective: impl Fn(f64) -> Result<f64>) -> Result<f64> {
    let mut best = (f64::NEG_INFINITY, 0.0);
    for k in 0..=SPLIT_GRID {
        let eps0 = epsilon * k as f64 / SPLIT_GRID as f64;
        let value = objective(eps0)?;
        if value > best.0 {
            best = (value, eps0);
        }
    }
    Ok(best.1)
}

/// Randomized rounding of `x` (with `‖x‖₂ ≤ rho`) to `±x/‖x‖`, keeping the
/// direction with probability `(1 + ‖x‖/ρ)/2` so that `E[ρ·out] = x`.
fn round_to_sphere(x: &[f64], rho: f64, rng: &mut RngStream) -> Vec<f64> {
    let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let (dir, ratio) = if r > 0.0 {
        (x.iter().map(|v| v / r).collect::<Vec<_>>(), (r / rho).min(1.0))
    } else {
        let mut e = vec![0.0; x.len()];
        e[0] = 1.0;
        (e, 0.0)
    };
    if rng.uniform_open() < 0.5 * (1.0 + ratio) {
        dir
    } else {
        dir.into_iter().map(|v| -v).collect()
    }
}

/// Uniform unit vector orthogonal to the unit vector `v`.
fn orthogonal_direction(v: &[f64], rng: &mut RngStream) -> Vec<f64> {
    loop {
        let mut g: Vec<f64> = (0..v.len()).map(|_| rng.standard_normal()).collect();
        let proj: f64 = g.iter().zip(v).map(|(a, b)| a * b).sum();
        g.iter_mut().zip(v).for_each(|(a, b)| *a -= proj * b);
        let n = g.iter().map(|a| a * a).sum::<f64>().sqrt();
        if n > 1e-12 {
            g.iter_mut().for_each(|a| *a /= n);
            return g;
        }
    }
}

fn uniform_sphere(dim: usize, rng: &mut RngStream) -> Vec<f64> {
    loop {
        let mut g: Vec<f64> = (0..dim).map(|_| rng.standard_normal()).collect();
        let n = g.iter().map(|a| a * a).sum::<f64>().sqrt();
        if n > 1e-12 {
            g.iter_mut().for_each(|a| *a /= n);
            return g;
        }
    }
}

fn unit_and_norm(z: &[f64]) -> Option<(Vec<f64>, f64)> {
    let r = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    (r > 0.0).then(|| (z.iter().map(|v| v / r).collect(), r))
}

/// Uniform-on-sphere cap mechanism.
#[derive(Clone, Debug, PartialEq)]
pub struct PrivUnit2 {
    dim: usize,
    epsilon: f64,
    eps0: f64,
    gamma: f64,
    p: f64,
    q: f64,
    expected_inner: f64,
    radius: f64,
}

impl PrivUnit2 {
    /// Fraction of the sphere with `⟨U, v⟩ ≥ γ`: `I_{(1−γ)/2}(α, α)`,
    /// `α = (m−1)/2`.
    pub fn cap_fraction(dim: usize, gamma: f64) -> f64 {
        let a = 0.5 * (dim as f64 - 1.0);
        beta_reg(a, a, 0.5 * (1.0 - gamma))
    }

    /// `γ ≥ 0` with `cap_fraction(γ) = q`, for `q ≤ 1/2`.
    pub fn cap_threshold(dim: usize, q: f64) -> f64 {
        bisect(0.0, 1.0, false, |g| Self::cap_fraction(dim, g) - q)
    }

    /// `∫_γ^1 t dF(t)` for `t = ⟨U, v⟩` under the uniform measure.
    fn cap_moment(dim: usize, gamma: f64) -> f64 {
        let k = dim as f64 - 1.0;
        (0.5 * k * (1.0 - gamma * gamma).ln() - k.ln() - ln_beta(0.5, 0.5 * k)).exp()
    }

    fn inner_for_split(dim: usize, epsilon: f64, eps0: f64) -> (f64, f64, f64, f64) {
        let (p, q) = cap_probabilities(eps0, epsilon - eps0);
        let gamma = Self::cap_threshold(dim, q);
        let moment = Self::cap_moment(dim, gamma);
        (gamma, p, q, moment * (p / q - (1.0 - p) / (1.0 - q)))
    }

    pub fn calibrate(dim: usize, epsilon: f64) -> Result<Self> {
        check_setup(dim, epsilon)?;
        if dim == 1 {
            return Self::with_split(1, epsilon, epsilon);
        }
        let eps0 = best_split(epsilon, |e0| Ok(Self::inner_for_split(dim, epsilon, e0).3))?;
        Self::with_split(dim, epsilon, eps0)
    }

    /// Fixed split `ε₀ ∈ [0, ε]`. In one dimension this is randomized
    /// response and the split is ignored.
    pub fn with_split(dim: usize, epsilon: f64, eps0: f64) -> Result<Self> {
        check_setup(dim, epsilon)?;
        if !(0.0..=epsilon).contains(&eps0) {
            return Err(Error::Budget(format!("split {eps0} outside [0, {epsilon}]")));
        }
        if dim == 1 {
            let keep = 1.0 / (1.0 + (-epsilon).exp());
            return Ok(Self {
                dim,
                epsilon,
                eps0: epsilon,
                gamma: 0.0,
                p: keep,
                q: 0.5,
                expected_inner: 2.0 * keep - 1.0,
                radius: 1.0,
            });
        }
        let (gamma, p, q, expected_inner) = Self::inner_for_split(dim, epsilon, eps0);
        if !(expected_inner > 0.0 && expected_inner.is_finite()) {
            return Err(Error::Calibration(format!(
                "degenerate cap at dimension {dim}, epsilon {epsilon}"
            )));
        }
        Ok(Self {
            dim,
            epsilon,
            eps0,
            gamma,
            p,
            q,
            expected_inner,
            radius: 1.0,
        })
    }

    /// Radius of the ℓ2 ball the [`Mechanism`] impl accepts.
    pub fn with_radius(mut self, radius: f64) -> Self {
        self.radius = radius;
        self
    }

    pub fn split(&self) -> (f64, f64) {
        (self.eps0, self.epsilon - self.eps0)
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn cap_probability(&self) -> f64 {
        self.p
    }

    pub fn cap_mass(&self) -> f64 {
        self.q
    }

    /// `E⟨V, v⟩` for a unit input `v`.
    pub fn expected_inner(&self) -> f64 {
        self.expected_inner
    }

    /// Debiasing factor `1 / E⟨V, v⟩`.
    pub fn scale(&self) -> f64 {
        1.0 / self.expected_inner
    }

    /// Norm of every ball-mode output.
    pub fn output_norm(&self) -> f64 {
        self.scale() * self.radius
    }

    /// A random unit vector biased toward the unit vector `v`.
    pub fn sample_unit(&self, v: &[f64], rng: &mut RngStream) -> Vec<f64> {
        assert_eq!(v.len(), self.dim, "PrivUnit2 input dimension");
        if self.dim == 1 {
            let s = if v[0] >= 0.0 { 1.0 } else { -1.0 };
            return vec![if rng.uniform_open() < self.p { s } else { -s }];
        }
        let in_cap = rng.uniform_open() < self.p;
        let region_mass = if in_cap { self.q } else { 1.0 - self.q };
        if self.dim <= REJECTION_MAX_DIM && region_mass >= REJECTION_MIN_MASS {
            loop {
                let u = uniform_sphere(self.dim, rng);
                let t: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
                if (t >= self.gamma) == in_cap {
                    return u;
                }
            }
        }
        let a = 0.5 * (self.dim as f64 - 1.0);
        let t = if in_cap {
            let u = rng.uniform_open() * self.q;
            bisect(self.gamma, 1.0, false, |t| beta_reg(a, a, 0.5 * (1.0 - t)) - u)
        } else {
            let u = rng.uniform_open() * (1.0 - self.q);
            bisect(-1.0, self.gamma, true, |t| beta_reg(a, a, 0.5 * (1.0 + t)) - u)
        };
        let w = orthogonal_direction(v, rng);
        let perp = (1.0 - t * t).max(0.0).sqrt();
        v.iter().zip(&w).map(|(vi, wi)| t * vi + perp * wi).collect()
    }

    /// Unbiased randomization of an arbitrary vector. The output norm
    /// carries `‖z‖`, so the norm itself is not protected. A zero input has
    /// no direction; a uniform one is used and a warning logged.
    pub fn randomize_vector(&self, z: &[f64], rng: &mut RngStream) -> Vec<f64> {
        match unit_and_norm(z) {
            Some((v, r)) => {
                let k = self.scale() * r;
                self.sample_unit(&v, rng).into_iter().map(|x| k * x).collect()
            }
            None => {
                log::warn!("PrivUnit2 received a zero vector; randomizing a uniform direction");
                let v = uniform_sphere(z.len(), rng);
                let k = self.scale();
                self.sample_unit(&v, rng).into_iter().map(|x| k * x).collect()
            }
        }
    }

    /// Unbiased ε-LDP randomization of `x` with `‖x‖₂ ≤ ρ`; every output
    /// has norm `ρ / E⟨V, v⟩`.
    pub fn randomize_ball(&self, x: &[f64], rho: f64, rng: &mut RngStream) -> Vec<f64> {
        let v = round_to_sphere(x, rho, rng);
        let k = self.scale() * rho;
        self.sample_unit(&v, rng).into_iter().map(|x| k * x).collect()
    }
}

impl Mechanism for PrivUnit2 {
    fn dim(&self) -> usize {
        self.dim
    }

    fn randomize(&self, y: &[f64], rng: &mut RngStream) -> Vec<f64> {
        self.randomize_ball(y, self.radius, rng)
    }
}

/// Gaussian analogue: the component along the input is a two-piece
/// truncated normal, the orthogonal part is `N(0, σ²(I − vvᵀ))`, `σ = 1/√m`.
#[derive(Clone, Debug, PartialEq)]
pub struct PrivUnitG {
    dim: usize,
    epsilon: f64,
    eps0: f64,
    sigma: f64,
    gamma: f64,
    p: f64,
    q: f64,
    expected_inner: f64,
    radius: f64,
}

/// Adaptive Simpson on `[a, b]`; `None` when the depth budget runs out.
fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> Option<f64> {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> Option<f64> {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        let delta = left + right - whole;
        if delta.abs() <= 15.0 * tol {
            return Some(left + right + delta / 15.0);
        }
        if depth == 0 {
            return None;
        }
        Some(
            recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)?
                + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)?,
        )
    }
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    recurse(f, a, b, fa, fm, fb, simpson(fa, fm, fb, a, b), tol, 40)
}

/// `∫ f` over `[a, b]` split into panels no wider than `panel`.
fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, panel: f64, tol: f64) -> Result<f64> {
    let pieces = ((b - a) / panel).ceil().max(1.0) as usize;
    let width = (b - a) / pieces as f64;
    let mut total = 0.0;
    for i in 0..pieces {
        let lo = a + width * i as f64;
        let hi = if i + 1 == pieces { b } else { lo + width };
        total += adaptive_simpson(f, lo, hi, tol / pieces as f64)
            .ok_or_else(|| Error::Calibration("quadrature for the debiasing constant did not converge".into()))?;
    }
    Ok(total)
}

impl PrivUnitG {
    fn inner_for_split(dim: usize, epsilon: f64, eps0: f64) -> Result<(f64, f64, f64, f64)> {
        let sigma = 1.0 / (dim as f64).sqrt();
        let (p, q) = cap_probabilities(eps0, epsilon - eps0);
        let gamma = -sigma * normal_quantile(q);
        let weighted = |a: f64| a * normal_pdf(a / sigma) / sigma;
        let tol = 1e-12 * sigma;
        let upper = integrate(&weighted, gamma, gamma + 40.0 * sigma, 0.25 * sigma, tol)?;
        let lower = integrate(&weighted, -40.0 * sigma, gamma, 0.25 * sigma, tol)?;
        Ok((gamma, p, q, p * upper / q + (1.0 - p) * lower / (1.0 - q)))
    }

    pub fn calibrate(dim: usize, epsilon: f64) -> Result<Self> {
        check_setup(dim, epsilon)?;
        let eps0 = best_split(epsilon, |e0| Ok(Self::inner_for_split(dim, epsilon, e0)?.3))?;
        Self::with_split(dim, epsilon, eps0)
    }

    pub fn with_split(dim: usize, epsilon: f64, eps0: f64) -> Result<Self> {
        check_setup(dim, epsilon)?;
        if !(0.0..=epsilon).contains(&eps0) {
            return Err(Error::Budget(format!("split {eps0} outside [0, {epsilon}]")));
        }
        let (gamma, p, q, expected_inner) = Self::inner_for_split(dim, epsilon, eps0)?;
        if !(expected_inner > 0.0 && expected_inner.is_finite()) {
            return Err(Error::Calibration(format!(
                "degenerate cap at dimension {dim}, epsilon {epsilon}"
            )));
        }
        Ok(Self {
            dim,
            epsilon,
            eps0,
            sigma: 1.0 / (dim as f64).sqrt(),
            gamma,
            p,
            q,
            expected_inner,
            radius: 1.0,
        })
    }

    pub fn with_radius(mut self, radius: f64) -> Self {
        self.radius = radius;
        self
    }

    pub fn split(&self) -> (f64, f64) {
        (self.eps0, self.epsilon - self.eps0)
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn expected_inner(&self) -> f64 {
        self.expected_inner
    }

    pub fn scale(&self) -> f64 {
        1.0 / self.expected_inner
    }

    pub fn sample_unit(&self, v: &[f64], rng: &mut RngStream) -> Vec<f64> {
        assert_eq!(v.len(), self.dim, "PrivUnitG input dimension");
        let alpha = if rng.uniform_open() < self.p {
            -self.sigma * normal_quantile(rng.uniform_open() * self.q)
        } else {
            self.sigma * normal_quantile(rng.uniform_open() * (1.0 - self.q))
        };
        let mut g: Vec<f64> = (0..self.dim).map(|_| self.sigma * rng.standard_normal()).collect();
        let proj: f64 = g.iter().zip(v).map(|(a, b)| a * b).sum();
        g.iter_mut().zip(v).for_each(|(a, b)| *a += (alpha - proj) * b);
        g
    }

    pub fn randomize_vector(&self, z: &[f64], rng: &mut RngStream) -> Vec<f64> {
        match unit_and_norm(z) {
            Some((v, r)) => {
                let k = self.scale() * r;
                self.sample_unit(&v, rng).into_iter().map(|x| k * x).collect()
            }
            None => {
                log::warn!("PrivUnitG received a zero vector; randomizing a uniform direction");
                let v = uniform_sphere(z.len(), rng);
                let k = self.scale();
                self.sample_unit(&v, rng).into_iter().map(|x| k * x).collect()
            }
        }
    }

    pub fn randomize_ball(&self, x: &[f64], rho: f64, rng: &mut RngStream) -> Vec<f64> {
        let v = round_to_sphere(x, rho, rng);
        let k = self.scale() * rho;
        self.sample_unit(&v, rng).into_iter().map(|x| k * x).collect()
    }
}

impl Mechanism for PrivUnitG {
    fn dim(&self) -> usize {
        self.dim
    }

    fn randomize(&self, y: &[f64], rng: &mut RngStream) -> Vec<f64> {
        self.randomize_ball(y, self.radius, rng)
    }
}
