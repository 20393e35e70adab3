//! From a public model and public samples to the reshaping transform.
//!
//! The averaged Jacobian outer product `C = (1/n) Σ J(z_i)ᵀ J(z_i)` is
//! eigendecomposed; its dominant eigenvectors span the task-sensitive
//! (row) subspace and the Householder complement spans the null subspace.
//! Per-coordinate variance ratios come from the closed-form Lagrangian
//! solution `1/√λ_i = m s_i^{2/3} / Σ_j s_j^{2/3}`, which keeps
//! `Σ 1/√λ_i = m`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{dim, input, Error, Result};
use crate::linalg::{qr_complement, sym_eig, Matrix};
use crate::models::{DifferentiableModel, JacobianMode};
use crate::scalar::Scalar;

#[derive(Clone, Debug)]
pub struct JacobianAggregate<T> {
    /// Symmetric PSD `m × m`.
    pub matrix: Matrix<T>,
    pub sample_count: usize,
}

/// How per-sample contributions are summed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Accumulation {
    /// Index order; bit-stable.
    #[default]
    Sequential,
    /// Rayon fan-out; equal to `Sequential` up to reassociation.
    Parallel,
}

/// `C = (1/n) Σ J(z_i)ᵀ J(z_i)` at logits, summed sequentially.
pub fn aggregate_jacobians<T, M>(model: &M, samples: &Matrix<T>) -> Result<JacobianAggregate<T>>
where
    T: Scalar,
    M: DifferentiableModel<T> + Sync,
{
    aggregate_jacobians_with(model, samples, JacobianMode::Logits, Accumulation::Sequential)
}

pub fn aggregate_jacobians_with<T, M>(
    model: &M,
    samples: &Matrix<T>,
    mode: JacobianMode,
    accumulation: Accumulation,
) -> Result<JacobianAggregate<T>>
where
    T: Scalar,
    M: DifferentiableModel<T> + Sync,
{
    let n = samples.rows();
    if n == 0 {
        return Err(input("aggregate_jacobians needs at least one sample"));
    }
    if samples.cols() != model.input_dim() {
        return Err(dim(format!(
            "samples have {} columns, model expects {}",
            samples.cols(),
            model.input_dim()
        )));
    }
    let m = samples.cols();
    let outer = |i: usize| -> Result<Matrix<T>> {
        Ok(model.jacobian_with_mode(samples.row(i), mode)?.gram())
    };
    let mut sum = match accumulation {
        Accumulation::Sequential => {
            let mut acc = Matrix::zeros(m, m);
            for i in 0..n {
                acc.add_assign(&outer(i)?);
            }
            acc
        }
        Accumulation::Parallel => (0..n)
            .into_par_iter()
            .map(outer)
            .try_reduce(
                || Matrix::zeros(m, m),
                |mut a, b| {
                    a.add_assign(&b);
                    Ok(a)
                },
            )?,
    };
    sum.scale(T::one() / T::of(n as f64));
    Ok(JacobianAggregate {
        matrix: sum,
        sample_count: n,
    })
}

/// How many leading directions form the row subspace.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "rule", content = "value")]
pub enum RankRule {
    Fixed(usize),
    /// Smallest `r` whose leading singular values carry a `τ` fraction of
    /// their total.
    Energy(f64),
}

impl std::str::FromStr for RankRule {
    type Err = Error;

    /// `fixed:<r>` or `energy:<τ>`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, value) = s
            .split_once(':')
            .ok_or_else(|| Error::Parameter(format!("rank rule '{s}': expected fixed:<r> or energy:<tau>")))?;
        let bad = |_| Error::Parameter(format!("rank rule '{s}': bad value"));
        match kind {
            "fixed" => Ok(Self::Fixed(value.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?)),
            "energy" => Ok(Self::Energy(value.parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?)),
            _ => Err(Error::Parameter(format!("rank rule '{s}': unknown kind '{kind}'"))),
        }
    }
}

impl std::fmt::Display for RankRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RankRule::Fixed(r) => write!(f, "fixed:{r}"),
            RankRule::Energy(t) => write!(f, "energy:{t}"),
        }
    }
}

/// Singular-value floor applied to null coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "value")]
pub enum Floor {
    /// Fraction of the largest singular value.
    Relative(f64),
    Absolute(f64),
}

impl Default for Floor {
    fn default() -> Self {
        Floor::Relative(1e-3)
    }
}

#[derive(Clone, Debug)]
pub struct SubspaceBasis<T> {
    /// `m × r`
    pub q_r: Matrix<T>,
    /// `m × (m − r)`
    pub q_n: Matrix<T>,
    /// Floored singular values paired with the columns of `[Q_r | Q_n]`.
    pub s: Vec<T>,
    /// `√eig(C)` before flooring, descending.
    pub spectrum: Vec<T>,
    pub warnings: Vec<String>,
}

impl<T: Scalar> SubspaceBasis<T> {
    pub fn rank(&self) -> usize {
        self.q_r.cols()
    }

    pub fn dim(&self) -> usize {
        self.q_r.rows()
    }

    /// `[Q_r | Q_n]`
    pub fn rotation(&self) -> Matrix<T> {
        self.q_r.hcat(&self.q_n)
    }
}

pub fn extract_basis<T: Scalar>(
    agg: &JacobianAggregate<T>,
    rule: RankRule,
    floor: Floor,
) -> Result<SubspaceBasis<T>> {
    let m = agg.matrix.rows();
    let eig = sym_eig(&agg.matrix)?;
    let spectrum: Vec<T> = eig
        .eigenvalues
        .iter()
        .map(|&e| e.max(T::zero()).sqrt())
        .collect();
    let s_max = spectrum[0];
    if s_max <= T::zero() {
        return Err(Error::Calibration("aggregated Jacobian is zero".into()));
    }
    let rank = match rule {
        RankRule::Fixed(r) if r == 0 || r > m => {
            return Err(Error::Parameter(format!("fixed rank {r} outside 1..={m}")))
        }
        RankRule::Fixed(r) => r,
        RankRule::Energy(tau) if !(tau > 0.0 && tau <= 1.0) => {
            return Err(Error::Parameter(format!("energy threshold {tau} outside (0, 1]")))
        }
        RankRule::Energy(tau) => {
            let total: f64 = spectrum.iter().map(|s| s.as_f64()).sum();
            let mut acc = 0.0;
            let mut r = m;
            for (k, s) in spectrum.iter().enumerate() {
                acc += s.as_f64();
                if acc >= tau * total * (1.0 - 1e-12) {
                    r = k + 1;
                    break;
                }
            }
            r
        }
    };

    let mut warnings = Vec::new();
    let numerical_rank = spectrum
        .iter()
        .filter(|&&s| s > s_max * T::epsilon().sqrt())
        .count();
    if rank > numerical_rank {
        warnings.push(format!(
            "requested rank {rank} exceeds the numerical rank {numerical_rank} of the aggregated Jacobian"
        ));
    }
    let floor_value = match floor {
        Floor::Relative(f) => s_max * T::of(f),
        Floor::Absolute(f) => T::of(f),
    };
    if !(floor_value > T::zero()) {
        return Err(Error::Parameter("singular-value floor must be positive".into()));
    }
    let s = (0..m)
        .map(|i| if i < rank { spectrum[i].max(floor_value) } else { floor_value })
        .collect();
    let q_r = eig.eigenvectors.columns(0..rank);
    let q_n = if rank < m { qr_complement(&q_r)? } else { Matrix::zeros(m, 0) };
    Ok(SubspaceBasis {
        q_r,
        q_n,
        s,
        spectrum,
        warnings,
    })
}

/// How null coordinates are scaled.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "value")]
pub enum NullMode {
    /// Null singular values carry the floor and join the closed form.
    #[default]
    Floor,
    /// Null coordinates get variance ratio `c`; the closed form spreads the
    /// remaining budget over the row coordinates.
    Fixed(f64),
}

impl NullMode {
    pub fn scale_mode(self, rank: usize) -> ScaleMode {
        match self {
            NullMode::Floor => ScaleMode::ClosedForm,
            NullMode::Fixed(c) => ScaleMode::FixedNull {
                null_variance: c,
                rank,
            },
        }
    }
}

impl std::str::FromStr for NullMode {
    type Err = Error;

    /// `floor` or `fixed:<c>`.
    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            None if s == "floor" => Ok(Self::Floor),
            Some(("fixed", v)) => v
                .parse()
                .map(Self::Fixed)
                .map_err(|_| Error::Parameter(format!("null mode '{s}': bad constant"))),
            _ => Err(Error::Parameter(format!("null mode '{s}': expected floor or fixed:<c>"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ScaleMode {
    ClosedForm,
    FixedNull { null_variance: f64, rank: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScaleAllocation<T> {
    /// Variance ratios `σ_i² / σ²`.
    pub lambda: Vec<T>,
    pub mode: ScaleMode,
}

impl<T: Scalar> ScaleAllocation<T> {
    /// `Σ 1/√λ_i`, which equals `m` for every mode.
    pub fn budget(&self) -> T {
        self.lambda.iter().map(|&l| T::one() / l.sqrt()).sum()
    }
}

pub fn allocate_scales<T: Scalar>(s: &[T], mode: ScaleMode) -> Result<ScaleAllocation<T>> {
    let m = s.len();
    if m == 0 {
        return Err(input("allocate_scales needs at least one singular value"));
    }
    if s.iter().any(|&v| !(v > T::zero()) || !v.is_finite()) {
        return Err(input("singular values must be positive and finite"));
    }
    let two_thirds = T::of(2.0 / 3.0);
    let closed_form = |values: &[T], budget: T| -> Vec<T> {
        let weights: Vec<T> = values.iter().map(|&v| v.powf(two_thirds)).collect();
        let total: T = weights.iter().copied().sum();
        weights
            .iter()
            .map(|&w| {
                let inv_sqrt = budget * w / total;
                T::one() / (inv_sqrt * inv_sqrt)
            })
            .collect()
    };
    let lambda = match mode {
        ScaleMode::ClosedForm => closed_form(s, T::of(m as f64)),
        ScaleMode::FixedNull { null_variance, rank } => {
            if rank == 0 || rank > m {
                return Err(Error::Parameter(format!("rank {rank} outside 1..={m}")));
            }
            if !(null_variance > 0.0) {
                return Err(Error::Parameter("null variance ratio must be positive".into()));
            }
            let c = T::of(null_variance);
            let remaining = T::of(m as f64) - T::of((m - rank) as f64) / c.sqrt();
            if remaining <= T::zero() {
                return Err(Error::Parameter(format!(
                    "null variance ratio {null_variance} leaves no budget for the row space"
                )));
            }
            let mut lambda = closed_form(&s[..rank], remaining);
            lambda.extend(std::iter::repeat_n(c, m - rank));
            lambda
        }
    };
    Ok(ScaleAllocation { lambda, mode })
}

/// Where a transform came from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub sample_count: usize,
    pub model_hash: String,
    #[serde(default)]
    pub public_hash: String,
}

/// The public reshaping transform `Σ = U Λ Uᵀ`, `L = U Λ^{1/2}`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReshapeTransform<T> {
    u: Matrix<T>,
    lambda: Vec<T>,
    mu: Vec<T>,
    l: Matrix<T>,
    l_inv: Matrix<T>,
    pub provenance: Provenance,
}

impl<T: Scalar> ReshapeTransform<T> {
    /// Validates `U` (orthogonal to 1e-8) and `λ > 0`, then materializes
    /// `L` and `L⁻¹ = Λ^{-1/2} Uᵀ`.
    pub fn from_parts(u: Matrix<T>, lambda: Vec<T>, mu: Vec<T>) -> Result<Self> {
        let m = u.rows();
        if !u.is_square() || lambda.len() != m || mu.len() != m || m == 0 {
            return Err(dim(format!(
                "transform parts disagree: U {}x{}, λ {}, μ {}",
                u.rows(),
                u.cols(),
                lambda.len(),
                mu.len()
            )));
        }
        if let Some(bad) = lambda.iter().find(|&&l| !(l > T::zero()) || !l.is_finite()) {
            return Err(Error::Definiteness(format!("variance ratio {bad} is not positive")));
        }
        if mu.iter().any(|x| !x.is_finite()) {
            return Err(input("offset must be finite"));
        }
        let defect = u.orthonormality_defect();
        if defect > T::of(1e-8).max(T::epsilon() * T::of(256.0)) {
            return Err(input(format!("rotation is not orthogonal (defect {defect:e})")));
        }
        let root: Vec<T> = lambda.iter().map(|&l| l.sqrt()).collect();
        let inv_root: Vec<T> = root.iter().map(|&r| T::one() / r).collect();
        let l = u.scale_columns(&root);
        let l_inv = u.transpose().scale_rows(&inv_root);
        Ok(Self {
            u,
            lambda,
            mu,
            l,
            l_inv,
            provenance: Provenance::default(),
        })
    }

    /// `L = I`, offset `mu`.
    pub fn identity(mu: Vec<T>) -> Self {
        let m = mu.len();
        Self::from_parts(Matrix::identity(m), vec![T::one(); m], mu).expect("identity is valid")
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn u(&self) -> &Matrix<T> {
        &self.u
    }

    pub fn lambda(&self) -> &[T] {
        &self.lambda
    }

    pub fn mu(&self) -> &[T] {
        &self.mu
    }

    pub fn l(&self) -> &Matrix<T> {
        &self.l
    }

    pub fn l_inv(&self) -> &Matrix<T> {
        &self.l_inv
    }

    /// `Σ = U Λ Uᵀ`
    pub fn covariance(&self) -> Matrix<T> {
        self.u.scale_columns(&self.lambda).matmul(&self.u.transpose())
    }

    /// `L⁻¹ (z − μ)`. Panics on dimension mismatch.
    pub fn pull_back(&self, z: &[T]) -> Vec<T> {
        let centered: Vec<T> = z.iter().zip(&self.mu).map(|(&a, &b)| a - b).collect();
        self.l_inv.matvec(&centered)
    }

    /// `L y + μ`. Panics on dimension mismatch.
    pub fn push_forward(&self, y: &[T]) -> Vec<T> {
        let mut out = self.l.matvec(y);
        out.iter_mut().zip(&self.mu).for_each(|(o, &m)| *o += m);
        out
    }
}

pub fn build_transform<T: Scalar>(
    basis: &SubspaceBasis<T>,
    alloc: &ScaleAllocation<T>,
    mu: &[T],
) -> Result<ReshapeTransform<T>> {
    let m = basis.dim();
    if alloc.lambda.len() != m || mu.len() != m {
        return Err(dim(format!(
            "basis dimension {m}, {} variance ratios, offset length {}",
            alloc.lambda.len(),
            mu.len()
        )));
    }
    ReshapeTransform::from_parts(basis.rotation(), alloc.lambda.clone(), mu.to_vec())
}
