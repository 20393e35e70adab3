//! Calibration from public data and the `g ∘ M ∘ f` randomizer.
//!
//! `f(z) = Bound(L⁻¹(z − μ); ρ)` whitens a record into the coordinate
//! system where task-relevant directions are stretched, bounds it so the
//! mechanism's sensitivity is known, and `g(y) = L y + μ` maps the
//! randomized result back. Everything in a [`Calibration`] is computed from
//! public data only.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{dim, input, Error, Result};
use crate::linalg::Matrix;
use crate::mechanisms::{
    ball_sensitivity, CoordinateAllocation, CoordinateLaplace, GaussianMechanism, LaplaceMechanism, Mechanism,
    Norm, PrivUnit2, PrivUnitG, PrivacyBudget, RngStream, SensitivityConvention,
};
use crate::models::{DifferentiableModel, JacobianMode};
use crate::scalar::{from_f64_vec, to_f64_vec, Scalar};
use crate::subspace::{
    aggregate_jacobians_with, allocate_scales, build_transform, extract_basis, Accumulation, Floor, NullMode,
    Provenance, RankRule, ReshapeTransform,
};

/// Stream identifier for per-record randomization.
pub const RECORD_STREAM: u64 = 0x7265_636f_7264;

/// Radial clipping to the `norm` ball of radius `rho`; direction preserved.
/// The result lies inside the ball exactly, so clipping is idempotent.
pub fn bound<T: Scalar>(v: &[T], rho: T, norm: Norm) -> Vec<T> {
    let size = |x: &[T]| T::of(norm.of(&to_f64_vec(x)));
    let n = size(v);
    if n <= rho {
        return v.to_vec();
    }
    let mut k = rho / n;
    let mut out: Vec<T> = v.iter().map(|&x| x * k).collect();
    // rounding can leave the scaled vector an ulp outside
    for _ in 0..8 {
        if size(&out) <= rho {
            break;
        }
        k *= T::one() - T::epsilon() * T::of(4.0);
        out = v.iter().map(|&x| x * k).collect();
    }
    out
}

/// Nearest-rank quantile: the `ceil(p·n)`-th smallest value.
pub fn nearest_rank_quantile(values: &[f64], p: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = (p * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

/// Hex SHA-256 of the row-major little-endian bytes of `data`.
pub fn matrix_hash<T: Scalar>(data: &Matrix<T>) -> String {
    let mut h = Sha256::new();
    h.update((data.rows() as u64).to_le_bytes());
    h.update((data.cols() as u64).to_le_bytes());
    for v in data.as_slice() {
        h.update(v.as_f64().to_le_bytes());
    }
    hex::encode(h.finalize())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationOptions {
    /// `None` picks `fixed(outputs)` for multi-output models and
    /// `energy(0.99)` otherwise.
    pub rank_rule: Option<RankRule>,
    pub floor: Floor,
    pub null_mode: NullMode,
    pub percentile: f64,
    pub jacobian_samples: usize,
    pub jacobian_mode: JacobianMode,
    pub parallel: bool,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            rank_rule: None,
            floor: Floor::default(),
            null_mode: NullMode::default(),
            percentile: 0.9,
            jacobian_samples: 500,
            jacobian_mode: JacobianMode::Logits,
            parallel: false,
        }
    }
}

/// Percentile radius of the pulled-back public data in each norm.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Radii {
    pub l1: f64,
    pub l2: f64,
    pub linf: f64,
}

impl Radii {
    pub fn uniform(rho: f64) -> Self {
        Self { l1: rho, l2: rho, linf: rho }
    }

    pub fn get(&self, norm: Norm) -> f64 {
        match norm {
            Norm::L1 => self.l1,
            Norm::L2 => self.l2,
            Norm::Linf => self.linf,
        }
    }
}

/// Everything the randomizer needs, derived from public data.
#[derive(Clone, Debug, PartialEq)]
pub struct Calibration<T> {
    pub transform: ReshapeTransform<T>,
    pub radii: Radii,
    pub percentile: f64,
    /// Coordinate-wise range of the pulled-back public data.
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// `√eig(C)`, descending; empty for hand-built calibrations.
    pub spectrum: Vec<f64>,
    /// The spectrum after flooring, as fed to the scale allocation.
    pub singular_values: Vec<f64>,
    pub rank: usize,
    pub warnings: Vec<String>,
    /// The identity fallback was used.
    pub degenerate: bool,
}

impl<T: Scalar> Calibration<T> {
    /// A calibration for a given transform with the same radius in every
    /// norm and the box `[−ρ, ρ]^m`.
    pub fn fixed(transform: ReshapeTransform<T>, rho: f64) -> Result<Self> {
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::Parameter(format!("radius must be positive, got {rho}")));
        }
        let m = transform.dim();
        Ok(Self {
            transform,
            radii: Radii::uniform(rho),
            percentile: 1.0,
            lower: vec![-rho; m],
            upper: vec![rho; m],
            spectrum: Vec::new(),
            singular_values: Vec::new(),
            rank: m,
            warnings: Vec::new(),
            degenerate: false,
        })
    }

    /// Measures radii and box of `public` under `transform`.
    pub fn measure(transform: ReshapeTransform<T>, public: &Matrix<T>, percentile: f64) -> Result<Self> {
        check_percentile(percentile)?;
        if public.rows() == 0 {
            return Err(input("no public records"));
        }
        if public.cols() != transform.dim() {
            return Err(dim(format!(
                "public data has {} columns, transform expects {}",
                public.cols(),
                transform.dim()
            )));
        }
        let m = transform.dim();
        let pulled: Vec<Vec<f64>> = (0..public.rows())
            .map(|i| to_f64_vec(&transform.pull_back(public.row(i))))
            .collect();
        let radius = |norm: Norm| {
            let norms: Vec<f64> = pulled.iter().map(|v| norm.of(v)).collect();
            nearest_rank_quantile(&norms, percentile)
        };
        let mut lower = vec![f64::INFINITY; m];
        let mut upper = vec![f64::NEG_INFINITY; m];
        for v in &pulled {
            for j in 0..m {
                lower[j] = lower[j].min(v[j]);
                upper[j] = upper[j].max(v[j]);
            }
        }
        Ok(Self {
            transform,
            radii: Radii {
                l1: radius(Norm::L1),
                l2: radius(Norm::L2),
                linf: radius(Norm::Linf),
            },
            percentile,
            lower,
            upper,
            spectrum: Vec::new(),
            singular_values: Vec::new(),
            rank: m,
            warnings: Vec::new(),
            degenerate: false,
        })
    }

    /// The unreshaped reference: `L = I`, `μ = 0`, radii from public data.
    pub fn baseline(public: &Matrix<T>, percentile: f64) -> Result<Self> {
        let m = public.cols();
        let mut cal = Self::measure(ReshapeTransform::identity(vec![T::zero(); m]), public, percentile)?;
        if cal.radii.l1 <= 0.0 {
            cal.warnings.push("public data is all zero; using radius 1".into());
            cal.radii = Radii::uniform(1.0);
            cal.degenerate = true;
        }
        Ok(cal)
    }

    pub fn dim(&self) -> usize {
        self.transform.dim()
    }

    pub fn to_document(&self) -> CalibrationDocument {
        let u = self.transform.u();
        CalibrationDocument {
            dim: self.dim(),
            rank: self.rank,
            u: (0..u.rows()).map(|i| to_f64_vec(u.row(i))).collect(),
            lambda: to_f64_vec(self.transform.lambda()),
            mu: to_f64_vec(self.transform.mu()),
            rho: self.radii,
            percentile: self.percentile,
            lower: self.lower.clone(),
            upper: self.upper.clone(),
            spectrum: self.spectrum.clone(),
            singular_values: self.singular_values.clone(),
            degenerate: self.degenerate,
            warnings: self.warnings.clone(),
            provenance: self.transform.provenance.clone(),
        }
    }

    pub fn from_document(doc: &CalibrationDocument) -> Result<Self> {
        let m = doc.dim;
        if doc.u.len() != m || doc.u.iter().any(|r| r.len() != m) {
            return Err(dim(format!("transform document: U is not {m}x{m}")));
        }
        if doc.lower.len() != m || doc.upper.len() != m {
            return Err(dim("transform document: box bounds have the wrong length"));
        }
        let rows: Vec<Vec<T>> = doc.u.iter().map(|r| from_f64_vec(r)).collect();
        let transform = ReshapeTransform::from_parts(
            Matrix::from_rows(&rows)?,
            from_f64_vec(&doc.lambda),
            from_f64_vec(&doc.mu),
        )?
        .with_provenance(doc.provenance.clone());
        for r in [doc.rho.l1, doc.rho.l2, doc.rho.linf] {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::Parameter(format!("transform document: radius {r} is not positive")));
            }
        }
        check_percentile(doc.percentile)?;
        Ok(Self {
            transform,
            radii: doc.rho,
            percentile: doc.percentile,
            lower: doc.lower.clone(),
            upper: doc.upper.clone(),
            spectrum: doc.spectrum.clone(),
            singular_values: doc.singular_values.clone(),
            rank: doc.rank,
            warnings: doc.warnings.clone(),
            degenerate: doc.degenerate,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("calibration serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_document(&serde_json::from_str(text)?)
    }
}

/// Serialized form of a [`Calibration`]; field order is the key order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationDocument {
    pub dim: usize,
    pub rank: usize,
    pub u: Vec<Vec<f64>>,
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
    pub rho: Radii,
    pub percentile: f64,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    #[serde(default)]
    pub spectrum: Vec<f64>,
    #[serde(default)]
    pub singular_values: Vec<f64>,
    #[serde(default)]
    pub degenerate: bool,
    #[serde(default)]
    pub warnings: Vec<String>,
    #[serde(default)]
    pub provenance: Provenance,
}

fn check_percentile(p: f64) -> Result<()> {
    if p > 0.0 && p <= 1.0 {
        Ok(())
    } else {
        Err(Error::Parameter(format!("percentile must lie in (0, 1], got {p}")))
    }
}

fn column_means<T: Scalar>(data: &Matrix<T>) -> Vec<T> {
    let n = T::of(data.rows() as f64);
    let mut mu = vec![T::zero(); data.cols()];
    for i in 0..data.rows() {
        mu.iter_mut().zip(data.row(i)).for_each(|(m, &x)| *m += x);
    }
    mu.iter_mut().for_each(|m| *m /= n);
    mu
}

/// Builds the reshaping transform and radii from public records and a
/// public model. Degenerate inputs (constant public data or a model with
/// zero Jacobian) fall back to the identity transform with radius 1 and a
/// recorded warning.
pub fn calibrate<T, M>(public: &Matrix<T>, model: &M, options: &CalibrationOptions) -> Result<Calibration<T>>
where
    T: Scalar,
    M: DifferentiableModel<T> + Sync,
{
    check_percentile(options.percentile)?;
    let n = public.rows();
    let m = public.cols();
    if options.jacobian_samples == 0 || n < options.jacobian_samples {
        return Err(input(format!(
            "calibration needs at least {} public records for the Jacobian sample, got {n}",
            options.jacobian_samples.max(1)
        )));
    }
    if m != model.input_dim() {
        return Err(dim(format!("public data has {m} columns, model expects {}", model.input_dim())));
    }
    let mu = column_means(public);
    let provenance = Provenance {
        sample_count: options.jacobian_samples,
        model_hash: String::new(),
        public_hash: matrix_hash(public),
    };
    let fallback = |reason: String| -> Result<Calibration<T>> {
        log::warn!("{reason}; falling back to the identity transform");
        let mut cal = Calibration::fixed(
            ReshapeTransform::identity(mu.clone()).with_provenance(provenance.clone()),
            1.0,
        )?;
        cal.percentile = options.percentile;
        cal.warnings.push(reason);
        cal.degenerate = true;
        Ok(cal)
    };
    let constant = (0..m).all(|j| (1..n).all(|i| public[(i, j)] == public[(0, j)]));
    if constant {
        return fallback("public data has zero variance".into());
    }

    let stride: Vec<T> = (0..options.jacobian_samples)
        .flat_map(|k| public.row(k * n / options.jacobian_samples).to_vec())
        .collect();
    let subset = Matrix::from_row_major(options.jacobian_samples, m, stride)?;
    let accumulation = if options.parallel { Accumulation::Parallel } else { Accumulation::Sequential };
    let agg = aggregate_jacobians_with(model, &subset, options.jacobian_mode, accumulation)?;
    let rule = options.rank_rule.unwrap_or(if model.output_dim() > 1 {
        RankRule::Fixed(model.output_dim().min(m))
    } else {
        RankRule::Energy(0.99)
    });
    let basis = match extract_basis(&agg, rule, options.floor) {
        Ok(b) => b,
        Err(Error::Calibration(msg)) => return fallback(msg),
        Err(e) => return Err(e),
    };
    let alloc = allocate_scales(&basis.s, options.null_mode.scale_mode(basis.rank()))?;
    let transform = build_transform(&basis, &alloc, &mu)?.with_provenance(provenance);
    let mut cal = Calibration::measure(transform, public, options.percentile)?;
    cal.spectrum = to_f64_vec(&basis.spectrum);
    cal.singular_values = to_f64_vec(&basis.s);
    cal.rank = basis.rank();
    cal.warnings = basis.warnings;
    for w in &cal.warnings {
        log::warn!("{w}");
    }
    Ok(cal)
}

/// How `f` enforces the bounded domain.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClipMode {
    /// Scale onto the norm ball, preserving direction.
    #[default]
    Radial,
    /// Clamp each coordinate to `[−ρ, ρ]` (the ℓ∞ ball).
    PerCoordinate,
    /// Clamp each coordinate to the range of the pulled-back public data.
    PublicBox,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MechanismSpec {
    Laplace,
    Gaussian { delta: f64 },
    #[serde(rename = "privunit2")]
    PrivUnit2,
    #[serde(rename = "privunitg")]
    PrivUnitG,
    CoordinateLaplace {
        #[serde(default)]
        allocation: CoordinateAllocation,
    },
}

impl MechanismSpec {
    pub fn name(&self) -> &'static str {
        match self {
            MechanismSpec::Laplace => "laplace",
            MechanismSpec::Gaussian { .. } => "gaussian",
            MechanismSpec::PrivUnit2 => "privunit2",
            MechanismSpec::PrivUnitG => "privunitg",
            MechanismSpec::CoordinateLaplace { .. } => "cw-laplace",
        }
    }

    /// The bounding norm each mechanism's sensitivity is stated in.
    pub fn default_norm(&self) -> Norm {
        match self {
            MechanismSpec::Laplace => Norm::L1,
            MechanismSpec::CoordinateLaplace { .. } => Norm::Linf,
            _ => Norm::L2,
        }
    }

    pub fn default_clip(&self) -> ClipMode {
        match self {
            MechanismSpec::CoordinateLaplace { .. } => ClipMode::PublicBox,
            _ => ClipMode::Radial,
        }
    }
}

impl std::str::FromStr for MechanismSpec {
    type Err = Error;

    /// `laplace`, `gaussian[:δ]`, `privunit2`, `privunitg`,
    /// `cw-laplace[:equal-ratio|mse-optimal]` (or just `cw`).
    fn from_str(s: &str) -> Result<Self> {
        let (kind, arg) = match s.split_once(':') {
            Some((k, a)) => (k, Some(a)),
            None => (s, None),
        };
        match (kind, arg) {
            ("laplace", None) => Ok(Self::Laplace),
            ("gaussian", d) => Ok(Self::Gaussian {
                delta: d.map_or(Ok(1e-5), |d| d.parse()).map_err(|_| Error::Parameter(format!("bad delta in '{s}'")))?,
            }),
            ("privunit2", None) => Ok(Self::PrivUnit2),
            ("privunitg", None) => Ok(Self::PrivUnitG),
            ("cw-laplace" | "cw", a) => Ok(Self::CoordinateLaplace {
                allocation: a.map_or(Ok(CoordinateAllocation::default()), |a| a.parse())?,
            }),
            _ => Err(Error::Parameter(format!("unknown mechanism '{s}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub mechanism: MechanismSpec,
    pub epsilon: f64,
    /// Defaults to the mechanism's natural norm.
    #[serde(default)]
    pub bound_norm: Option<Norm>,
    #[serde(default)]
    pub clip: Option<ClipMode>,
    #[serde(default)]
    pub convention: SensitivityConvention,
}

impl PipelineConfig {
    pub fn new(mechanism: MechanismSpec, epsilon: f64) -> Self {
        Self {
            mechanism,
            epsilon,
            bound_norm: None,
            clip: None,
            convention: SensitivityConvention::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum BaseMechanism {
    Laplace(LaplaceMechanism),
    Gaussian(GaussianMechanism),
    PrivUnit2(PrivUnit2),
    PrivUnitG(PrivUnitG),
    Coordinate(CoordinateLaplace),
}

impl BaseMechanism {
    fn as_dyn(&self) -> &dyn Mechanism {
        match self {
            BaseMechanism::Laplace(m) => m,
            BaseMechanism::Gaussian(m) => m,
            BaseMechanism::PrivUnit2(m) => m,
            BaseMechanism::PrivUnitG(m) => m,
            BaseMechanism::Coordinate(m) => m,
        }
    }
}

/// Noise parameters reported for a configured pipeline.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NoiseSummary {
    pub mechanism: String,
    pub rho: f64,
    pub bound_norm: Norm,
    pub clip: ClipMode,
    pub delta1: f64,
    pub delta2: f64,
    /// Laplace `b`, Gaussian `σ`, spherical debiasing factor, or the
    /// per-coordinate Laplace scales.
    pub scales: Vec<f64>,
}

/// An immutable, calibrated `g ∘ M ∘ f`.
#[derive(Clone, Debug)]
pub struct Pipeline<T> {
    transform: ReshapeTransform<T>,
    rho: f64,
    norm: Norm,
    clip: ClipMode,
    lower: Vec<f64>,
    upper: Vec<f64>,
    mechanism: BaseMechanism,
    summary: NoiseSummary,
}

impl<T: Scalar> Pipeline<T> {
    pub fn new(calibration: &Calibration<T>, config: &PipelineConfig) -> Result<Self> {
        let spec = config.mechanism;
        let norm = config.bound_norm.unwrap_or(spec.default_norm());
        let clip = config.clip.unwrap_or(spec.default_clip());
        let m = calibration.dim();
        let budget = match spec {
            MechanismSpec::Gaussian { delta } => PrivacyBudget::approximate(config.epsilon, delta)?,
            _ => PrivacyBudget::pure(config.epsilon)?,
        };
        let norm = if clip == ClipMode::PerCoordinate { Norm::Linf } else { norm };
        let rho = calibration.radii.get(norm);
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::Parameter(format!("radius must be positive, got {rho}")));
        }
        let (lower, upper) = match clip {
            ClipMode::PublicBox => (calibration.lower.clone(), calibration.upper.clone()),
            _ => (vec![-rho; m], vec![rho; m]),
        };
        let half = match config.convention {
            SensitivityConvention::Diameter => 1.0,
            SensitivityConvention::Radius => 0.5,
        };
        let widths: Vec<f64> = lower.iter().zip(&upper).map(|(l, u)| half * (u - l)).collect();
        let (delta1, delta2) = match clip {
            ClipMode::Radial => (
                ball_sensitivity(norm, rho, m, Norm::L1, config.convention),
                ball_sensitivity(norm, rho, m, Norm::L2, config.convention),
            ),
            _ => (widths.iter().sum(), widths.iter().map(|w| w * w).sum::<f64>().sqrt()),
        };
        let (mechanism, scales) = match spec {
            MechanismSpec::Laplace => {
                let mech = LaplaceMechanism::calibrate(m, delta1, budget.epsilon)?;
                let b = mech.scale();
                (BaseMechanism::Laplace(mech), vec![b])
            }
            MechanismSpec::Gaussian { .. } => {
                let mech = GaussianMechanism::calibrate(m, delta2, budget)?;
                let s = mech.sigma();
                (BaseMechanism::Gaussian(mech), vec![s])
            }
            MechanismSpec::PrivUnit2 | MechanismSpec::PrivUnitG => {
                if clip != ClipMode::Radial || norm != Norm::L2 {
                    return Err(Error::Parameter(format!(
                        "{} needs radial l2 bounding",
                        spec.name()
                    )));
                }
                if spec == MechanismSpec::PrivUnit2 {
                    let mech = PrivUnit2::calibrate(m, budget.epsilon)?.with_radius(rho);
                    let s = mech.scale();
                    (BaseMechanism::PrivUnit2(mech), vec![s])
                } else {
                    let mech = PrivUnitG::calibrate(m, budget.epsilon)?.with_radius(rho);
                    let s = mech.scale();
                    (BaseMechanism::PrivUnitG(mech), vec![s])
                }
            }
            MechanismSpec::CoordinateLaplace { allocation } => {
                let sens: Vec<f64> = match clip {
                    ClipMode::Radial => vec![ball_sensitivity(norm, rho, 1, Norm::Linf, config.convention); m],
                    _ => widths.clone(),
                };
                let mech = CoordinateLaplace::calibrate(&sens, budget.epsilon, allocation)?;
                let s = mech.scales().to_vec();
                (BaseMechanism::Coordinate(mech), s)
            }
        };
        Ok(Self {
            transform: calibration.transform.clone(),
            rho,
            norm,
            clip,
            lower,
            upper,
            mechanism,
            summary: NoiseSummary {
                mechanism: spec.name().into(),
                rho,
                bound_norm: norm,
                clip,
                delta1,
                delta2,
                scales,
            },
        })
    }

    pub fn dim(&self) -> usize {
        self.transform.dim()
    }

    pub fn transform(&self) -> &ReshapeTransform<T> {
        &self.transform
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn summary(&self) -> &NoiseSummary {
        &self.summary
    }

    fn check(&self, v: &[T]) -> Result<()> {
        if v.len() != self.dim() {
            return Err(dim(format!("record has {} values, pipeline expects {}", v.len(), self.dim())));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(input("record contains a non-finite value"));
        }
        Ok(())
    }

    /// `f(z)` together with whether bounding changed it.
    pub fn preprocess_flagged(&self, z: &[T]) -> Result<(Vec<T>, bool)> {
        self.check(z)?;
        let y = self.transform.pull_back(z);
        let out = match self.clip {
            ClipMode::Radial => bound(&y, T::of(self.rho), self.norm),
            _ => y
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .map(|(&v, (&lo, &hi))| v.max(T::of(lo)).min(T::of(hi)))
                .collect(),
        };
        let clipped = out != y;
        Ok((out, clipped))
    }

    /// `f(z) = Bound(L⁻¹(z − μ); ρ)`
    pub fn preprocess(&self, z: &[T]) -> Result<Vec<T>> {
        Ok(self.preprocess_flagged(z)?.0)
    }

    /// `g(y) = L y + μ`
    pub fn postprocess(&self, y: &[T]) -> Result<Vec<T>> {
        if y.len() != self.dim() {
            return Err(dim(format!("vector has {} values, pipeline expects {}", y.len(), self.dim())));
        }
        Ok(self.transform.push_forward(y))
    }

    /// `M(f(z))`, still in the bounded coordinate system.
    pub fn randomize_intermediate(&self, z: &[T], rng: &mut RngStream) -> Result<Vec<f64>> {
        Ok(self.randomize_intermediate_flagged(z, rng)?.0)
    }

    /// `M(f(z))` together with whether bounding changed `z`.
    pub fn randomize_intermediate_flagged(&self, z: &[T], rng: &mut RngStream) -> Result<(Vec<f64>, bool)> {
        let (zbar, clipped) = self.preprocess_flagged(z)?;
        Ok((self.mechanism.as_dyn().randomize(&to_f64_vec(&zbar), rng), clipped))
    }

    /// `g(M(f(z)))`
    pub fn randomize(&self, z: &[T], rng: &mut RngStream) -> Result<Vec<T>> {
        let y = self.randomize_intermediate(z, rng)?;
        self.postprocess(&from_f64_vec(&y))
    }

    /// Randomizes every row with its own stream derived from `(master, row)`;
    /// the result does not depend on thread scheduling.
    pub fn randomize_batch(&self, records: &Matrix<T>, master: u64) -> Result<Matrix<T>> {
        let rows: Vec<Vec<T>> = (0..records.rows())
            .into_par_iter()
            .map(|i| {
                let mut rng = RngStream::derive(master, &[RECORD_STREAM, i as u64]);
                self.randomize(records.row(i), &mut rng)
            })
            .collect::<Result<_>>()?;
        if rows.is_empty() {
            return Ok(Matrix::zeros(0, self.dim()));
        }
        Matrix::from_rows(&rows)
    }

    /// `g(mean of intermediate outputs)`.
    pub fn aggregate_mean(&self, outputs: &[Vec<f64>]) -> Result<Vec<T>> {
        let first = outputs.first().ok_or_else(|| input("nothing to aggregate"))?;
        let m = first.len();
        if outputs.iter().any(|o| o.len() != m) {
            return Err(dim("aggregated outputs differ in length"));
        }
        let k = outputs.len() as f64;
        let mean: Vec<f64> = (0..m).map(|j| outputs.iter().map(|o| o[j]).sum::<f64>() / k).collect();
        self.postprocess(&from_f64_vec(&mean))
    }
}
