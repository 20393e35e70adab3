//! Synthetic stand-ins for the energy-forecasting and feature-classification
//! workloads, plus CSV loading for user-supplied splits.

use std::path::Path;

use aniso_ldp::io::Table;
use aniso_ldp::{Error, Matrix, Result, RngStream};
use serde::{Deserialize, Serialize};

/// Records divided into a public part (model training, calibration) and a
/// private part (privatized and evaluated).
#[derive(Clone, Debug, PartialEq)]
pub struct Split<Y> {
    pub public_x: Matrix<f64>,
    pub public_y: Vec<Y>,
    pub private_x: Matrix<f64>,
    pub private_y: Vec<Y>,
}

impl<Y> Split<Y> {
    pub fn dim(&self) -> usize {
        self.public_x.cols()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Dataset {
    Regression(Split<f64>),
    Classification { split: Split<usize>, classes: usize },
}

impl Dataset {
    pub fn dim(&self) -> usize {
        match self {
            Dataset::Regression(s) => s.dim(),
            Dataset::Classification { split, .. } => split.dim(),
        }
    }

    pub fn public_x(&self) -> &Matrix<f64> {
        match self {
            Dataset::Regression(s) => &s.public_x,
            Dataset::Classification { split, .. } => &split.public_x,
        }
    }
}

/// Household consumption series: each household follows an AR(1) process
/// around its own level, records are sliding windows of `m` days, and the
/// target is a fixed weighted average of the window plus noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegressionSpec {
    pub n: usize,
    pub m: usize,
    pub households: usize,
    pub ar: f64,
    pub innovation_std: f64,
    pub noise_std: f64,
    pub public_fraction: f64,
}

impl Default for RegressionSpec {
    fn default() -> Self {
        Self {
            n: 4000,
            m: 16,
            households: 40,
            ar: 0.8,
            innovation_std: 0.25,
            noise_std: 0.02,
            public_fraction: 0.5,
        }
    }
}

impl RegressionSpec {
    /// Window weights of the target functional: geometric decay toward the
    /// past, summing to one.
    pub fn weights(&self) -> Vec<f64> {
        let raw: Vec<f64> = (0..self.m).map(|j| self.ar.powi((self.m - 1 - j) as i32)).collect();
        let total: f64 = raw.iter().sum();
        raw.iter().map(|w| w / total).collect()
    }
}

const REGRESSION_STREAM: u64 = 1;
const CLASSIFICATION_STREAM: u64 = 2;

fn split_count(n: usize, fraction: f64) -> Result<usize> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Parameter(format!("public fraction must lie in (0, 1), got {fraction}")));
    }
    let k = (n as f64 * fraction).round() as usize;
    if k == 0 || k == n {
        return Err(Error::Parameter(format!("{n} records leave one side of the split empty")));
    }
    Ok(k)
}

/// The default household regression with `n` records of width `m`.
pub fn gen_synthetic_regression(n: usize, m: usize, seed: u64) -> Result<Split<f64>> {
    gen_regression(&RegressionSpec { n, m, ..Default::default() }, seed)
}

/// Households are assigned wholly to one side of the split, so no series
/// contributes windows to both.
pub fn gen_regression(spec: &RegressionSpec, seed: u64) -> Result<Split<f64>> {
    let (n, m) = (spec.n, spec.m);
    if m == 0 || n <= 2 * m {
        return Err(Error::Parameter(format!("need n > 2m, got n = {n}, m = {m}")));
    }
    if spec.households < 2 || spec.households > n {
        return Err(Error::Parameter(format!("household count {} does not fit {n} records", spec.households)));
    }
    if spec.ar.is_nan() || spec.ar.abs() >= 1.0 {
        return Err(Error::Parameter(format!("AR coefficient must satisfy |φ| < 1, got {}", spec.ar)));
    }
    let public_households = split_count(spec.households, spec.public_fraction)?;
    let weights = spec.weights();
    let mut rng = RngStream::derive(seed, &[REGRESSION_STREAM]);
    let stationary = spec.innovation_std / (1.0 - spec.ar * spec.ar).sqrt();

    let mut public = (Vec::new(), Vec::new());
    let mut private = (Vec::new(), Vec::new());
    for h in 0..spec.households {
        let windows = n / spec.households + usize::from(h < n % spec.households);
        let level = 0.5 + 1.5 * rng.uniform_open();
        let mut x = level + stationary * rng.standard_normal();
        let mut series = Vec::with_capacity(windows + m);
        for _ in 0..windows + m - 1 {
            series.push(x);
            x = level + spec.ar * (x - level) + spec.innovation_std * rng.standard_normal();
        }
        let side = if h < public_households { &mut public } else { &mut private };
        for w in series.windows(m) {
            let target = weights.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + spec.noise_std * rng.standard_normal();
            side.0.push(w.to_vec());
            side.1.push(target);
        }
    }
    Ok(Split {
        public_x: Matrix::from_rows(&public.0)?,
        public_y: public.1,
        private_x: Matrix::from_rows(&private.0)?,
        private_y: private.1,
    })
}

/// Gaussian blobs whose class means lie in a random `rank`-dimensional
/// subspace; the orthogonal complement carries nuisance noise only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassificationSpec {
    pub n: usize,
    pub m: usize,
    pub classes: usize,
    pub rank: usize,
    /// Standard deviation of the class means in each discriminative direction.
    pub separation: f64,
    pub within_std: f64,
    pub nuisance_std: f64,
    pub public_fraction: f64,
}

impl Default for ClassificationSpec {
    fn default() -> Self {
        Self {
            n: 4000,
            m: 64,
            classes: 10,
            rank: 10,
            separation: 1.0,
            within_std: 0.25,
            nuisance_std: 1.0,
            public_fraction: 0.5,
        }
    }
}

/// The default blobs with `n` records of width `m`.
pub fn gen_synthetic_classification(
    n: usize,
    m: usize,
    classes: usize,
    discriminative_rank: usize,
    seed: u64,
) -> Result<Split<usize>> {
    gen_classification(
        &ClassificationSpec {
            n,
            m,
            classes,
            rank: discriminative_rank,
            ..Default::default()
        },
        seed,
    )
}

/// Random orthonormal `m × r` basis by Gram–Schmidt on Gaussian columns.
fn random_basis(m: usize, r: usize, rng: &mut RngStream) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(r);
    while basis.len() < r {
        let mut v: Vec<f64> = (0..m).map(|_| rng.standard_normal()).collect();
        for b in &basis {
            let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    basis
}

pub fn gen_classification(spec: &ClassificationSpec, seed: u64) -> Result<Split<usize>> {
    let (n, m, r) = (spec.n, spec.m, spec.rank);
    if spec.classes < 2 {
        return Err(Error::Input(format!("classification needs at least two classes, got {}", spec.classes)));
    }
    if r == 0 || r >= m {
        return Err(Error::Parameter(format!("discriminative rank must lie in [1, m), got {r} with m = {m}")));
    }
    if n < spec.classes {
        return Err(Error::Parameter(format!("{n} records cannot cover {} classes", spec.classes)));
    }
    let n_public = split_count(n, spec.public_fraction)?;
    let mut rng = RngStream::derive(seed, &[CLASSIFICATION_STREAM]);
    let full = random_basis(m, m, &mut rng);
    let (signal, nuisance) = full.split_at(r);
    let means: Vec<Vec<f64>> = (0..spec.classes)
        .map(|_| (0..r).map(|_| spec.separation * rng.standard_normal()).collect())
        .collect();

    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        // round-robin labels keep every class on both sides of the split
        let c = i % spec.classes;
        let mut z = vec![0.0; m];
        for (k, b) in signal.iter().enumerate() {
            let coef = means[c][k] + spec.within_std * rng.standard_normal();
            z.iter_mut().zip(b).for_each(|(x, y)| *x += coef * y);
        }
        for b in nuisance {
            let coef = spec.nuisance_std * rng.standard_normal();
            z.iter_mut().zip(b).for_each(|(x, y)| *x += coef * y);
        }
        rows.push(z);
        labels.push(c);
    }
    let private_rows = rows.split_off(n_public);
    let private_labels = labels.split_off(n_public);
    Ok(Split {
        public_x: Matrix::from_rows(&rows)?,
        public_y: labels,
        private_x: Matrix::from_rows(&private_rows)?,
        private_y: private_labels,
    })
}

fn read_side(path: &Path, target: &str) -> Result<(Matrix<f64>, Vec<f64>, Vec<String>)> {
    let table = Table::read(path)?;
    let y = table.column(target)?;
    let features = table.without(&[target])?;
    Ok((features.data, y, features.header))
}

fn as_labels(values: &[f64], path: &Path) -> Result<Vec<usize>> {
    values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::Input(format!("{}: record {} has non-integer label {v}", path.display(), i + 1)))
            }
        })
        .collect()
}

/// Loads a public and a private CSV sharing one schema; `target` names the
/// label or response column.
pub fn load_csv(public: &Path, private: &Path, target: &str, classification: bool) -> Result<Dataset> {
    let (public_x, public_y, h1) = read_side(public, target)?;
    let (private_x, private_y, h2) = read_side(private, target)?;
    if h1 != h2 {
        return Err(Error::Dimension(format!(
            "{} and {} have different feature columns",
            public.display(),
            private.display()
        )));
    }
    if public_x.rows() == 0 || private_x.rows() == 0 {
        return Err(Error::Input("both splits need at least one record".into()));
    }
    if !classification {
        return Ok(Dataset::Regression(Split {
            public_x,
            public_y,
            private_x,
            private_y,
        }));
    }
    let public_y = as_labels(&public_y, public)?;
    let private_y = as_labels(&private_y, private)?;
    let classes = public_y.iter().chain(&private_y).max().map_or(0, |c| c + 1);
    Ok(Dataset::Classification {
        split: Split {
            public_x,
            public_y,
            private_x,
            private_y,
        },
        classes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regression_is_deterministic_and_disjoint() {
        let a = gen_synthetic_regression(400, 16, 9).unwrap();
        let b = gen_synthetic_regression(400, 16, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.public_x.rows() + a.private_x.rows(), 400);
        assert_eq!(a.public_x.rows(), a.public_y.len());
        let c = gen_synthetic_regression(400, 16, 10).unwrap();
        assert_ne!(a.public_y, c.public_y);
    }

    #[test]
    fn windows_slide_along_the_series() {
        let s = gen_synthetic_regression(400, 4, 1).unwrap();
        assert_eq!(&s.public_x.row(0)[1..], &s.public_x.row(1)[..3]);
    }

    #[test]
    fn regression_rejects_short_series() {
        assert!(gen_synthetic_regression(32, 16, 0).is_err());
    }

    #[test]
    fn target_is_the_weighted_window() {
        let spec = RegressionSpec { n: 200, m: 5, noise_std: 0.0, ..Default::default() };
        let s = gen_regression(&spec, 3).unwrap();
        let w = spec.weights();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for i in 0..s.private_x.rows() {
            let pred: f64 = w.iter().zip(s.private_x.row(i)).map(|(a, b)| a * b).sum();
            assert!((pred - s.private_y[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn classification_means_span_the_signal_subspace() {
        let spec = ClassificationSpec { n: 200, m: 6, classes: 4, rank: 2, nuisance_std: 0.0, within_std: 0.0, ..Default::default() };
        let s = gen_classification(&spec, 5).unwrap();
        // with no within-class or nuisance noise every record is its class mean,
        // so the data matrix has rank 2
        let x = &s.public_x;
        let gram = x.transpose().matmul(x);
        let eig = aniso_ldp::linalg::sym_eig(&gram).unwrap();
        assert!(eig.eigenvalues[1] > 1e-6 * eig.eigenvalues[0]);
        assert!(eig.eigenvalues[2] < 1e-9 * eig.eigenvalues[0]);
    }

    #[test]
    fn classification_rejects_degenerate_settings() {
        assert!(matches!(gen_synthetic_classification(100, 8, 1, 2, 0), Err(Error::Input(_))));
        assert!(gen_synthetic_classification(100, 8, 3, 8, 0).is_err());
    }

    #[test]
    fn every_class_on_both_sides() {
        let s = gen_synthetic_classification(200, 16, 10, 5, 2).unwrap();
        for c in 0..10 {
            assert!(s.public_y.contains(&c) && s.private_y.contains(&c));
        }
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let write = |name: &str, body: &str| {
            let p = dir.path().join(name);
            std::fs::write(&p, body).unwrap();
            p
        };
        let public = write("pub.csv", "a,label,b\n1,0,2\n3,1,4\n");
        let private = write("priv.csv", "a,label,b\n5,1,6\n");
        match load_csv(&public, &private, "label", true).unwrap() {
            Dataset::Classification { split, classes } => {
                assert_eq!(classes, 2);
                assert_eq!(split.private_x.row(0), &[5.0, 6.0]);
                assert_eq!(split.public_y, vec![0, 1]);
            }
            other => panic!("{other:?}"),
        }
        let bad = write("bad.csv", "a,label,c\n5,1,6\n");
        assert!(matches!(load_csv(&public, &bad, "label", true), Err(Error::Dimension(_))));
        let frac = write("frac.csv", "a,label,b\n5,0.5,6\n");
        assert!(load_csv(&public, &frac, "label", true).is_err());
    }
}
