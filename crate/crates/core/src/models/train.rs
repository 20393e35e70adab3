//! Fitting downstream models on public data.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{softmax, Activation, DenseLayer, LinearModel, MlpModel, Model};
use crate::error::{dim, input, Error, Result};
use crate::linalg::{cholesky_solve, sym_eig, Matrix};
use crate::scalar::Scalar;

/// Ordinary least squares with an intercept.
///
/// Solved from the centered normal equations: Cholesky when well
/// conditioned, an eigen pseudo-solve otherwise, followed by one step of
/// iterative refinement.
pub fn fit_ols<T: Scalar>(x: &Matrix<T>, y: &[T]) -> Result<LinearModel<T>> {
    let (n, m) = (x.rows(), x.cols());
    if y.len() != n {
        return Err(dim(format!("{n} feature rows but {} targets", y.len())));
    }
    if m == 0 || n <= m {
        return Err(input(format!("OLS needs n > m (n={n}, m={m})")));
    }
    if !x.is_finite() || y.iter().any(|v| !v.is_finite()) {
        return Err(input("OLS inputs must be finite"));
    }
    let nf = T::of(n as f64);
    let x_mean: Vec<T> = (0..m).map(|j| (0..n).map(|i| x[(i, j)]).sum::<T>() / nf).collect();
    let y_mean = y.iter().copied().sum::<T>() / nf;
    let xc = Matrix::from_fn(n, m, |i, j| x[(i, j)] - x_mean[j]);
    let yc: Vec<T> = y.iter().map(|&v| v - y_mean).collect();

    let gram = xc.gram();
    let rhs = xc.tr_matvec(&yc);
    let eig = sym_eig(&gram)?;
    let (top, bottom) = (eig.eigenvalues[0], eig.eigenvalues[m - 1]);
    let condition = if bottom > T::zero() { (top / bottom).as_f64() } else { f64::INFINITY };
    if top <= T::zero() || bottom <= top * T::epsilon() * T::of(1e3) {
        return Err(Error::Singular { condition });
    }

    let eig_solve = |b: &[T]| -> Vec<T> {
        let v = &eig.eigenvectors;
        let coeffs: Vec<T> = v
            .tr_matvec(b)
            .iter()
            .zip(&eig.eigenvalues)
            .map(|(&c, &l)| c / l)
            .collect();
        v.matvec(&coeffs)
    };
    let well_conditioned = condition < (T::one() / T::epsilon()).sqrt().as_f64();
    let solve = |b: &[T]| -> Vec<T> {
        if well_conditioned {
            cholesky_solve(&gram, b).unwrap_or_else(|| eig_solve(b))
        } else {
            eig_solve(b)
        }
    };

    let mut w = solve(&rhs);
    let gw = gram.matvec(&w);
    let resid: Vec<T> = rhs.iter().zip(&gw).map(|(&a, &b)| a - b).collect();
    let correction = solve(&resid);
    w.iter_mut().zip(&correction).for_each(|(a, &c)| *a += c);

    let bias = y_mean - w.iter().zip(&x_mean).map(|(&a, &b)| a * b).sum::<T>();
    LinearModel::new(Matrix::from_row_major(1, m, w)?, vec![bias])
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Architecture {
    Linear,
    Mlp {
        hidden: (usize, usize),
        activation: Activation,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub step_size: f64,
    pub epochs: usize,
    /// 0 means full batch.
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            step_size: 0.1,
            epochs: 100,
            batch_size: 32,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct TrainReport {
    /// Mean cross-entropy over the training set after each epoch.
    pub losses: Vec<f64>,
    /// Largest epoch-over-epoch loss increase (0 when monotone).
    pub max_increase: f64,
}

struct Grads<T> {
    weights: Vec<Matrix<T>>,
    biases: Vec<Vec<T>>,
}

/// Trains a softmax classifier by mini-batch gradient descent on the mean
/// cross-entropy. Deterministic for a given `config.seed`.
pub fn train_classifier<T: Scalar>(
    x: &Matrix<T>,
    labels: &[usize],
    num_classes: usize,
    arch: Architecture,
    config: &TrainConfig,
) -> Result<(Model<T>, TrainReport)> {
    let (n, m) = (x.rows(), x.cols());
    if num_classes < 2 {
        return Err(input("a classifier needs at least two classes"));
    }
    if labels.len() != n || n == 0 {
        return Err(dim(format!("{n} feature rows but {} labels", labels.len())));
    }
    if let Some(bad) = labels.iter().find(|&&c| c >= num_classes) {
        return Err(input(format!("label {bad} out of range for {num_classes} classes")));
    }
    if !x.is_finite() {
        return Err(input("training features must be finite"));
    }
    if !(config.step_size > 0.0) || config.epochs == 0 {
        return Err(Error::Parameter("step size and epochs must be positive".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let widths: Vec<usize> = match arch {
        Architecture::Linear => vec![m, num_classes],
        Architecture::Mlp { hidden: (h1, h2), .. } => vec![m, h1, h2, num_classes],
    };
    if widths.contains(&0) {
        return Err(dim("layer widths must be positive"));
    }
    let activation = match arch {
        Architecture::Linear => None,
        Architecture::Mlp { activation, .. } => Some(activation),
    };
    let mut layers: Vec<DenseLayer<T>> = widths
        .windows(2)
        .map(|w| {
            let bound = (6.0 / (w[0] + w[1]) as f64).sqrt();
            DenseLayer {
                weights: Matrix::from_fn(w[1], w[0], |_, _| T::of(rng.random_range(-bound..bound))),
                bias: vec![T::zero(); w[1]],
            }
        })
        .collect();

    let batch = if config.batch_size == 0 { n } else { config.batch_size.min(n) };
    let step = T::of(config.step_size);
    let mut order: Vec<usize> = (0..n).collect();
    let mut report = TrainReport::default();

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            let grads = batch_gradient(&layers, activation, x, labels, chunk);
            let k = step / T::of(chunk.len() as f64);
            for ((layer, gw), gb) in layers.iter_mut().zip(&grads.weights).zip(&grads.biases) {
                let mut delta = gw.clone();
                delta.scale(-k);
                layer.weights.add_assign(&delta);
                layer.bias.iter_mut().zip(gb).for_each(|(b, &g)| *b -= k * g);
            }
        }
        let loss = mean_loss(&layers, activation, x, labels);
        if !loss.is_finite() {
            return Err(Error::Divergence { epoch, loss });
        }
        if let Some(&prev) = report.losses.last() {
            report.max_increase = report.max_increase.max(loss - prev);
        }
        report.losses.push(loss);
    }

    let model = match activation {
        None => {
            let layer = layers.pop().expect("one layer");
            Model::Linear(LinearModel::new(layer.weights, layer.bias)?)
        }
        Some(act) => Model::Mlp(MlpModel::new(layers, act)?),
    };
    Ok((model, report))
}

fn forward_trace<T: Scalar>(
    layers: &[DenseLayer<T>],
    activation: Option<Activation>,
    z: &[T],
) -> (Vec<Vec<T>>, Vec<Vec<T>>, Vec<T>) {
    let mut inputs = Vec::with_capacity(layers.len());
    let mut pre = Vec::with_capacity(layers.len());
    let mut h = z.to_vec();
    for (k, layer) in layers.iter().enumerate() {
        let a = layer.affine(&h);
        inputs.push(h);
        if k + 1 == layers.len() {
            return (inputs, pre, a);
        }
        let act = activation.expect("hidden layers imply an activation");
        h = a.iter().map(|&v| act.apply(v)).collect();
        pre.push(a);
    }
    unreachable!("at least one layer")
}

fn batch_gradient<T: Scalar>(
    layers: &[DenseLayer<T>],
    activation: Option<Activation>,
    x: &Matrix<T>,
    labels: &[usize],
    idx: &[usize],
) -> Grads<T> {
    let mut grads = Grads {
        weights: layers
            .iter()
            .map(|l| Matrix::zeros(l.weights.rows(), l.weights.cols()))
            .collect(),
        biases: layers.iter().map(|l| vec![T::zero(); l.bias.len()]).collect(),
    };
    for &i in idx {
        let (inputs, pre, logits) = forward_trace(layers, activation, x.row(i));
        let mut delta = softmax(&logits);
        delta[labels[i]] -= T::one();
        for k in (0..layers.len()).rev() {
            let gw = &mut grads.weights[k];
            for (r, &d) in delta.iter().enumerate() {
                if d == T::zero() {
                    continue;
                }
                for (c, &h) in inputs[k].iter().enumerate() {
                    gw[(r, c)] += d * h;
                }
            }
            grads.biases[k].iter_mut().zip(&delta).for_each(|(g, &d)| *g += d);
            if k > 0 {
                let act = activation.expect("hidden layers imply an activation");
                let back = layers[k].weights.tr_matvec(&delta);
                delta = back
                    .iter()
                    .zip(&pre[k - 1])
                    .map(|(&g, &a)| g * act.derivative(a))
                    .collect();
            }
        }
    }
    grads
}

fn mean_loss<T: Scalar>(
    layers: &[DenseLayer<T>],
    activation: Option<Activation>,
    x: &Matrix<T>,
    labels: &[usize],
) -> f64 {
    let total: f64 = (0..x.rows())
        .map(|i| {
            let (_, _, logits) = forward_trace(layers, activation, x.row(i));
            let max = logits.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.as_f64()));
            let lse = max + logits.iter().map(|v| (v.as_f64() - max).exp()).sum::<f64>().ln();
            lse - logits[labels[i]].as_f64()
        })
        .sum();
    total / x.rows() as f64
}
