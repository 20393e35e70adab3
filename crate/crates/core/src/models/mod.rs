//! Downstream models with exact Jacobians.
//!
//! Classifier Jacobians are taken at the logits unless
//! [`JacobianMode::Softmax`] is requested.

mod check;
mod train;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{dim, input, Error, Result};
use crate::linalg::{sym_eig, Matrix};
use crate::scalar::{from_f64_vec, to_f64_vec, Scalar};
use crate::special;

pub use check::{check_jacobian, finite_difference_jacobian, max_relative_error, JacobianCheck};
pub use train::{fit_ols, train_classifier, Architecture, TrainConfig, TrainReport};

/// `∂T/∂z` evaluated at a point, `outputs × inputs`.
pub type JacobianMatrix<T> = Matrix<T>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Gelu,
    Tanh,
}

impl Activation {
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Relu => x.max(T::zero()),
            Activation::Gelu => x * std_normal_cdf(x),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative; the ReLU subgradient at 0 is 0.
    pub fn derivative<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Gelu => std_normal_cdf(x) + x * std_normal_pdf(x),
            Activation::Tanh => {
                let t = x.tanh();
                T::one() - t * t
            }
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Ok(Self::Relu),
            "gelu" => Ok(Self::Gelu),
            "tanh" => Ok(Self::Tanh),
            other => Err(Error::Parameter(format!("unknown activation '{other}'"))),
        }
    }
}

fn std_normal_cdf<T: Scalar>(x: T) -> T {
    T::of(special::normal_cdf(x.as_f64()))
}

fn std_normal_pdf<T: Scalar>(x: T) -> T {
    T::of(special::normal_pdf(x.as_f64()))
}

/// Which output the Jacobian differentiates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JacobianMode {
    #[default]
    Logits,
    Softmax,
}

/// A differentiable map `ℝ^m → ℝ^l`.
pub trait DifferentiableModel<T: Scalar> {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn forward(&self, z: &[T]) -> Result<Vec<T>>;
    /// Exact Jacobian of the raw outputs (logits) at `z`.
    fn jacobian(&self, z: &[T]) -> Result<JacobianMatrix<T>>;

    fn jacobian_with_mode(&self, z: &[T], mode: JacobianMode) -> Result<JacobianMatrix<T>> {
        let j = self.jacobian(z)?;
        match mode {
            JacobianMode::Logits => Ok(j),
            JacobianMode::Softmax => {
                let p = softmax(&self.forward(z)?);
                let l = p.len();
                let s = Matrix::from_fn(l, l, |a, b| {
                    let d = if a == b { p[a] } else { T::zero() };
                    d - p[a] * p[b]
                });
                Ok(s.matmul(&j))
            }
        }
    }

    fn check_input(&self, z: &[T]) -> Result<()> {
        if z.len() != self.input_dim() {
            return Err(dim(format!(
                "model expects {} inputs, got {}",
                self.input_dim(),
                z.len()
            )));
        }
        if z.iter().any(|x| !x.is_finite()) {
            return Err(input("non-finite model input"));
        }
        Ok(())
    }
}

pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
    let exps: Vec<T> = logits.iter().map(|&x| (x - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn argmax<T: Scalar>(v: &[T]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, T::neg_infinity()), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) })
        .0
}

/// Affine map `z ↦ W z + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearModel<T> {
    pub weights: Matrix<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> LinearModel<T> {
    pub fn new(weights: Matrix<T>, bias: Vec<T>) -> Result<Self> {
        if weights.rows() == 0 || weights.cols() == 0 {
            return Err(dim("linear model needs l >= 1 and m >= 1"));
        }
        if bias.len() != weights.rows() {
            return Err(dim("bias length must equal the number of outputs"));
        }
        if !weights.is_finite() || bias.iter().any(|b| !b.is_finite()) {
            return Err(input("non-finite linear model parameters"));
        }
        Ok(Self { weights, bias })
    }
}

impl<T: Scalar> DifferentiableModel<T> for LinearModel<T> {
    fn input_dim(&self) -> usize {
        self.weights.cols()
    }

    fn output_dim(&self) -> usize {
        self.weights.rows()
    }

    fn forward(&self, z: &[T]) -> Result<Vec<T>> {
        self.check_input(z)?;
        let mut out = self.weights.matvec(z);
        out.iter_mut().zip(&self.bias).for_each(|(o, &b)| *o += b);
        Ok(out)
    }

    fn jacobian(&self, z: &[T]) -> Result<JacobianMatrix<T>> {
        self.check_input(z)?;
        Ok(self.weights.clone())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer<T> {
    /// `out × in`
    pub weights: Matrix<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> DenseLayer<T> {
    fn affine(&self, x: &[T]) -> Vec<T> {
        let mut a = self.weights.matvec(x);
        a.iter_mut().zip(&self.bias).for_each(|(o, &b)| *o += b);
        a
    }
}

/// Fully connected network; every layer but the last is followed by the
/// activation.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpModel<T> {
    pub layers: Vec<DenseLayer<T>>,
    pub activation: Activation,
}

impl<T: Scalar> MlpModel<T> {
    pub fn new(layers: Vec<DenseLayer<T>>, activation: Activation) -> Result<Self> {
        if layers.len() < 2 {
            return Err(dim("an MLP needs at least one hidden layer"));
        }
        for (k, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.weights.rows() || layer.weights.rows() == 0 {
                return Err(dim(format!("layer {k}: bias/weight shape mismatch")));
            }
            if !layer.weights.is_finite() || layer.bias.iter().any(|b| !b.is_finite()) {
                return Err(input(format!("layer {k}: non-finite parameters")));
            }
            if k > 0 && layers[k - 1].weights.rows() != layer.weights.cols() {
                return Err(dim(format!("layer {k} input width disagrees with layer {}", k - 1)));
            }
        }
        Ok(Self { layers, activation })
    }

    /// Hidden pre-activations for each hidden layer, plus the logits.
    fn pre_activations(&self, z: &[T]) -> (Vec<Vec<T>>, Vec<T>) {
        let mut h = z.to_vec();
        let mut pre = Vec::with_capacity(self.layers.len() - 1);
        let (last, hidden) = self.layers.split_last().expect("validated");
        for layer in hidden {
            let a = layer.affine(&h);
            h = a.iter().map(|&x| self.activation.apply(x)).collect();
            pre.push(a);
        }
        (pre, last.affine(&h))
    }

    /// Smallest `|pre-activation|` over all hidden units at `z`.
    pub fn min_abs_pre_activation(&self, z: &[T]) -> Result<T> {
        self.check_input(z)?;
        let (pre, _) = self.pre_activations(z);
        Ok(pre
            .iter()
            .flatten()
            .fold(T::infinity(), |m, x| m.min(x.abs())))
    }
}

impl<T: Scalar> DifferentiableModel<T> for MlpModel<T> {
    fn input_dim(&self) -> usize {
        self.layers[0].weights.cols()
    }

    fn output_dim(&self) -> usize {
        self.layers.last().expect("validated").weights.rows()
    }

    fn forward(&self, z: &[T]) -> Result<Vec<T>> {
        self.check_input(z)?;
        Ok(self.pre_activations(z).1)
    }

    fn jacobian(&self, z: &[T]) -> Result<JacobianMatrix<T>> {
        self.check_input(z)?;
        let (pre, _) = self.pre_activations(z);
        // Reverse accumulation: start from ∂logits/∂h_last = W_last and pull
        // back through each activation and affine layer.
        let (last, hidden) = self.layers.split_last().expect("validated");
        let mut g = last.weights.clone();
        for (layer, a) in hidden.iter().zip(&pre).rev() {
            let d: Vec<T> = a.iter().map(|&x| self.activation.derivative(x)).collect();
            g = g.scale_columns(&d).matmul(&layer.weights);
        }
        Ok(g)
    }
}

/// Any supported downstream model.
#[derive(Clone, Debug, PartialEq)]
pub enum Model<T> {
    Linear(LinearModel<T>),
    Mlp(MlpModel<T>),
}

impl<T: Scalar> DifferentiableModel<T> for Model<T> {
    fn input_dim(&self) -> usize {
        match self {
            Model::Linear(m) => m.input_dim(),
            Model::Mlp(m) => m.input_dim(),
        }
    }

    fn output_dim(&self) -> usize {
        match self {
            Model::Linear(m) => m.output_dim(),
            Model::Mlp(m) => m.output_dim(),
        }
    }

    fn forward(&self, z: &[T]) -> Result<Vec<T>> {
        match self {
            Model::Linear(m) => m.forward(z),
            Model::Mlp(m) => m.forward(z),
        }
    }

    fn jacobian(&self, z: &[T]) -> Result<JacobianMatrix<T>> {
        match self {
            Model::Linear(m) => m.jacobian(z),
            Model::Mlp(m) => m.jacobian(z),
        }
    }
}

impl<T: Scalar> Model<T> {
    pub fn predict_class(&self, z: &[T]) -> Result<usize> {
        Ok(argmax(&self.forward(z)?))
    }

    pub fn to_document(&self) -> ModelDocument {
        let layer_doc = |w: &Matrix<T>, b: &[T]| LayerDocument {
            rows: w.rows(),
            cols: w.cols(),
            weights: to_f64_vec(w.as_slice()),
            bias: to_f64_vec(b),
        };
        match self {
            Model::Linear(m) => ModelDocument {
                kind: ModelKind::Linear,
                input_dim: m.input_dim(),
                output_dim: m.output_dim(),
                activation: None,
                layers: vec![layer_doc(&m.weights, &m.bias)],
            },
            Model::Mlp(m) => ModelDocument {
                kind: ModelKind::Mlp,
                input_dim: m.input_dim(),
                output_dim: m.output_dim(),
                activation: Some(m.activation),
                layers: m.layers.iter().map(|l| layer_doc(&l.weights, &l.bias)).collect(),
            },
        }
    }

    pub fn from_document(doc: &ModelDocument) -> Result<Self> {
        let layers = doc
            .layers
            .iter()
            .map(|l| {
                Ok(DenseLayer {
                    weights: Matrix::from_row_major(l.rows, l.cols, from_f64_vec(&l.weights))?,
                    bias: from_f64_vec(&l.bias),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let model = match doc.kind {
            ModelKind::Linear => {
                let [layer]: [DenseLayer<T>; 1] = layers
                    .try_into()
                    .map_err(|_| dim("a linear model has exactly one layer"))?;
                Model::Linear(LinearModel::new(layer.weights, layer.bias)?)
            }
            ModelKind::Mlp => {
                let act = doc
                    .activation
                    .ok_or_else(|| input("MLP document lacks an activation"))?;
                Model::Mlp(MlpModel::new(layers, act)?)
            }
        };
        if model.input_dim() != doc.input_dim || model.output_dim() != doc.output_dim {
            return Err(dim("declared dimensions disagree with the layer shapes"));
        }
        Ok(model)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("model document serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_document(&serde_json::from_str(text)?)
    }

    /// SHA-256 of the canonical JSON document, hex encoded.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Linear,
    Mlp,
}

/// On-disk model layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub kind: ModelKind,
    pub input_dim: usize,
    pub output_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activation: Option<Activation>,
    pub layers: Vec<LayerDocument>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerDocument {
    pub rows: usize,
    pub cols: usize,
    /// Row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Splits `z` into its component in the row space of `w` and the remainder,
/// which `w` maps to zero.
pub fn decompose_row_null<T: Scalar>(w: &Matrix<T>, z: &[T]) -> Result<(Vec<T>, Vec<T>)> {
    if w.cols() != z.len() {
        return Err(dim("decompose_row_null: z length must equal W's column count"));
    }
    if !w.is_finite() || z.iter().any(|x| !x.is_finite()) {
        return Err(input("decompose_row_null: non-finite input"));
    }
    let scale = w.max_abs();
    if scale == T::zero() {
        return Err(input("decompose_row_null: W is zero"));
    }
    let eig = sym_eig(&w.gram())?;
    let cutoff = eig.eigenvalues[0] * T::epsilon() * T::of(w.cols().max(w.rows()) as f64 * 16.0);
    let mut z_r = vec![T::zero(); z.len()];
    for (k, &ev) in eig.eigenvalues.iter().enumerate() {
        if ev <= cutoff {
            break;
        }
        let v = eig.eigenvectors.column(k);
        let c = crate::linalg::dot(&v, z);
        z_r.iter_mut().zip(&v).for_each(|(r, &vi)| *r += c * vi);
    }
    let z_n = z.iter().zip(&z_r).map(|(&a, &b)| a - b).collect();
    Ok((z_r, z_n))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::linalg::dot;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_mlp(
        widths: &[usize],
        activation: Activation,
        rng: &mut ChaCha8Rng,
    ) -> MlpModel<f64> {
        let layers = widths
            .windows(2)
            .map(|w| DenseLayer {
                weights: Matrix::from_fn(w[1], w[0], |_, _| rng.random_range(-1.0..1.0)),
                bias: (0..w[1]).map(|_| rng.random_range(-0.5..0.5)).collect(),
            })
            .collect();
        MlpModel::new(layers, activation).unwrap()
    }

    /// Central finite differences, column by column.
    fn fd_jacobian(model: &impl DifferentiableModel<f64>, z: &[f64], h: f64) -> Matrix<f64> {
        let (l, m) = (model.output_dim(), model.input_dim());
        let mut j = Matrix::zeros(l, m);
        for c in 0..m {
            let mut zp = z.to_vec();
            let mut zm = z.to_vec();
            zp[c] += h;
            zm[c] -= h;
            let fp = model.forward(&zp).unwrap();
            let fm = model.forward(&zm).unwrap();
            for r in 0..l {
                j[(r, c)] = (fp[r] - fm[r]) / (2.0 * h);
            }
        }
        j
    }

    fn max_rel_err(a: &Matrix<f64>, b: &Matrix<f64>) -> f64 {
        let scale = b.max_abs().max(1e-12);
        a.max_abs_diff(b) / scale
    }

    #[test]
    fn linear_jacobian_is_weight_matrix() {
        let w = Matrix::<f64>::from_rows(&[vec![1.0, 1.0]]).unwrap();
        let model = LinearModel::new(w.clone(), vec![0.0]).unwrap();
        assert_eq!(model.jacobian(&[3.0, -2.0]).unwrap(), w);
        assert_eq!(model.jacobian(&[0.1, 7.0]).unwrap(), w);
    }

    #[test]
    fn tanh_mlp_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mlp = random_mlp(&[6, 10, 8, 3], Activation::Tanh, &mut rng);
        for _ in 0..10 {
            let z: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            let exact = mlp.jacobian(&z).unwrap();
            let fd = fd_jacobian(&mlp, &z, 1e-5);
            assert!(max_rel_err(&exact, &fd) <= 1e-5);
        }
    }

    #[test]
    fn relu_mlp_matches_away_from_kinks() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mlp = random_mlp(&[4, 10, 6, 2], Activation::Relu, &mut rng);
        let mut checked = 0;
        while checked < 5 {
            let z: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
            if mlp.min_abs_pre_activation(&z).unwrap() <= 0.1 {
                continue;
            }
            let fd = fd_jacobian(&mlp, &z, 1e-5);
            assert!(max_rel_err(&mlp.jacobian(&z).unwrap(), &fd) <= 1e-6);
            checked += 1;
        }
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        assert_eq!(Activation::Relu.derivative(0.0_f64), 0.0);
        assert_eq!(Activation::Relu.derivative(1e-300_f64), 1.0);
    }

    #[test]
    fn gelu_matches_closed_form_values() {
        // GELU(1) = Φ(1) = 0.8413447460685429
        let got = Activation::Gelu.apply(1.0_f64);
        assert!((got - 0.841_344_746_068_542_9).abs() < 1e-14, "{got}");
        assert_eq!(Activation::Gelu.apply(0.0_f64), 0.0);
    }

    #[test]
    fn softmax_jacobian_rows_sum_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mlp = random_mlp(&[3, 5, 4, 4], Activation::Gelu, &mut rng);
        let j = mlp.jacobian_with_mode(&[0.2, -0.4, 0.9], JacobianMode::Softmax).unwrap();
        for c in 0..3 {
            let s: f64 = (0..4).map(|r| j[(r, c)]).sum();
            assert!(s.abs() < 1e-14);
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let model = LinearModel::new(Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap(), vec![0.0]).unwrap();
        assert!(matches!(model.jacobian(&[1.0]), Err(Error::Dimension(_))));
        assert!(matches!(model.forward(&[1.0, f64::NAN]), Err(Error::Input(_))));
    }

    #[test]
    fn summation_decomposition() {
        let w = Matrix::<f64>::from_rows(&[vec![1.0, 1.0]]).unwrap();
        let (zr, zn) = decompose_row_null(&w, &[3.0, 1.0]).unwrap();
        assert!((zr[0] - 2.0).abs() < 1e-14 && (zr[1] - 2.0).abs() < 1e-14);
        assert!((zn[0] - 1.0).abs() < 1e-14 && (zn[1] + 1.0).abs() < 1e-14);

        let (zr, zn) = decompose_row_null(&w, &[1.5, -1.5]).unwrap();
        assert!(zr.iter().all(|x| x.abs() < 1e-14));
        assert_eq!(zn, vec![1.5, -1.5]);

        let (zr, zn) = decompose_row_null(&Matrix::<f64>::identity(3), &[1.0, 2.0, 3.0]).unwrap();
        assert!(zr.iter().zip([1.0, 2.0, 3.0]).all(|(a, b)| (a - b).abs() < 1e-14));
        assert!(zn.iter().all(|x| x.abs() < 1e-14));
    }

    #[test]
    fn decomposition_is_orthogonal_and_kills_null_part() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let w = Matrix::from_fn(2, 5, |_, _| rng.random_range(-1.0..1.0));
            let z: Vec<f64> = (0..5).map(|_| rng.random_range(-3.0..3.0)).collect();
            let (zr, zn) = decompose_row_null(&w, &z).unwrap();
            let zz = dot(&z, &z);
            assert!(dot(&zr, &zn).abs() <= 1e-10 * zz);
            assert!(w.matvec(&zn).iter().all(|x| x.abs() <= 1e-10));
            // idempotence
            let (zr2, _) = decompose_row_null(&w, &zr).unwrap();
            assert!(zr.iter().zip(&zr2).all(|(a, b)| (a - b).abs() <= 1e-12));
        }
    }

    #[test]
    fn taylor_residual_is_second_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mlp = random_mlp(&[5, 10, 32, 3], Activation::Tanh, &mut rng);
        let z: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let dir: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let dn = dot(&dir, &dir).sqrt();
        let j = mlp.jacobian(&z).unwrap();
        let f0 = mlp.forward(&z).unwrap();
        let residual = |step: f64| {
            let d: Vec<f64> = dir.iter().map(|x| x / dn * step).collect();
            let zp: Vec<f64> = z.iter().zip(&d).map(|(a, b)| a + b).collect();
            let f = mlp.forward(&zp).unwrap();
            let jd = j.matvec(&d);
            f.iter()
                .zip(&f0)
                .zip(&jd)
                .map(|((a, b), c)| (a - b - c).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        assert!(residual(1e-3) / residual(5e-4) >= 3.5);
    }

    #[test]
    fn model_json_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = Model::Mlp(random_mlp(&[4, 10, 32, 3], Activation::Gelu, &mut rng));
        let back = Model::<f64>::from_json(&model.to_json()).unwrap();
        assert_eq!(back, model);
        assert_eq!(back.content_hash(), model.content_hash());
    }

    #[test]
    fn model_document_shape_errors() {
        let mut doc = Model::Linear(
            LinearModel::new(Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap(), vec![0.5]).unwrap(),
        )
        .to_document();
        doc.input_dim = 3;
        assert!(Model::<f64>::from_document(&doc).is_err());
    }
}
