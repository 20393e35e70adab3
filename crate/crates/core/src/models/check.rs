//! Finite-difference verification of model Jacobians.

use serde::Serialize;

use super::{Activation, DifferentiableModel, Model};
use crate::error::{input, Result};
use crate::linalg::Matrix;

/// Central differences `(f(z + h e_c) − f(z − h e_c)) / 2h`, column by column.
pub fn finite_difference_jacobian<M: DifferentiableModel<f64>>(model: &M, z: &[f64], h: f64) -> Result<Matrix<f64>> {
    let (l, m) = (model.output_dim(), model.input_dim());
    model.check_input(z)?;
    let mut j = Matrix::zeros(l, m);
    let mut zp = z.to_vec();
    for c in 0..m {
        zp[c] = z[c] + h;
        let fp = model.forward(&zp)?;
        zp[c] = z[c] - h;
        let fm = model.forward(&zp)?;
        zp[c] = z[c];
        for r in 0..l {
            j[(r, c)] = (fp[r] - fm[r]) / (2.0 * h);
        }
    }
    Ok(j)
}

/// `max |a − b| / max |b|`, the largest entry error relative to the
/// reference's scale.
pub fn max_relative_error(a: &Matrix<f64>, b: &Matrix<f64>) -> f64 {
    a.max_abs_diff(b) / b.max_abs().max(1e-12)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct JacobianCheck {
    pub points: usize,
    /// Points skipped because a ReLU pre-activation was within the margin
    /// of its kink, where differences straddle two linear pieces.
    pub skipped: usize,
    pub step: f64,
    pub max_relative_error: f64,
}

/// Compares exact and finite-difference Jacobians at each row of `points`.
pub fn check_jacobian(model: &Model<f64>, points: &Matrix<f64>, step: f64, kink_margin: f64) -> Result<JacobianCheck> {
    if !(step > 0.0) {
        return Err(input(format!("finite-difference step must be positive, got {step}")));
    }
    let mut worst: f64 = 0.0;
    let mut skipped = 0;
    for i in 0..points.rows() {
        let z = points.row(i);
        if let Model::Mlp(mlp) = model {
            if mlp.activation == Activation::Relu && mlp.min_abs_pre_activation(z)? <= kink_margin {
                skipped += 1;
                continue;
            }
        }
        let exact = model.jacobian(z)?;
        let fd = finite_difference_jacobian(model, z, step)?;
        worst = worst.max(max_relative_error(&exact, &fd));
    }
    Ok(JacobianCheck {
        points: points.rows(),
        skipped,
        step,
        max_relative_error: worst,
    })
}
