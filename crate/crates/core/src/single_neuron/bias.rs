//! Implicit bias of the single-neuron flow as a mirror-descent potential (unit learning rates).

#[allow(unused_imports)]
use num_traits::Float;

use super::preconditioner_m_inverse;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{self, DenseMatrix, DenseVector};
use crate::model::{Rates, EPS_BETA};
use crate::optim::{minimize_affine, NewtonOptions};

fn kappa(norm_sq: f64, delta: f64) -> f64 {
    (delta * delta + 4.0 * norm_sq).sqrt()
}

/// Mirror potential `(kappa - 2 delta) sqrt(kappa + delta) / 3`.
pub fn potential(beta: &DenseVector, delta: f64) -> f64 {
    let k = kappa(beta.norm_squared(), delta);
    (k - 2.0 * delta) * (k + delta).max(0.0).sqrt() / 3.0
}

/// Weight of the initial direction in the objective, `sqrt(kappa0 - delta)`.
pub fn potential_scale(beta0: &DenseVector, delta: f64) -> Result<f64> {
    if !(beta0.norm() > 0.0) {
        return Err(Error::Domain("initial predictor must be non-zero"));
    }
    Ok((kappa(beta0.norm_squared(), delta) - delta).max(0.0).sqrt())
}

/// Objective minimized by the flow's endpoint among all interpolators.
pub fn implicit_bias_objective(beta: &DenseVector, beta0: &DenseVector, delta: f64) -> Result<f64> {
    let psi = potential_scale(beta0, delta)?;
    Ok(potential(beta, delta) - psi * beta0.dot(beta) / beta0.norm())
}

pub fn implicit_bias_gradient(beta: &DenseVector, beta0: &DenseVector, delta: f64) -> Result<DenseVector> {
    let psi = potential_scale(beta0, delta)?;
    let k = kappa(beta.norm_squared(), delta);
    let g = (k + delta).sqrt();
    if !(g > 0.0) {
        return Err(Error::DegenerateBeta { norm: beta.norm() });
    }
    Ok(beta * (2.0 / g) - beta0 * (psi / beta0.norm()))
}

/// Closed-form Hessian of the potential, `sqrt(kappa + delta) M^{-1}`.
pub fn implicit_bias_hessian(beta: &DenseVector, delta: f64) -> Result<DenseMatrix> {
    let norm = beta.norm();
    let d = beta.len();
    if norm < EPS_BETA {
        if delta > 0.0 {
            return Ok(DenseMatrix::identity(d, d) * (2.0 / delta).sqrt());
        }
        return Err(Error::DegenerateBeta { norm });
    }
    let g = (kappa(norm * norm, delta) + delta).sqrt();
    Ok(preconditioner_m_inverse(beta, delta, Rates::UNIT)? * g)
}

/// Interpolator reached from `beta0` when the null space of the data is spanned by the unit vector `v`.
///
/// `beta_star` must be the minimum-norm interpolator (orthogonal to `v`).
pub fn exact_interpolator_1d_null(
    beta_star: &DenseVector,
    v: &DenseVector,
    beta0: &DenseVector,
    delta: f64,
) -> Result<DenseVector> {
    let psi = potential_scale(beta0, delta)?;
    let k = psi * beta0.dot(v) / beta0.norm() / 2.0_f64.sqrt();
    let half = (k * k + delta) / 2.0;
    let alpha = k * (half + (half * half + beta_star.norm_squared()).sqrt()).max(0.0).sqrt();
    Ok(beta_star + v * alpha)
}

/// Minimizer of the implicit-bias objective over all least-squares interpolators of `data`.
pub fn implicit_bias_minimizer(data: &Dataset, beta0: &DenseVector, delta: f64) -> Result<DenseVector> {
    let base = data.min_norm_solution()?.column(0).into_owned();
    let null = linalg::null_space(data.x(), linalg::RANK_TOL)?;
    minimize_affine(
        &base,
        &null,
        |b| implicit_bias_objective(b, beta0, delta),
        |b| implicit_bias_gradient(b, beta0, delta),
        |b| implicit_bias_hessian(b, delta),
        NewtonOptions::default(),
    )
}
