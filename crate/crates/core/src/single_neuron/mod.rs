//! Single hidden neuron `f(x) = a w^T x` trained on a scalar regression target.

mod bias;
mod exact;

pub use bias::{
    exact_interpolator_1d_null, implicit_bias_gradient, implicit_bias_hessian, implicit_bias_minimizer,
    implicit_bias_objective, potential, potential_scale,
};
pub use exact::{exact_balanced, exact_downstream, exact_solution, exact_upstream, Chart, ExactSolverState};

use alloc::format;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::data::Dataset;
use crate::error::{mismatch, Error, Result};
use crate::linalg::{DenseMatrix, DenseVector};
use crate::model::{Rates, EPS_BETA};

#[derive(Debug, Clone, PartialEq)]
pub struct SingleNeuronState {
    pub a: f64,
    pub w: DenseVector,
    pub rates: Rates,
}

impl SingleNeuronState {
    pub fn new(a: f64, w: DenseVector, rates: Rates) -> Result<Self> {
        rates.validate()?;
        if w.is_empty() {
            return Err(Error::Domain("hidden weight vector must be non-empty"));
        }
        Ok(Self { a, w, rates })
    }

    pub fn unit(a: f64, w: DenseVector) -> Self {
        Self { a, w, rates: Rates::UNIT }
    }

    /// State with predictor `beta` and conserved quantity `delta`, with `a` of the given sign.
    pub fn from_beta(beta: &DenseVector, delta: f64, rates: Rates, positive: bool) -> Result<Self> {
        rates.validate()?;
        let kappa = (delta * delta + 4.0 * rates.product() * beta.norm_squared()).sqrt();
        let a_sq = (kappa + delta) / (2.0 * rates.eta_w);
        if a_sq <= 0.0 {
            return Err(Error::Domain("zero predictor with non-positive delta has no unique readout"));
        }
        let a = if positive { a_sq.sqrt() } else { -a_sq.sqrt() };
        Ok(Self { a, w: beta / a, rates })
    }

    pub fn d(&self) -> usize {
        self.w.len()
    }

    pub fn beta(&self) -> DenseVector {
        &self.w * self.a
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(1 + self.w.len());
        out.push(self.a);
        out.extend_from_slice(self.w.as_slice());
        out
    }

    pub fn from_flat(flat: &[f64], rates: Rates) -> Result<Self> {
        if flat.len() < 2 {
            return Err(mismatch("SingleNeuronState::from_flat", format!("{} entries", flat.len())));
        }
        Self::new(flat[0], DenseVector::from_column_slice(&flat[1..]), rates)
    }
}

/// Hyperbolic-spherical coordinates: `mu = a |w|` and the cosine between `w` and the teacher.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperbolicSpherical {
    pub mu: f64,
    pub phi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Basin {
    PositiveBranch,
    NegativeBranch,
    SaddleBound,
}

pub fn conserved_delta(state: &SingleNeuronState) -> f64 {
    state.rates.eta_w * state.a * state.a - state.rates.eta_a * state.w.norm_squared()
}

fn scalar_target(data: &Dataset, d: usize) -> Result<()> {
    if data.d() != d || data.c() != 1 {
        return Err(mismatch(
            "single neuron",
            format!("data is {}->{} but the neuron has d = {} and one output", data.d(), data.c(), d),
        ));
    }
    Ok(())
}

fn beta_gradient(data: &Dataset, beta: &DenseVector) -> DenseVector {
    data.gram() * beta - data.xty().column(0)
}

/// Gradient-flow derivative `(a_dot, w_dot)`.
pub fn gradient_flow_field(state: &SingleNeuronState, data: &Dataset) -> Result<(f64, DenseVector)> {
    scalar_target(data, state.d())?;
    let g = beta_gradient(data, &state.beta());
    let a_dot = -state.rates.eta_a * state.w.dot(&g);
    let w_dot = g * (-state.rates.eta_w * state.a);
    Ok((a_dot, w_dot))
}

/// Writes the gradient-flow field for the flat layout `[a, w...]`.
pub fn flat_field(data: &Dataset, rates: Rates, y: &[f64], dy: &mut [f64]) {
    let a = y[0];
    let w = DenseVector::from_column_slice(&y[1..]);
    let g = beta_gradient(data, &(&w * a));
    dy[0] = -rates.eta_a * w.dot(&g);
    for (i, gi) in g.iter().enumerate() {
        dy[i + 1] = -rates.eta_w * a * gi;
    }
}

pub fn mu_phi(state: &SingleNeuronState, beta_star: &DenseVector) -> HyperbolicSpherical {
    let wn = state.w.norm();
    let bn = beta_star.norm();
    let phi = if wn > 0.0 && bn > 0.0 { (state.w.dot(beta_star) / (wn * bn)).clamp(-1.0, 1.0) } else { 0.0 };
    HyperbolicSpherical { mu: state.a * wn, phi }
}

/// Time derivative of `(mu, phi)` on whitened data.
pub fn mu_phi_field(
    coords: HyperbolicSpherical,
    delta: f64,
    beta_star_norm: f64,
    rates: Rates,
) -> Result<(f64, f64)> {
    let p = rates.product();
    let HyperbolicSpherical { mu, phi } = coords;
    let s = (delta * delta + 4.0 * p * mu * mu).sqrt();
    let mu_dot = s * (phi * beta_star_norm - mu);
    let denom = s - delta;
    if denom < 1e-14 {
        return Err(Error::SingularCoordinates);
    }
    let phi_dot = 2.0 * p * mu * beta_star_norm / denom * (1.0 - phi * phi);
    Ok((mu_dot, phi_dot))
}

/// Rebuilds `(a, w)` from hyperbolic-spherical coordinates at unit rates.
///
/// The direction of `w` is placed in the plane spanned by the teacher and `w0`.
pub fn recover_params(
    coords: HyperbolicSpherical,
    delta: f64,
    w0: &DenseVector,
    beta_star: &DenseVector,
) -> Result<SingleNeuronState> {
    let bn = beta_star.norm();
    if bn <= 0.0 || w0.norm() <= 0.0 {
        return Err(Error::Domain("recovery needs non-zero w0 and teacher"));
    }
    if w0.len() != beta_star.len() {
        return Err(mismatch("recover_params", format!("{} vs {}", w0.len(), beta_star.len())));
    }
    let HyperbolicSpherical { mu, phi } = coords;
    let root = (delta * delta + 4.0 * mu * mu).sqrt();
    let a_abs = ((root + delta) / 2.0).max(0.0).sqrt();
    let a = if mu < 0.0 { -a_abs } else { a_abs };
    let w_norm = ((root - delta) / 2.0).max(0.0).sqrt();

    let b_hat = beta_star / bn;
    let along = w0.dot(&b_hat);
    let ortho = w0 - &b_hat * along;
    let ortho_norm = ortho.norm();
    let c1 = w_norm * phi;
    let c2 = (w_norm * w_norm - c1 * c1).max(0.0).sqrt();
    let w = if ortho_norm <= 1e-12 * w0.norm() {
        if c2 > 1e-12 * w_norm.max(1e-300) && w_norm > 0.0 {
            return Err(Error::InconsistentCoordinates("w0 is parallel to the teacher but |phi| < 1"));
        }
        &b_hat * c1
    } else {
        &b_hat * c1 + ortho * (c2 / ortho_norm)
    };
    SingleNeuronState::new(a, w, Rates::UNIT)
}

/// Which branch of the minimum manifold the flow from `state0` reaches.
pub fn classify_basin(state0: &SingleNeuronState, beta_star: &DenseVector) -> Basin {
    let sign = |v: f64| if v > 0.0 { Basin::PositiveBranch } else if v < 0.0 { Basin::NegativeBranch } else { Basin::SaddleBound };
    let delta = conserved_delta(state0);
    if delta >= 0.0 {
        return sign(state0.a);
    }
    let (eta_a, eta_w) = (state0.rates.eta_a, state0.rates.eta_w);
    let p = eta_a * eta_w;
    // unit-rate variables
    let a = state0.a / eta_a.sqrt();
    let omega = state0.w.dot(beta_star) / (eta_w * eta_a.sqrt());
    let d = delta / p;
    let b_sq = beta_star.norm_squared() / p;
    let lift = (d * d + 4.0 * b_sq).sqrt() + d;
    let value = omega + 0.5 * a * lift;
    let scale = omega.abs() + 0.5 * a.abs() * lift;
    if value.abs() <= 1e-12 * scale {
        Basin::SaddleBound
    } else {
        sign(value)
    }
}

fn kappa(beta_norm_sq: f64, delta: f64, rates: Rates) -> f64 {
    (delta * delta + 4.0 * rates.product() * beta_norm_sq).sqrt()
}

/// Function-space preconditioner `M(beta, delta)`.
pub fn preconditioner_m(beta: &DenseVector, delta: f64, rates: Rates) -> Result<DenseMatrix> {
    let norm = beta.norm();
    if norm < EPS_BETA {
        return Err(Error::DegenerateBeta { norm });
    }
    let k = kappa(norm * norm, delta, rates);
    let d = beta.len();
    let b_hat = beta / norm;
    Ok(DenseMatrix::identity(d, d) * ((k + delta) / 2.0) + &b_hat * b_hat.transpose() * ((k - delta) / 2.0))
}

/// Inverse of [`preconditioner_m`] in closed form.
pub fn preconditioner_m_inverse(beta: &DenseVector, delta: f64, rates: Rates) -> Result<DenseMatrix> {
    let norm = beta.norm();
    if norm < EPS_BETA {
        return Err(Error::DegenerateBeta { norm });
    }
    let k = kappa(norm * norm, delta, rates);
    let f1 = (k + delta) / 2.0;
    let f2 = (k - delta) / 2.0;
    if f1 <= 0.0 {
        return Err(Error::Domain("preconditioner is singular"));
    }
    let d = beta.len();
    let b_hat = beta / norm;
    Ok(DenseMatrix::identity(d, d) / f1 - &b_hat * b_hat.transpose() * (f2 / (f1 * k)))
}

/// `beta_dot = -M(beta, delta) (X^T X beta - X^T y)`.
pub fn beta_field(beta: &DenseVector, delta: f64, data: &Dataset, rates: Rates) -> Result<DenseVector> {
    scalar_target(data, beta.len())?;
    let m = preconditioner_m(beta, delta, rates)?;
    Ok(-(m * beta_gradient(data, beta)))
}

/// Neural tangent kernel on the rows of `x`.
pub fn ntk_matrix(state: &SingleNeuronState, x: &DenseMatrix) -> Result<DenseMatrix> {
    if x.ncols() != state.d() {
        return Err(mismatch("ntk_matrix", format!("x has {} columns, neuron has d = {}", x.ncols(), state.d())));
    }
    let d = state.d();
    let m = DenseMatrix::identity(d, d) * (state.rates.eta_w * state.a * state.a)
        + &state.w * state.w.transpose() * state.rates.eta_a;
    Ok(x * m * x.transpose())
}

/// Split of `dM/dt` into the part driven by the norm and the part driven by the direction of beta.
pub fn ntk_rate_terms(
    beta: &DenseVector,
    beta_dot: &DenseVector,
    delta: f64,
    rates: Rates,
) -> Result<(DenseMatrix, DenseMatrix)> {
    let norm = beta.norm();
    if norm < EPS_BETA {
        return Err(Error::DegenerateBeta { norm });
    }
    let d = beta.len();
    let p = rates.product();
    let k = kappa(norm * norm, delta, rates);
    let b_hat = beta / norm;
    let proj = &b_hat * b_hat.transpose();
    let norm_dot = b_hat.dot(beta_dot);
    let magnitude = (DenseMatrix::identity(d, d) + &proj) * (2.0 * p * norm / k * norm_dot);
    let hat_dot = (beta_dot - &b_hat * norm_dot) / norm;
    let direction = (&hat_dot * b_hat.transpose() + &b_hat * hat_dot.transpose()) * ((k - delta) / 2.0);
    Ok((magnitude, direction))
}

#[cfg(test)]
mod tests;
