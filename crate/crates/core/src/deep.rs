//! Deep linear chains `f(x) = a^T W_L ... W_1 x` with square hidden layers and unit learning rates.

use alloc::format;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{mismatch, Error, Result};
use crate::linalg::{self, psd_power, DenseMatrix, DenseVector, RANK_TOL};
use crate::model::EPS_BETA;
use crate::optim::{minimize_affine, NewtonOptions};

/// Relative tolerance on conservation residuals before norm identities are trusted.
pub const CONSERVATION_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct DeepLinearState {
    /// `W_1, ..., W_L`, each `d x d`.
    pub layers: Vec<DenseMatrix>,
    pub a: DenseVector,
}

/// Residuals of the layer-wise balance conditions.
#[derive(Debug, Clone, PartialEq)]
pub struct DeepConservation {
    /// Trace estimate of the readout imbalance.
    pub delta: f64,
    /// `|W_{l+1}^T W_{l+1} - W_l W_l^T|_F` for consecutive layers.
    pub layer_residuals: Vec<f64>,
    /// `|a a^T - W_L W_L^T - delta I|_F`.
    pub head_residual: f64,
}

impl DeepConservation {
    pub fn max_residual(&self) -> f64 {
        self.layer_residuals.iter().copied().fold(self.head_residual, f64::max)
    }
}

impl DeepLinearState {
    pub fn new(layers: Vec<DenseMatrix>, a: DenseVector) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Domain("a deep chain needs at least one hidden layer"));
        }
        let d = a.len();
        for (l, w) in layers.iter().enumerate() {
            if w.shape() != (d, d) {
                return Err(mismatch("DeepLinearState::new", format!("layer {l} is {:?}, expected {d}x{d}", w.shape())));
            }
        }
        Ok(Self { layers, a })
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn d(&self) -> usize {
        self.a.len()
    }

    /// `W_1^T ... W_L^T a`.
    pub fn beta(&self) -> DenseVector {
        self.layers.iter().rev().fold(self.a.clone(), |v, w| w.transpose() * v)
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.depth() * self.d() * self.d() + self.d());
        for w in &self.layers {
            out.extend_from_slice(w.as_slice());
        }
        out.extend_from_slice(self.a.as_slice());
        out
    }

    pub fn from_flat(d: usize, depth: usize, flat: &[f64]) -> Result<Self> {
        if flat.len() != depth * d * d + d {
            return Err(mismatch("DeepLinearState::from_flat", format!("{} entries for d={d}, L={depth}", flat.len())));
        }
        let layers = (0..depth).map(|l| DenseMatrix::from_column_slice(d, d, &flat[l * d * d..(l + 1) * d * d])).collect();
        Self::new(layers, DenseVector::from_column_slice(&flat[depth * d * d..]))
    }

    /// Adds `scale` times a random unit direction to the readout.
    pub fn perturb_readout<R: Rng + ?Sized>(&mut self, scale: f64, rng: &mut R) {
        self.a += linalg::random_unit_vector(self.d(), rng) * scale;
    }
}

/// Zero readout and `W_l = alpha O_l` with independent random orthogonal `O_l`; the chain has `delta = -alpha^2`.
pub fn isotropic_deep_init(d: usize, depth: usize, alpha: f64, seed: u64) -> Result<DeepLinearState> {
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(Error::Domain("alpha must be non-negative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = (0..depth).map(|_| linalg::random_orthogonal(d, &mut rng) * alpha).collect();
    DeepLinearState::new(layers, DenseVector::zeros(d))
}

pub fn deep_conservation(state: &DeepLinearState) -> DeepConservation {
    let d = state.d();
    let layer_residuals = state
        .layers
        .windows(2)
        .map(|pair| (pair[1].transpose() * &pair[1] - &pair[0] * pair[0].transpose()).norm())
        .collect();
    let last = state.layers.last().expect("non-empty by construction");
    let head = &state.a * state.a.transpose() - last * last.transpose();
    let delta = head.trace() / d as f64;
    let head_residual = (head - DenseMatrix::identity(d, d) * delta).norm();
    DeepConservation { delta, layer_residuals, head_residual }
}

/// Gradient-flow derivatives `(W_dot per layer, a_dot)`.
pub fn gradient_flow_field_deep(state: &DeepLinearState, data: &Dataset) -> Result<(Vec<DenseMatrix>, DenseVector)> {
    if data.d() != state.d() || data.c() != 1 {
        return Err(mismatch("gradient_flow_field_deep", format!("data is {}->{}, chain is {}->1", data.d(), data.c(), state.d())));
    }
    let beta = DenseMatrix::from_column_slice(state.d(), 1, state.beta().as_slice());
    let g = data.loss_gradient(&beta)?.column(0).into_owned();
    Ok(chain_gradients(state, &g))
}

/// Negative gradients for a loss whose gradient in `beta` is `g`.
fn chain_gradients(state: &DeepLinearState, g: &DenseVector) -> (Vec<DenseMatrix>, DenseVector) {
    let depth = state.depth();
    // forward[l] = W_l ... W_1 g, backward[l] = W_{l+1}^T ... W_L^T a
    let mut forward = Vec::with_capacity(depth + 1);
    forward.push(g.clone());
    for w in &state.layers {
        let next = w * forward.last().expect("seeded");
        forward.push(next);
    }
    let mut backward = alloc::vec![DenseVector::zeros(0); depth + 1];
    backward[depth] = state.a.clone();
    for l in (0..depth).rev() {
        backward[l] = state.layers[l].transpose() * &backward[l + 1];
    }
    let w_dot = (0..depth).map(|l| -(&backward[l + 1] * forward[l].transpose())).collect();
    (w_dot, -forward[depth].clone())
}

/// Gradient-flow field on the flat layout `[vec(W_1), ..., vec(W_L), a]`.
pub fn flat_field(data: &Dataset, depth: usize, y: &[f64], dy: &mut [f64]) {
    let d = data.d();
    let state = DeepLinearState::from_flat(d, depth, y).expect("flat layout matches");
    let beta = DenseMatrix::from_column_slice(d, 1, state.beta().as_slice());
    let g = (data.gram() * beta - data.xty()).column(0).into_owned();
    let (w_dot, a_dot) = chain_gradients(&state, &g);
    for (l, w) in w_dot.iter().enumerate() {
        dy[l * d * d..(l + 1) * d * d].copy_from_slice(w.as_slice());
    }
    dy[depth * d * d..].copy_from_slice(a_dot.as_slice());
}

fn check_conserved(state: &DeepLinearState) -> Result<DeepConservation> {
    let cons = deep_conservation(state);
    let scale = state.layers.iter().map(|w| w.norm_squared()).fold(state.a.norm_squared(), f64::max).max(1.0);
    let tolerance = CONSERVATION_TOL * scale;
    let residual = cons.max_residual();
    if residual > tolerance {
        return Err(Error::ConservationViolated { residual, tolerance });
    }
    Ok(cons)
}

/// Predictions of `|beta|^2` and `beta beta^T` from the readout norm and the first layer alone.
pub fn deep_norm_identities(state: &DeepLinearState) -> Result<(f64, DenseMatrix)> {
    let cons = check_conserved(state)?;
    let depth = state.depth() as u32;
    let na = state.a.norm_squared();
    let norm_sq = na * (na - cons.delta).powi(depth as i32);
    let gram = state.layers[0].transpose() * &state.layers[0];
    let outer = psd_power(&gram, depth + 1)? + psd_power(&gram, depth)? * cons.delta;
    Ok((norm_sq, outer))
}

/// Preconditioner of the end-to-end flow, built from `|a|^2`, `W_1^T W_1`, and `delta`.
pub fn deep_preconditioner_m(norm_a_sq: f64, w1tw1: &DenseMatrix, delta: f64, depth: usize) -> Result<DenseMatrix> {
    if depth == 0 {
        return Err(Error::Domain("depth must be at least one"));
    }
    let (values, vectors) = linalg::symmetric_eigen(w1tw1)?;
    let top = values.iter().fold(1.0_f64, |acc, v| acc.max(v.abs()));
    if values.iter().any(|&v| v < -linalg::PSD_CLAMP * top) {
        return Err(Error::Indefinite { min_eigenvalue: values[0] });
    }
    let ratio = norm_a_sq - delta;
    let mapped = values.map(|v| {
        let v = v.max(0.0);
        let tail: f64 = (0..depth).map(|l| ratio.powi(l as i32) * v.powi((depth - 1 - l) as i32)).sum();
        v.powi(depth as i32) + norm_a_sq * tail
    });
    Ok(&vectors * DenseMatrix::from_diagonal(&mapped) * vectors.transpose())
}

/// Preconditioner summed layer by layer from the Jacobians; valid for any state, conserved or not.
pub fn deep_preconditioner_direct(state: &DeepLinearState) -> DenseMatrix {
    let d = state.d();
    let depth = state.depth();
    let mut prefix = alloc::vec![DenseMatrix::identity(d, d)];
    for w in &state.layers {
        let next = w * prefix.last().expect("seeded");
        prefix.push(next);
    }
    let mut readout = state.a.clone();
    let mut m = prefix[depth].transpose() * &prefix[depth];
    for l in (0..depth).rev() {
        m += prefix[l].transpose() * &prefix[l] * readout.norm_squared();
        readout = state.layers[l].transpose() * readout;
    }
    m
}

/// Convenience wrapper reading the preconditioner inputs off a state.
pub fn deep_preconditioner_for(state: &DeepLinearState) -> Result<DenseMatrix> {
    let cons = deep_conservation(state);
    let gram = state.layers[0].transpose() * &state.layers[0];
    deep_preconditioner_m(state.a.norm_squared(), &gram, cons.delta, state.depth())
}

fn exponent(depth: usize) -> f64 {
    (depth as f64 + 2.0) / (depth as f64 + 1.0)
}

fn alignment(beta0: &DenseVector, depth: usize) -> Result<DenseVector> {
    let n0 = beta0.norm();
    if !(n0 > 0.0) {
        return Err(Error::Domain("initial predictor must be non-zero"));
    }
    Ok(beta0 / n0.powf(depth as f64 / (depth as f64 + 1.0)))
}

/// Rich-limit objective `|beta|^p / p - beta0^T beta / |beta0|^(L/(L+1))` with `p = (L+2)/(L+1)`.
pub fn deep_rich_bias_objective(beta: &DenseVector, beta0: &DenseVector, depth: usize) -> Result<f64> {
    let p = exponent(depth);
    Ok(beta.norm().powf(p) / p - alignment(beta0, depth)?.dot(beta))
}

pub fn deep_rich_bias_gradient(beta: &DenseVector, beta0: &DenseVector, depth: usize) -> Result<DenseVector> {
    let p = exponent(depth);
    let norm = beta.norm();
    let radial = if norm > 0.0 { beta * norm.powf(p - 2.0) } else { DenseVector::zeros(beta.len()) };
    Ok(radial - alignment(beta0, depth)?)
}

pub fn deep_rich_bias_hessian(beta: &DenseVector, depth: usize) -> Result<DenseMatrix> {
    let norm = beta.norm();
    if norm < EPS_BETA {
        return Err(Error::DegenerateBeta { norm });
    }
    let p = exponent(depth);
    let dir = beta / norm;
    let d = beta.len();
    Ok((DenseMatrix::identity(d, d) + &dir * dir.transpose() * (p - 2.0)) * norm.powf(p - 2.0))
}

/// Minimizer of the rich-limit objective over the least-squares interpolators of `data`.
pub fn deep_rich_bias_minimizer(data: &Dataset, beta0: &DenseVector, depth: usize) -> Result<DenseVector> {
    let base = data.min_norm_solution()?.column(0).into_owned();
    let null = linalg::null_space(data.x(), RANK_TOL)?;
    minimize_affine(
        &base,
        &null,
        |b| deep_rich_bias_objective(b, beta0, depth),
        |b| deep_rich_bias_gradient(b, beta0, depth),
        |b| deep_rich_bias_hessian(b, depth),
        NewtonOptions::default(),
    )
}
