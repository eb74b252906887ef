//! Two-layer bias-free networks `f(x) = a^T sigma(W x)` with leaky activation `sigma(z) = max(z, gamma z)`.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::{FRAC_PI_2, TAU};

#[allow(unused_imports)]
use num_traits::Float;

use crate::data::Dataset;
use crate::error::{mismatch, Error, Result};
use crate::linalg::{DenseMatrix, DenseVector};
use crate::model::{Rates, EPS_BETA};
use crate::single_neuron::preconditioner_m;

/// Relative cross-product below which two first-layer rows count as parallel.
pub const PARALLEL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseState {
    /// First layer, `h x d`.
    pub w: DenseMatrix,
    pub a: DenseVector,
    pub gamma: f64,
    pub rates: Rates,
}

impl PiecewiseState {
    pub fn new(w: DenseMatrix, a: DenseVector, gamma: f64, rates: Rates) -> Result<Self> {
        rates.validate()?;
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::Domain("leak must lie in [0, 1)"));
        }
        if w.nrows() != a.len() {
            return Err(mismatch("PiecewiseState::new", format!("W has {} rows, a has {} entries", w.nrows(), a.len())));
        }
        Ok(Self { w, a, gamma, rates })
    }

    pub fn h(&self) -> usize {
        self.w.nrows()
    }

    pub fn d(&self) -> usize {
        self.w.ncols()
    }

    /// Network outputs on the rows of `x`.
    pub fn forward(&self, x: &DenseMatrix) -> DenseVector {
        let pre = &self.w * x.transpose();
        let act = pre.map(|z| if z > 0.0 { z } else { self.gamma * z });
        act.transpose() * &self.a
    }

    pub fn beta_k(&self, k: usize) -> DenseVector {
        self.w.row(k).transpose() * self.a[k]
    }

    /// Per-neuron conserved quantities `eta_w a_k^2 - eta_a |w_k|^2`.
    pub fn per_neuron_delta(&self) -> DenseVector {
        DenseVector::from_fn(self.h(), |k, _| {
            self.rates.eta_w * self.a[k] * self.a[k] - self.rates.eta_a * self.w.row(k).norm_squared()
        })
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.w.len() + self.a.len());
        out.extend_from_slice(self.w.as_slice());
        out.extend_from_slice(self.a.as_slice());
        out
    }

    pub fn from_flat(h: usize, d: usize, flat: &[f64], gamma: f64, rates: Rates) -> Result<Self> {
        if flat.len() != h * (d + 1) {
            return Err(mismatch("PiecewiseState::from_flat", format!("{} entries for h={h}, d={d}", flat.len())));
        }
        Self::new(
            DenseMatrix::from_column_slice(h, d, &flat[..h * d]),
            DenseVector::from_column_slice(&flat[h * d..]),
            gamma,
            rates,
        )
    }
}

fn slope(z: f64, gamma: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        gamma
    }
}

/// `h x n` matrix of activation slopes; exactly-zero pre-activations take the leak.
pub fn activation_matrix(state: &PiecewiseState, x: &DenseMatrix) -> Result<DenseMatrix> {
    if x.ncols() != state.d() {
        return Err(mismatch("activation_matrix", format!("x has {} columns, d = {}", x.ncols(), state.d())));
    }
    Ok((&state.w * x.transpose()).map(|z| slope(z, state.gamma)))
}

fn check_data(state: &PiecewiseState, data: &Dataset) -> Result<()> {
    if data.d() != state.d() || data.c() != 1 {
        return Err(mismatch("piecewise network", format!("data is {}->{}, network is {}->1", data.d(), data.c(), state.d())));
    }
    Ok(())
}

/// Rows `xi_k = sum_i c_ki rho_i x_i` with residuals `rho = f(X) - y`.
pub fn neuron_signals(state: &PiecewiseState, data: &Dataset) -> Result<DenseMatrix> {
    check_data(state, data)?;
    let c = activation_matrix(state, data.x())?;
    let rho = state.forward(data.x()) - data.y().column(0);
    let weighted = DenseMatrix::from_fn(c.nrows(), c.ncols(), |k, i| c[(k, i)] * rho[i]);
    Ok(weighted * data.x())
}

/// Gradient-flow derivatives `(W_dot, a_dot)`.
pub fn gradient_flow_field_piecewise(state: &PiecewiseState, data: &Dataset) -> Result<(DenseMatrix, DenseVector)> {
    let xi = neuron_signals(state, data)?;
    Ok(field_from_signals(state, &xi))
}

fn field_from_signals(state: &PiecewiseState, xi: &DenseMatrix) -> (DenseMatrix, DenseVector) {
    let h = state.h();
    let a_dot = DenseVector::from_fn(h, |k, _| -state.rates.eta_a * state.w.row(k).dot(&xi.row(k)));
    let w_dot = DenseMatrix::from_fn(h, state.d(), |k, j| -state.rates.eta_w * state.a[k] * xi[(k, j)]);
    (w_dot, a_dot)
}

/// Gradient-flow field on the flat layout `[vec(W), a]`.
pub fn flat_field(data: &Dataset, h: usize, gamma: f64, rates: Rates, y: &[f64], dy: &mut [f64]) {
    let state = PiecewiseState::from_flat(h, data.d(), y, gamma, rates).expect("flat layout matches");
    let xi = neuron_signals(&state, data).expect("dimensions checked by caller");
    let (w_dot, a_dot) = field_from_signals(&state, &xi);
    dy[..w_dot.len()].copy_from_slice(w_dot.as_slice());
    dy[w_dot.len()..].copy_from_slice(a_dot.as_slice());
}

/// `-M_k xi_k` for the neuron map `beta_k = a_k w_k`.
pub fn beta_k_field(beta_k: &DenseVector, delta_k: f64, xi_k: &DenseVector, rates: Rates) -> Result<DenseVector> {
    if beta_k.len() != xi_k.len() {
        return Err(mismatch("beta_k_field", format!("{} vs {}", beta_k.len(), xi_k.len())));
    }
    Ok(-(preconditioner_m(beta_k, delta_k, rates)? * xi_k))
}

/// Signed radius and unit direction of a neuron map.
#[derive(Debug, Clone, PartialEq)]
pub struct SignedSpherical {
    pub mu: f64,
    pub beta_hat: DenseVector,
}

impl SignedSpherical {
    pub fn from_neuron(a_k: f64, w_k: &DenseVector) -> Result<Self> {
        let beta = w_k * a_k;
        let norm = beta.norm();
        if norm < EPS_BETA {
            return Err(Error::SingularCoordinates);
        }
        let sign = if a_k >= 0.0 { 1.0 } else { -1.0 };
        Ok(Self { mu: sign * norm, beta_hat: beta * (sign / norm) })
    }

    pub fn beta(&self) -> DenseVector {
        &self.beta_hat * self.mu
    }
}

/// Time derivatives of the signed radius and direction.
pub fn signed_spherical_field(
    coords: &SignedSpherical,
    delta_k: f64,
    xi_k: &DenseVector,
    rates: Rates,
) -> Result<(f64, DenseVector)> {
    if coords.mu == 0.0 {
        return Err(Error::SingularCoordinates);
    }
    if coords.beta_hat.len() != xi_k.len() {
        return Err(mismatch("signed_spherical_field", format!("{} vs {}", coords.beta_hat.len(), xi_k.len())));
    }
    let kappa = (delta_k * delta_k + 4.0 * rates.product() * coords.mu * coords.mu).sqrt();
    let along = coords.beta_hat.dot(xi_k);
    let mu_dot = -kappa * along;
    let tangent = xi_k - &coords.beta_hat * along;
    let dir_dot = tangent * (-(kappa + delta_k) / (2.0 * coords.mu));
    Ok((mu_dot, dir_dot))
}

/// `K_ij = sum_k c_ki c_kj x_i^T (eta_w a_k^2 I + eta_a w_k w_k^T) x_j`.
pub fn ntk_matrix_piecewise(state: &PiecewiseState, x: &DenseMatrix) -> Result<DenseMatrix> {
    let c = activation_matrix(state, x)?;
    let n = x.nrows();
    let gram = x * x.transpose();
    let proj = x * state.w.transpose(); // n x h
    let mut k_mat = DenseMatrix::zeros(n, n);
    for k in 0..state.h() {
        let ck = c.row(k).transpose();
        let scale = state.rates.eta_w * state.a[k] * state.a[k];
        let feat = proj.column(k).component_mul(&ck);
        for i in 0..n {
            for j in 0..n {
                k_mat[(i, j)] += ck[i] * ck[j] * scale * gram[(i, j)] + state.rates.eta_a * feat[i] * feat[j];
            }
        }
    }
    Ok(k_mat)
}

/// Angular sector of the plane on which the network is linear.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationRegion {
    /// `true` where the unit is on.
    pub pattern: Vec<bool>,
    /// `(lo, hi)` in radians, `0 <= lo < 2 pi`, `hi > lo`.
    pub angular_interval: (f64, f64),
    /// Gradient of the network inside the sector.
    pub predictor: DenseVector,
}

impl ActivationRegion {
    pub fn active_count(&self) -> usize {
        self.pattern.iter().filter(|&&p| p).count()
    }

    /// Unit direction at fraction `s` of the way through the sector.
    pub fn interior_point(&self, s: f64) -> DenseVector {
        let (lo, hi) = self.angular_interval;
        let th = lo + s * (hi - lo);
        DenseVector::from_vec(alloc::vec![th.cos(), th.sin()])
    }
}

/// Cuts the plane into the sectors bounded by the lines `w_k^T x = 0`.
pub fn enumerate_activation_regions_2d(state: &PiecewiseState) -> Result<Vec<ActivationRegion>> {
    if state.d() != 2 {
        return Err(mismatch("enumerate_activation_regions_2d", format!("input dimension {} (need 2)", state.d())));
    }
    let h = state.h();
    if h == 0 {
        return Err(Error::Domain("no hidden units"));
    }
    let rows: Vec<(f64, f64)> = (0..h).map(|k| (state.w[(k, 0)], state.w[(k, 1)])).collect();
    let zero: Vec<usize> = rows.iter().enumerate().filter(|(_, r)| r.0 == 0.0 && r.1 == 0.0).map(|(k, _)| k).collect();
    if !zero.is_empty() {
        return Err(Error::DegenerateNeurons(zero));
    }
    for i in 0..h {
        for j in i + 1..h {
            let (a, b) = (rows[i], rows[j]);
            let cross = a.0 * b.1 - a.1 * b.0;
            if cross.abs() <= PARALLEL_TOL * a.0.hypot(a.1) * b.0.hypot(b.1) {
                return Err(Error::ParallelNeurons(i, j));
            }
        }
    }
    let mut cuts: Vec<f64> = Vec::with_capacity(2 * h);
    for &(x, y) in &rows {
        let base = y.atan2(x);
        cuts.push((base + FRAC_PI_2).rem_euclid(TAU));
        cuts.push((base - FRAC_PI_2).rem_euclid(TAU));
    }
    cuts.sort_by(f64::total_cmp);
    let m = cuts.len();
    let mut regions = Vec::with_capacity(m);
    for i in 0..m {
        let lo = cuts[i];
        let hi = if i + 1 < m { cuts[i + 1] } else { cuts[0] + TAU };
        let mid = 0.5 * (lo + hi);
        let (ux, uy) = (mid.cos(), mid.sin());
        let pattern: Vec<bool> = rows.iter().map(|&(x, y)| x * ux + y * uy > 0.0).collect();
        let mut predictor = DenseVector::zeros(2);
        for k in 0..h {
            let c = if pattern[k] { 1.0 } else { state.gamma };
            predictor += state.w.row(k).transpose() * (c * state.a[k]);
        }
        regions.push(ActivationRegion { pattern, angular_interval: (lo, hi), predictor });
    }
    Ok(regions)
}

/// Colors sectors by the parity of their active units, checking that neighbours differ in one unit.
pub fn two_coloring(regions: &[ActivationRegion]) -> Result<Vec<u8>> {
    let m = regions.len();
    for i in 0..m {
        let j = (i + 1) % m;
        let hamming = regions[i].pattern.iter().zip(&regions[j].pattern).filter(|(a, b)| a != b).count();
        if hamming != 1 {
            return Err(Error::RedundantNeuron { left: i, right: j, hamming });
        }
    }
    Ok(regions.iter().map(|r| (r.active_count() % 2) as u8).collect())
}
