//! Wide two-layer linear networks `f(x) = A^T W x` with `h` hidden units and `c` outputs.

use alloc::format;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;

use crate::data::Dataset;
use crate::error::{mismatch, Error, Result};
use crate::linalg::{self, kron_sum, principal_sqrt_psd, DenseMatrix, DenseVector, RANK_TOL};
use crate::model::{Rates, EPS_DELTA};

/// Largest `d * c` for which Kronecker-structured `dc x dc` matrices are built.
pub const KRON_LIMIT: usize = 64 * 64;

#[derive(Debug, Clone, PartialEq)]
pub struct WideLinearState {
    /// First layer, `h x d`.
    pub w: DenseMatrix,
    /// Readout, `h x c`.
    pub a: DenseMatrix,
    pub rates: Rates,
}

/// Rank-one contribution `w_k a_k^T` of a hidden unit and its conserved quantity.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuronFactor {
    pub beta_k: DenseMatrix,
    pub delta_k: f64,
}

impl WideLinearState {
    pub fn new(w: DenseMatrix, a: DenseMatrix, rates: Rates) -> Result<Self> {
        rates.validate()?;
        if w.nrows() != a.nrows() {
            return Err(mismatch("WideLinearState::new", format!("W has {} rows, A has {}", w.nrows(), a.nrows())));
        }
        Ok(Self { w, a, rates })
    }

    pub fn h(&self) -> usize {
        self.w.nrows()
    }

    pub fn d(&self) -> usize {
        self.w.ncols()
    }

    pub fn c(&self) -> usize {
        self.a.ncols()
    }

    /// End-to-end map `W^T A`, `d x c`.
    pub fn beta(&self) -> DenseMatrix {
        self.w.transpose() * &self.a
    }

    pub fn factors(&self) -> Vec<NeuronFactor> {
        let delta = conserved_delta_matrix(self);
        (0..self.h())
            .map(|k| NeuronFactor {
                beta_k: self.w.row(k).transpose() * self.a.row(k),
                delta_k: delta[(k, k)],
            })
            .collect()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.w.len() + self.a.len());
        out.extend_from_slice(self.w.as_slice());
        out.extend_from_slice(self.a.as_slice());
        out
    }

    pub fn from_flat(h: usize, d: usize, c: usize, flat: &[f64], rates: Rates) -> Result<Self> {
        if flat.len() != h * (d + c) {
            return Err(mismatch("WideLinearState::from_flat", format!("{} entries for h={h}, d={d}, c={c}", flat.len())));
        }
        let (wf, af) = flat.split_at(h * d);
        Self::new(DenseMatrix::from_column_slice(h, d, wf), DenseMatrix::from_column_slice(h, c, af), rates)
    }
}

/// `eta_w A A^T - eta_a W W^T`.
pub fn conserved_delta_matrix(state: &WideLinearState) -> DenseMatrix {
    &state.a * state.a.transpose() * state.rates.eta_w - &state.w * state.w.transpose() * state.rates.eta_a
}

fn check_data(state: &WideLinearState, data: &Dataset) -> Result<()> {
    if data.d() != state.d() || data.c() != state.c() {
        return Err(mismatch(
            "wide network",
            format!("data is {}->{}, network is {}->{}", data.d(), data.c(), state.d(), state.c()),
        ));
    }
    Ok(())
}

/// Gradient-flow derivatives `(W_dot, A_dot)`.
pub fn gradient_flow_field_wide(state: &WideLinearState, data: &Dataset) -> Result<(DenseMatrix, DenseMatrix)> {
    check_data(state, data)?;
    let g = data.loss_gradient(&state.beta())?;
    let a_dot = &state.w * &g * (-state.rates.eta_a);
    let w_dot = &state.a * g.transpose() * (-state.rates.eta_w);
    Ok((w_dot, a_dot))
}

/// Gradient-flow field on the flat layout `[vec(W), vec(A)]`.
pub fn flat_field(data: &Dataset, h: usize, rates: Rates, y: &[f64], dy: &mut [f64]) {
    let (d, c) = (data.d(), data.c());
    let w = DenseMatrix::from_column_slice(h, d, &y[..h * d]);
    let a = DenseMatrix::from_column_slice(h, c, &y[h * d..]);
    let g = data.gram() * (w.transpose() * &a) - data.xty();
    let w_dot = &a * g.transpose() * (-rates.eta_w);
    let a_dot = &w * &g * (-rates.eta_a);
    dy[..h * d].copy_from_slice(w_dot.as_slice());
    dy[h * d..].copy_from_slice(a_dot.as_slice());
}

fn guard(d: usize, c: usize) -> Result<()> {
    if d * c > KRON_LIMIT {
        Err(Error::SizeLimit { size: d * c, limit: KRON_LIMIT })
    } else {
        Ok(())
    }
}

/// Per-neuron preconditioner built only from `(beta_k, delta_k)`.
pub fn preconditioner_m_k(factor: &NeuronFactor, rates: Rates) -> Result<DenseMatrix> {
    let (d, c) = factor.beta_k.shape();
    guard(d, c)?;
    let norm_sq = factor.beta_k.norm_squared();
    if !(norm_sq > 0.0) {
        return Err(Error::DegenerateNeurons(alloc::vec![0]));
    }
    let delta = factor.delta_k;
    let kappa = (delta * delta + 4.0 * rates.product() * norm_sq).sqrt();
    let right = factor.beta_k.transpose() * &factor.beta_k * ((kappa + delta) / (2.0 * norm_sq));
    let left = &factor.beta_k * factor.beta_k.transpose() * ((kappa - delta) / (2.0 * norm_sq));
    kron_sum(&right, &left)
}

/// Sum of per-neuron preconditioners; acts on `vec` of `d x c` matrices.
pub fn preconditioner_m_sum(factors: &[NeuronFactor], rates: Rates) -> Result<DenseMatrix> {
    let first = factors.first().ok_or(Error::Domain("no hidden units"))?;
    let (d, c) = first.beta_k.shape();
    guard(d, c)?;
    let degenerate: Vec<usize> =
        factors.iter().enumerate().filter(|(_, f)| !(f.beta_k.norm_squared() > 0.0)).map(|(k, _)| k).collect();
    if !degenerate.is_empty() {
        return Err(Error::DegenerateNeurons(degenerate));
    }
    let mut m = DenseMatrix::zeros(d * c, d * c);
    for f in factors {
        if f.beta_k.shape() != (d, c) {
            return Err(mismatch("preconditioner_m_sum", format!("factor shape {:?}", f.beta_k.shape())));
        }
        m += preconditioner_m_k(f, rates)?;
    }
    Ok(m)
}

/// `eta_w A^T A (+) eta_a W^T W` straight from the parameters.
pub fn preconditioner_m_params(state: &WideLinearState) -> Result<DenseMatrix> {
    guard(state.d(), state.c())?;
    let ata = state.a.transpose() * &state.a * state.rates.eta_w;
    let wtw = state.w.transpose() * &state.w * state.rates.eta_a;
    kron_sum(&ata, &wtw)
}

/// Preconditioner for states with `Delta = delta I_h`, expressed through `beta` alone.
pub fn preconditioner_m_isotropic(beta: &DenseMatrix, delta: f64, rates: Rates) -> Result<DenseMatrix> {
    let (d, c) = beta.shape();
    guard(d, c)?;
    let (wtw_term, ata_term) = isotropic_roots(beta, delta, rates)?;
    Ok(ata_term.kronecker(&DenseMatrix::identity(d, d)) + DenseMatrix::identity(c, c).kronecker(&wtw_term))
}

/// `sqrt(p beta beta^T + delta^2/4 I_d)` and `sqrt(p beta^T beta + delta^2/4 I_c)`.
fn isotropic_roots(beta: &DenseMatrix, delta: f64, rates: Rates) -> Result<(DenseMatrix, DenseMatrix)> {
    let (d, c) = beta.shape();
    let p = rates.product();
    let q = delta * delta / 4.0;
    let left = principal_sqrt_psd(&(beta * beta.transpose() * p + DenseMatrix::identity(d, d) * q))?;
    let right = principal_sqrt_psd(&(beta.transpose() * beta * p + DenseMatrix::identity(c, c) * q))?;
    Ok((left, right))
}

/// `W^T W` and `A^T A` recovered from `beta` when `Delta = delta I_h`.
pub fn quadratics_from_beta_isotropic(
    beta: &DenseMatrix,
    delta: f64,
    rates: Rates,
) -> Result<(DenseMatrix, DenseMatrix)> {
    let (d, c) = beta.shape();
    let (left, right) = isotropic_roots(beta, delta, rates)?;
    let wtw = (left - DenseMatrix::identity(d, d) * (delta / 2.0)) / rates.eta_a;
    let ata = (right + DenseMatrix::identity(c, c) * (delta / 2.0)) / rates.eta_w;
    Ok((wtw, ata))
}

/// State with `W = diag(s) U^T` and `A = diag(r) V^T`, where `r` is chosen so that `Delta = delta I_h`.
///
/// `u` (d x h) and `v` (c x h) must have orthonormal columns.
pub fn isotropic_state(
    scales: &DenseVector,
    u: &DenseMatrix,
    v: &DenseMatrix,
    delta: f64,
    rates: Rates,
) -> Result<WideLinearState> {
    rates.validate()?;
    let h = scales.len();
    if u.ncols() != h || v.ncols() != h {
        return Err(mismatch("isotropic_state", format!("{h} scales, frames with {} and {} columns", u.ncols(), v.ncols())));
    }
    let mut readout = DenseVector::zeros(h);
    for k in 0..h {
        let r_sq = (delta + rates.eta_a * scales[k] * scales[k]) / rates.eta_w;
        if r_sq < 0.0 {
            return Err(Error::Domain("first-layer scales too small for the requested delta"));
        }
        readout[k] = r_sq.sqrt();
    }
    let w = DenseMatrix::from_diagonal(scales) * u.transpose();
    let a = DenseMatrix::from_diagonal(&readout) * v.transpose();
    WideLinearState::new(w, a, rates)
}

/// Random isotropic state with `h = d = c`; first-layer scales drawn from `[lo, hi]`.
pub fn random_isotropic_state<R: Rng + ?Sized>(
    n: usize,
    delta: f64,
    rates: Rates,
    scale_range: (f64, f64),
    rng: &mut R,
) -> Result<WideLinearState> {
    let floor = if delta < 0.0 { (-delta / rates.eta_a).sqrt() } else { 0.0 };
    let scales = DenseVector::from_fn(n, |_, _| floor + rng.random_range(scale_range.0..scale_range.1));
    let u = linalg::random_orthogonal(n, rng);
    let v = linalg::random_orthogonal(n, rng);
    isotropic_state(&scales, &u, &v, delta, rates)
}

/// NTK on `n` samples and `c` outputs, indexed to match `vec(X beta)`.
pub fn ntk_matrix_wide(state: &WideLinearState, x: &DenseMatrix) -> Result<DenseMatrix> {
    if x.ncols() != state.d() {
        return Err(mismatch("ntk_matrix_wide", format!("x has {} columns, d = {}", x.ncols(), state.d())));
    }
    let m = preconditioner_m_params(state)?;
    let lift = DenseMatrix::identity(state.c(), state.c()).kronecker(x);
    Ok(&lift * m * lift.transpose())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WideRegime {
    Lazy,
    Rich,
    DelayedRich,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegimeThresholds {
    /// `|delta_k|` above which a unit counts as effectively infinite.
    pub large_delta: f64,
    /// `|delta_k|` below which a unit counts as balanced.
    pub small_delta: f64,
    /// Relative tolerance of the span tests.
    pub rank_tol: f64,
}

impl RegimeThresholds {
    /// Defaults with the large-delta threshold scaled by the teacher norm.
    pub fn for_teacher(beta_star_norm: f64) -> Self {
        Self { large_delta: 1e3 * beta_star_norm.max(f64::MIN_POSITIVE), small_delta: EPS_DELTA, rank_tol: RANK_TOL }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WideRegimeReport {
    pub regime: WideRegime,
    /// Distance of the least-squares solution set from the readout span (all-positive case).
    pub row_residual: Option<f64>,
    /// Distance of the least-squares solution set from the first-layer span (all-negative case).
    pub column_residual: Option<f64>,
    pub min_delta: f64,
    pub max_delta: f64,
    pub mixed_signs: bool,
}

/// Classifies the training regime from the initial neuron factors.
pub fn classify_wide_regime(
    factors: &[NeuronFactor],
    data: &Dataset,
    thresholds: RegimeThresholds,
) -> Result<WideRegimeReport> {
    let first = factors.first().ok_or(Error::Domain("no hidden units"))?;
    let (d, c) = first.beta_k.shape();
    if data.d() != d || data.c() != c {
        return Err(mismatch("classify_wide_regime", format!("factors are {d}x{c}, data is {}->{}", data.d(), data.c())));
    }
    let min_delta = factors.iter().map(|f| f.delta_k).fold(f64::INFINITY, f64::min);
    let max_delta = factors.iter().map(|f| f.delta_k).fold(f64::NEG_INFINITY, f64::max);
    let mut report = WideRegimeReport {
        regime: WideRegime::Rich,
        row_residual: None,
        column_residual: None,
        min_delta,
        max_delta,
        mixed_signs: min_delta < -thresholds.large_delta && max_delta > thresholds.large_delta,
    };
    if factors.iter().all(|f| f.delta_k.abs() <= thresholds.small_delta) {
        return Ok(report);
    }
    let beta_min = data.min_norm_solution()?;
    let scale = beta_min.norm().max(f64::MIN_POSITIVE);
    let tol = 1e-6 * scale;

    if min_delta > thresholds.large_delta {
        // rows of each beta_k span the readout directions a_k
        let mut stacked = DenseMatrix::zeros(c, d * factors.len());
        for (k, f) in factors.iter().enumerate() {
            stacked.columns_mut(k * d, d).copy_from(&f.beta_k.transpose());
        }
        let span = linalg::range_basis(&stacked, thresholds.rank_tol)?;
        let proj = DenseMatrix::identity(c, c) - &span * span.transpose();
        let residual = (&beta_min * proj).norm();
        report.row_residual = Some(residual);
        report.regime = if residual <= tol { WideRegime::Lazy } else { WideRegime::DelayedRich };
    } else if max_delta < -thresholds.large_delta {
        let mut stacked = DenseMatrix::zeros(d, c * factors.len());
        for (k, f) in factors.iter().enumerate() {
            stacked.columns_mut(k * c, c).copy_from(&f.beta_k);
        }
        let span = linalg::range_basis(&stacked, thresholds.rank_tol)?;
        let perp = DenseMatrix::identity(d, d) - &span * span.transpose();
        let null = linalg::null_space(data.x(), thresholds.rank_tol)?;
        let target = -(&perp * &beta_min);
        let residual = if null.ncols() == 0 {
            target.norm()
        } else {
            let lhs = &perp * &null;
            let z = linalg::min_norm_solution(&lhs, &target, thresholds.rank_tol)?;
            (lhs * z - target).norm()
        };
        report.column_residual = Some(residual);
        report.regime = if residual <= tol { WideRegime::Lazy } else { WideRegime::DelayedRich };
    } else if report.mixed_signs {
        report.regime = WideRegime::DelayedRich;
    }
    Ok(report)
}

/// Mirror-flow velocity of the singular values of `beta` when `Delta = delta I_h`.
///
/// Only the first `active` values move; the rest sit at zero.
pub fn singular_value_flow(lambda: &DenseVector, delta: f64, grad_lambda: &DenseVector, active: usize) -> Result<DenseVector> {
    if lambda.len() != grad_lambda.len() {
        return Err(mismatch("singular_value_flow", format!("{} vs {}", lambda.len(), grad_lambda.len())));
    }
    Ok(DenseVector::from_fn(lambda.len(), |i, _| {
        if i < active {
            -(delta * delta + 4.0 * lambda[i] * lambda[i]).sqrt() * grad_lambda[i]
        } else {
            0.0
        }
    }))
}

/// Hyperbolic entropy `q_delta(x)`, whose second derivative is `1 / sqrt(delta^2 + 4 x^2)`.
pub fn hyperbolic_entropy(x: f64, delta: f64) -> Result<f64> {
    if delta == 0.0 {
        return Err(Error::Domain("hyperbolic entropy is undefined at delta = 0"));
    }
    let ad = delta.abs();
    Ok(0.25 * (2.0 * x * (2.0 * x / ad).asinh() - (4.0 * x * x + delta * delta).sqrt() + ad))
}
