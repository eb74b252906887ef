//! Closed-form gradient-flow trajectories on whitened data.
//!
//! All formulas are evaluated at unit learning rates after rescaling
//! `a -> a / sqrt(eta_a)`, `w -> w / sqrt(eta_w)`, `beta* -> beta* / sqrt(eta_a eta_w)`
//! and `t -> eta_a eta_w t`; results are mapped back to the original units.

#[allow(unused_imports)]
use num_traits::Float;

use super::{classify_basin, conserved_delta, Basin, HyperbolicSpherical, SingleNeuronState};
use crate::error::{Error, Result};
use crate::linalg::DenseVector;
use crate::model::EPS_DELTA;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Chart {
    /// `delta = 0`: separable `(mu, phi)` solution.
    Balanced,
    /// Riccati equation for `nu = w^T beta* / a`; valid while `a` keeps its sign.
    Nu,
    /// Riccati equation for `upsilon = a / w^T beta*`; valid while the teacher overlap keeps its sign.
    Upsilon,
}

/// Snapshot of a closed-form trajectory, in the caller's units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactSolverState {
    pub t: f64,
    pub chart: Chart,
    pub nu: Option<f64>,
    pub upsilon: Option<f64>,
    pub omega: f64,
    pub a: f64,
    pub coords: HyperbolicSpherical,
    pub c_phi: Option<f64>,
    pub c_mu: Option<f64>,
    pub r: f64,
}

#[derive(Debug, Clone, Copy)]
struct Unit {
    a: f64,
    omega: f64,
    delta: f64,
    b: f64,
    eta_a: f64,
    eta_w: f64,
}

impl Unit {
    fn new(state: &SingleNeuronState, beta_star: &DenseVector) -> Result<Self> {
        if beta_star.len() != state.d() {
            return Err(Error::Domain("teacher and neuron dimensions differ"));
        }
        let (eta_a, eta_w) = (state.rates.eta_a, state.rates.eta_w);
        let p = eta_a * eta_w;
        let b = beta_star.norm() / p.sqrt();
        if !(b > 0.0) {
            return Err(Error::Domain("teacher must be non-zero"));
        }
        Ok(Unit {
            a: state.a / eta_a.sqrt(),
            omega: state.w.dot(beta_star) / (eta_w * eta_a.sqrt()),
            delta: conserved_delta(state) / p,
            b,
            eta_a,
            eta_w,
        })
    }

    fn p(&self) -> f64 {
        self.eta_a * self.eta_w
    }

    fn r(&self) -> f64 {
        0.5 * (self.delta * self.delta + 4.0 * self.b * self.b).sqrt()
    }
}

/// `(e^{-2Rt} - e^{-(delta+2R)t}) / delta`, continuous at `delta = 0`.
fn middle_term(delta: f64, r: f64, t: f64) -> f64 {
    let e2 = (-2.0 * r * t).exp();
    if delta == 0.0 {
        t * e2
    } else if (delta * t).abs() < 1.0 {
        e2 * (-(-delta * t).exp_m1()) / delta
    } else {
        (e2 - (-(delta + 2.0 * r) * t).exp()) / delta
    }
}

/// Integral of `(c_+ e^{Rs} + c_- e^{-Rs})^2 e^{delta s}` over `[0, t]`, scaled by `e^{-(delta+2R)t}`.
fn scaled_square_integral(c_plus: f64, c_minus: f64, delta: f64, r: f64, t: f64) -> f64 {
    let lambda = delta + 2.0 * r;
    let el = (-lambda * t).exp();
    let e4 = (-4.0 * r * t).exp();
    c_plus * c_plus * (-(-lambda * t).exp_m1()) / lambda
        + 2.0 * c_plus * c_minus * middle_term(delta, r, t)
        + c_minus * c_minus * (e4 - el) / (delta - 2.0 * r)
}

fn coords_from(a: f64, omega: f64, delta: f64, b: f64) -> HyperbolicSpherical {
    let w_norm = (a * a - delta).max(0.0).sqrt();
    let phi = if w_norm > 0.0 { (omega / (w_norm * b)).clamp(-1.0, 1.0) } else { 0.0 };
    HyperbolicSpherical { mu: a * w_norm, phi }
}

/// Balanced closed form at unit rates, returning `(coords, c_phi, c_mu)`.
fn balanced_unit(mu0: f64, phi0: f64, b: f64, t: f64) -> Result<(HyperbolicSpherical, f64, f64)> {
    if !(b > 0.0) {
        return Err(Error::Domain("teacher norm must be positive"));
    }
    if mu0 == 0.0 || !mu0.is_finite() {
        return Err(Error::SaddleBound);
    }
    if !(phi0.abs() <= 1.0 + 1e-12) {
        return Err(Error::Domain("phi0 must lie in [-1, 1]"));
    }
    if mu0 < 0.0 {
        let (c, cp, cm) = balanced_unit(-mu0, -phi0, b, t)?;
        return Ok((HyperbolicSpherical { mu: -c.mu, phi: -c.phi }, cp, cm));
    }
    let phi0 = phi0.clamp(-1.0, 1.0);
    if phi0 <= -1.0 + 1e-15 {
        return Err(Error::SaddleBound);
    }
    if phi0 >= 1.0 - 1e-15 {
        let mu = b / (1.0 + (b / mu0 - 1.0) * (-2.0 * b * t).exp());
        return Ok((HyperbolicSpherical { mu, phi: 1.0 }, f64::INFINITY, f64::NAN));
    }
    let c_phi = phi0.atanh();
    let u = c_phi + b * t;
    let ec = (-2.0 * c_phi.abs()).exp();
    let eu = (-2.0 * u.abs()).exp();
    // c_mu scaled by e^{-2|c_phi|} and the Bernoulli denominator scaled by e^{-2|u|}
    let k = b * (1.0 + ec).powi(2) / (2.0 * mu0) - 2.0 * c_phi * ec - c_phi.signum() * (1.0 - ec * ec) / 2.0;
    let shift = (2.0 * c_phi.abs() - 2.0 * u.abs()).exp();
    let sinh_part = if u == 0.0 { 0.0 } else { u.signum() * (1.0 - eu * eu) / 2.0 };
    let denom = 2.0 * u * eu + k * shift + sinh_part;
    let num = b * (1.0 + eu).powi(2) / 2.0;
    let c_mu = 2.0 * b * c_phi.cosh().powi(2) / mu0 - (2.0 * c_phi + (2.0 * c_phi).sinh());
    Ok((HyperbolicSpherical { mu: num / denom, phi: u.tanh() }, c_phi, c_mu))
}

/// Balanced (`delta = 0`) trajectory at unit learning rates.
pub fn exact_balanced(mu0: f64, phi0: f64, beta_star_norm: f64, t: f64) -> Result<HyperbolicSpherical> {
    balanced_unit(mu0, phi0, beta_star_norm, t).map(|r| r.0)
}

/// Unit-rate `nu` chart: returns `(nu, a)`.
fn nu_chart(u: &Unit, t: f64) -> (f64, f64) {
    let (delta, b) = (u.delta, u.b);
    let r = u.r();
    let nu0 = u.omega / u.a;
    let tt = (r * t).tanh();
    let nu = (2.0 * r * nu0 + (2.0 * b * b - delta * nu0) * tt) / (2.0 * r + (2.0 * nu0 + delta) * tt);
    let g = (2.0 * nu0 + delta) / (2.0 * r);
    let e2 = (-2.0 * r * t).exp();
    let s = ((1.0 + g) + (1.0 - g) * e2) / 2.0;
    let el = (-(delta + 2.0 * r) * t).exp();
    let integral = scaled_square_integral((1.0 + g) / 2.0, (1.0 - g) / 2.0, delta, r, t);
    let a_sq = s * s / (el / (u.a * u.a) + 2.0 * integral);
    (nu, u.a.signum() * a_sq.sqrt())
}

/// Unit-rate `upsilon` chart: returns `(upsilon, omega)`.
fn upsilon_chart(u: &Unit, t: f64) -> (f64, f64) {
    let (delta, b) = (u.delta, u.b);
    let r = u.r();
    let ups0 = u.a / u.omega;
    let h = (2.0 * b * b * ups0 - delta) / (2.0 * r);
    let p = delta / 2.0 + r * h;
    let q = delta * h / 2.0 + r;
    let tt = (r * t).tanh();
    let ups = (p + q * tt) / (b * b * (1.0 + h * tt));
    let e2 = (-2.0 * r * t).exp();
    let el = (-(delta + 2.0 * r) * t).exp();
    let y_sq = ((1.0 + h) + (1.0 - h) * e2).powi(2) / 4.0;
    let integral = scaled_square_integral((p + q) / 2.0, (p - q) / 2.0, delta, r, t);
    let omega_sq = y_sq / (el / (u.omega * u.omega) + 2.0 * integral / b.powi(4));
    (ups, u.omega.signum() * omega_sq.sqrt())
}

fn check_time(t: f64) -> Result<()> {
    if t.is_finite() && t >= 0.0 {
        Ok(())
    } else {
        Err(Error::Domain("time must be finite and non-negative"))
    }
}

fn upsilon_valid(u: &Unit) -> bool {
    let r = u.r();
    let h = (2.0 * u.b * u.b * (u.a / u.omega) - u.delta) / (2.0 * r);
    h > -1.0
}

/// Trajectory in the `nu` chart; returns `(nu, a, coords)`.
pub fn exact_upstream(
    state0: &SingleNeuronState,
    beta_star: &DenseVector,
    t: f64,
) -> Result<(f64, f64, HyperbolicSpherical)> {
    check_time(t)?;
    let u = Unit::new(state0, beta_star)?;
    if u.a == 0.0 {
        return Err(Error::Domain("nu is undefined when a0 = 0"));
    }
    if u.delta < 0.0 {
        match classify_basin(state0, beta_star) {
            Basin::SaddleBound => return Err(Error::SaddleBound),
            Basin::PositiveBranch if u.a < 0.0 => return Err(Error::Domain("readout changes sign; use the upsilon chart")),
            Basin::NegativeBranch if u.a > 0.0 => return Err(Error::Domain("readout changes sign; use the upsilon chart")),
            _ => {}
        }
    }
    let s = u.p() * t;
    let (nu, a) = nu_chart(&u, s);
    let coords = coords_from(a, a * nu, u.delta, u.b);
    let scale = u.p().sqrt();
    Ok((nu * u.eta_w, a * u.eta_a.sqrt(), HyperbolicSpherical { mu: coords.mu * scale, phi: coords.phi }))
}

/// Trajectory in the `upsilon` chart; returns `(upsilon, omega, coords)`.
pub fn exact_downstream(
    state0: &SingleNeuronState,
    beta_star: &DenseVector,
    t: f64,
) -> Result<(f64, f64, HyperbolicSpherical)> {
    check_time(t)?;
    let u = Unit::new(state0, beta_star)?;
    if !(u.delta < 0.0) {
        return Err(Error::Domain("the upsilon chart is used for delta < 0"));
    }
    if classify_basin(state0, beta_star) == Basin::SaddleBound {
        return Err(Error::SaddleBound);
    }
    if u.omega == 0.0 {
        return Err(Error::Domain("upsilon is undefined when the teacher overlap is zero"));
    }
    if !upsilon_valid(&u) {
        return Err(Error::Domain("teacher overlap changes sign; use the nu chart"));
    }
    let s = u.p() * t;
    let (ups, omega) = upsilon_chart(&u, s);
    let coords = coords_from(ups * omega, omega, u.delta, u.b);
    let scale = u.p().sqrt();
    Ok((
        ups / u.eta_w,
        omega * u.eta_w * u.eta_a.sqrt(),
        HyperbolicSpherical { mu: coords.mu * scale, phi: coords.phi },
    ))
}

/// Closed-form state at time `t`, choosing the chart from the conserved quantity and the basin.
pub fn exact_solution(state0: &SingleNeuronState, beta_star: &DenseVector, t: f64) -> Result<ExactSolverState> {
    check_time(t)?;
    let u = Unit::new(state0, beta_star)?;
    let s = u.p() * t;
    let r = u.r();
    let (chart, a, omega, c_phi, c_mu) = if u.delta.abs() <= EPS_DELTA {
        let w_norm = (u.a * u.a - u.delta).max(0.0).sqrt();
        let mu0 = u.a * w_norm;
        let phi0 = if w_norm > 0.0 { u.omega / (w_norm * u.b) } else { 0.0 };
        let (c, cp, cm) = balanced_unit(mu0, phi0, u.b, s)?;
        let a = c.mu.signum() * ((c.mu * c.mu * 4.0 + u.delta * u.delta).sqrt() / 2.0 + u.delta / 2.0).max(0.0).sqrt();
        let w_norm = (a * a - u.delta).max(0.0).sqrt();
        (Chart::Balanced, a, c.phi * w_norm * u.b, Some(cp), Some(cm))
    } else {
        let basin = classify_basin(state0, beta_star);
        let flips = match basin {
            Basin::SaddleBound => return Err(Error::SaddleBound),
            Basin::PositiveBranch => !(u.a > 0.0),
            Basin::NegativeBranch => !(u.a < 0.0),
        };
        if flips {
            if !upsilon_valid(&u) {
                return Err(Error::Domain("no chart covers this trajectory"));
            }
            let (ups, omega) = upsilon_chart(&u, s);
            (Chart::Upsilon, ups * omega, omega, None, None)
        } else {
            let (nu, a) = nu_chart(&u, s);
            (Chart::Nu, a, a * nu, None, None)
        }
    };
    let coords = coords_from(a, omega, u.delta, u.b);
    let (a_out, omega_out) = (a * u.eta_a.sqrt(), omega * u.eta_w * u.eta_a.sqrt());
    Ok(ExactSolverState {
        t,
        chart,
        nu: (a_out != 0.0).then(|| omega_out / a_out),
        upsilon: (omega_out != 0.0).then(|| a_out / omega_out),
        omega: omega_out,
        a: a_out,
        coords: HyperbolicSpherical { mu: coords.mu * u.p().sqrt(), phi: coords.phi },
        c_phi,
        c_mu,
        r: r * u.p().sqrt(),
    })
}
