//! Adaptive Dormand–Prince 5(4) integrator with dense output.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

pub const DEFAULT_RTOL: f64 = 1e-6;
pub const DEFAULT_ATOL: f64 = 1e-9;
pub const DEFAULT_MAX_STEPS: usize = 2_000_000;

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

// difference between the 5th and embedded 4th order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

// dense output coefficients
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// Initial value problem `y' = field(t, y)`, `y(t0) = y0`, sampled at `record_times`.
pub struct OdeProblem<F> {
    pub field: F,
    pub y0: Vec<f64>,
    pub t_span: (f64, f64),
    pub rtol: f64,
    pub atol: f64,
    pub record_times: Vec<f64>,
    pub max_steps: usize,
}

impl<F> OdeProblem<F>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    /// New problem recording only the final time, with default tolerances.
    pub fn new(field: F, y0: Vec<f64>, t_span: (f64, f64)) -> Self {
        Self {
            field,
            y0,
            t_span,
            rtol: DEFAULT_RTOL,
            atol: DEFAULT_ATOL,
            record_times: vec![t_span.1],
            max_steps: DEFAULT_MAX_STEPS,
        }
    }

    pub fn tolerances(mut self, rtol: f64, atol: f64) -> Self {
        self.rtol = rtol;
        self.atol = atol;
        self
    }

    pub fn record_at(mut self, times: Vec<f64>) -> Self {
        self.record_times = times;
        self
    }

    pub fn max_steps(mut self, max_steps: usize) -> Self {
        self.max_steps = max_steps;
        self
    }

    pub fn dimension(&self) -> usize {
        self.y0.len()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

/// States sampled at the requested record times.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub step_stats: StepStats,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> Option<(f64, &[f64])> {
        self.times.last().map(|&t| (t, self.states[self.states.len() - 1].as_slice()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, &[f64])> {
        self.times.iter().copied().zip(self.states.iter().map(|s| s.as_slice()))
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OdeError {
    #[error("invalid problem: {0}")]
    InvalidProblem(&'static str),

    #[error("non-finite derivative; last valid time {t}")]
    NonFiniteDerivative { t: f64, partial: Box<Trajectory> },

    #[error("step size underflow at t = {t} (h = {h:e}); problem looks stiff")]
    StepUnderflow { t: f64, h: f64, partial: Box<Trajectory> },

    #[error("step limit reached at t = {t}")]
    StepLimit { t: f64, partial: Box<Trajectory> },
}

impl OdeError {
    pub fn partial(&self) -> Option<&Trajectory> {
        match self {
            OdeError::InvalidProblem(_) => None,
            OdeError::NonFiniteDerivative { partial, .. }
            | OdeError::StepUnderflow { partial, .. }
            | OdeError::StepLimit { partial, .. } => Some(partial),
        }
    }
}

/// `n` equally spaced times covering `[t0, t1]` inclusive.
pub fn uniform_times(t0: f64, t1: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![t1],
        _ => (0..n).map(|i| if i + 1 == n { t1 } else { t0 + (t1 - t0) * i as f64 / (n - 1) as f64 }).collect(),
    }
}

/// `t0` followed by `n - 1` log-spaced times from `first` to `t1`.
pub fn log_times(t0: f64, first: f64, t1: f64, n: usize) -> Vec<f64> {
    let mut out = vec![t0];
    if n < 2 {
        return out;
    }
    let (la, lb) = (first.ln(), t1.ln());
    let m = n - 1;
    for i in 0..m {
        let t = if i + 1 == m || m == 1 { t1 } else { (la + (lb - la) * i as f64 / (m - 1) as f64).exp() };
        if t > *out.last().unwrap() {
            out.push(t);
        }
    }
    out
}

fn rms_scaled(v: &[f64], y: &[f64], rtol: f64, atol: f64) -> f64 {
    let n = v.len().max(1) as f64;
    let s: f64 = v
        .iter()
        .zip(y)
        .map(|(vi, yi)| {
            let sk = atol + rtol * yi.abs();
            (vi / sk).powi(2)
        })
        .sum();
    (s / n).sqrt()
}

fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

fn validate<F>(p: &OdeProblem<F>) -> Result<(), OdeError> {
    let (t0, t1) = p.t_span;
    if !(t0.is_finite() && t1.is_finite()) || t1 <= t0 {
        return Err(OdeError::InvalidProblem("t_span must satisfy t0 < t1"));
    }
    if !(p.rtol > 0.0 && p.atol > 0.0) {
        return Err(OdeError::InvalidProblem("tolerances must be positive"));
    }
    if p.y0.is_empty() {
        return Err(OdeError::InvalidProblem("empty state"));
    }
    if !all_finite(&p.y0) {
        return Err(OdeError::InvalidProblem("non-finite initial state"));
    }
    let mut prev = f64::NEG_INFINITY;
    for &t in &p.record_times {
        if !(t >= t0 && t <= t1) {
            return Err(OdeError::InvalidProblem("record time outside t_span"));
        }
        if t <= prev {
            return Err(OdeError::InvalidProblem("record times must be strictly increasing"));
        }
        prev = t;
    }
    Ok(())
}

struct Work {
    k: [Vec<f64>; 7],
    ytmp: Vec<f64>,
    ynew: Vec<f64>,
    err: Vec<f64>,
}

/// Integrates the problem with the Dormand–Prince pair and samples the dense output.
pub fn integrate_rk45<F>(mut problem: OdeProblem<F>) -> Result<Trajectory, OdeError>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    validate(&problem)?;
    let n = problem.y0.len();
    let (t0, t1) = problem.t_span;
    let (rtol, atol) = (problem.rtol, problem.atol);
    let field = &mut problem.field;
    let record = &problem.record_times;

    let mut out = Trajectory::default();
    let mut next_rec = 0usize;
    let mut y = problem.y0.clone();
    let mut t = t0;

    let mut w = Work {
        k: core::array::from_fn(|_| vec![0.0; n]),
        ytmp: vec![0.0; n],
        ynew: vec![0.0; n],
        err: vec![0.0; n],
    };

    field(t, &y, &mut w.k[0]);
    out.step_stats.evaluations += 1;
    if !all_finite(&w.k[0]) {
        return Err(OdeError::NonFiniteDerivative { t, partial: Box::new(out) });
    }
    while next_rec < record.len() && record[next_rec] <= t0 {
        out.times.push(record[next_rec]);
        out.states.push(y.clone());
        next_rec += 1;
    }

    let mut h = initial_step(field, t0, t1, &y, &w.k[0], rtol, atol, &mut out.step_stats);
    let mut last_rejected = false;
    let mut nonfinite_streak = false;

    while t < t1 {
        if out.step_stats.accepted + out.step_stats.rejected >= problem.max_steps {
            return Err(OdeError::StepLimit { t, partial: Box::new(out) });
        }
        let remaining = t1 - t;
        let last = h >= remaining * 0.999_999;
        if last {
            h = remaining;
        }
        if h <= 16.0 * f64::EPSILON * t.abs().max(1.0) {
            return Err(if nonfinite_streak {
                OdeError::NonFiniteDerivative { t, partial: Box::new(out) }
            } else {
                OdeError::StepUnderflow { t, h, partial: Box::new(out) }
            });
        }

        let finite = trial_step(field, t, h, &y, &mut w, &mut out.step_stats);
        if !finite {
            nonfinite_streak = true;
            last_rejected = true;
            out.step_stats.rejected += 1;
            h *= 0.25;
            continue;
        }
        let mut sq = 0.0;
        for i in 0..n {
            let sk = atol + rtol * y[i].abs().max(w.ynew[i].abs());
            sq += (w.err[i] / sk).powi(2);
        }
        let err = (sq / n as f64).sqrt();

        if err <= 1.0 {
            let t_new = if last { t1 } else { t + h };
            while next_rec < record.len() && record[next_rec] <= t_new {
                let tr = record[next_rec];
                let state = if tr == t_new {
                    w.ynew.clone()
                } else {
                    dense_output(&y, &w, h, (tr - t) / h)
                };
                out.times.push(tr);
                out.states.push(state);
                next_rec += 1;
            }
            t = t_new;
            core::mem::swap(&mut y, &mut w.ynew);
            w.k.swap(0, 6);
            out.step_stats.accepted += 1;
            nonfinite_streak = false;

            let mut fac = if err == 0.0 { FAC_MAX } else { SAFETY * err.powf(-0.2) };
            fac = fac.clamp(FAC_MIN, FAC_MAX);
            if last_rejected {
                fac = fac.min(1.0);
            }
            last_rejected = false;
            h *= fac;
        } else {
            out.step_stats.rejected += 1;
            last_rejected = true;
            h *= (SAFETY * err.powf(-0.2)).max(FAC_MIN);
        }
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn initial_step<F>(
    field: &mut F,
    t0: f64,
    t1: f64,
    y0: &[f64],
    f0: &[f64],
    rtol: f64,
    atol: f64,
    stats: &mut StepStats,
) -> f64
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let span = t1 - t0;
    let d0 = rms_scaled(y0, y0, rtol, atol);
    let d1 = rms_scaled(f0, y0, rtol, atol);
    let mut h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    h0 = h0.min(span);
    let y1: Vec<f64> = y0.iter().zip(f0).map(|(y, f)| y + h0 * f).collect();
    let mut f1 = vec![0.0; y0.len()];
    field(t0 + h0, &y1, &mut f1);
    stats.evaluations += 1;
    if !all_finite(&f1) {
        return h0;
    }
    let diff: Vec<f64> = f1.iter().zip(f0).map(|(a, b)| a - b).collect();
    let d2 = rms_scaled(&diff, y0, rtol, atol) / h0;
    let big = d1.max(d2);
    let h1 = if big <= 1e-15 { (h0 * 1e-3).max(1e-6) } else { (0.01 / big).powf(0.2) };
    (100.0 * h0).min(h1).min(span)
}

fn trial_step<F>(field: &mut F, t: f64, h: f64, y: &[f64], w: &mut Work, stats: &mut StepStats) -> bool
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let n = y.len();
    let (k, ytmp) = (&mut w.k, &mut w.ytmp);

    for i in 0..n {
        ytmp[i] = y[i] + h * A21 * k[0][i];
    }
    field(t + C2 * h, ytmp, &mut k[1]);
    for i in 0..n {
        ytmp[i] = y[i] + h * (A31 * k[0][i] + A32 * k[1][i]);
    }
    field(t + C3 * h, ytmp, &mut k[2]);
    for i in 0..n {
        ytmp[i] = y[i] + h * (A41 * k[0][i] + A42 * k[1][i] + A43 * k[2][i]);
    }
    field(t + C4 * h, ytmp, &mut k[3]);
    for i in 0..n {
        ytmp[i] = y[i] + h * (A51 * k[0][i] + A52 * k[1][i] + A53 * k[2][i] + A54 * k[3][i]);
    }
    field(t + C5 * h, ytmp, &mut k[4]);
    for i in 0..n {
        ytmp[i] = y[i] + h * (A61 * k[0][i] + A62 * k[1][i] + A63 * k[2][i] + A64 * k[3][i] + A65 * k[4][i]);
    }
    field(t + h, ytmp, &mut k[5]);
    for i in 0..n {
        w.ynew[i] = y[i] + h * (A71 * k[0][i] + A73 * k[2][i] + A74 * k[3][i] + A75 * k[4][i] + A76 * k[5][i]);
    }
    field(t + h, &w.ynew, &mut k[6]);
    stats.evaluations += 6;

    for i in 0..n {
        w.err[i] = h
            * (E1 * k[0][i] + E3 * k[2][i] + E4 * k[3][i] + E5 * k[4][i] + E6 * k[5][i] + E7 * k[6][i]);
    }
    all_finite(&w.ynew) && k[1..].iter().all(|v| all_finite(v)) && all_finite(&w.err)
}

fn dense_output(y: &[f64], w: &Work, h: f64, theta: f64) -> Vec<f64> {
    let k = &w.k;
    let th1 = 1.0 - theta;
    (0..y.len())
        .map(|i| {
            let r1 = y[i];
            let r2 = w.ynew[i] - y[i];
            let r3 = h * k[0][i] - r2;
            let r4 = r2 - h * k[6][i] - r3;
            let r5 = h
                * (D1 * k[0][i] + D3 * k[2][i] + D4 * k[3][i] + D5 * k[4][i] + D6 * k[5][i] + D7 * k[6][i]);
            r1 + theta * (r2 + th1 * (r3 + theta * (r4 + th1 * r5)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay() {
        let p = OdeProblem::new(|_, y: &[f64], dy: &mut [f64]| dy[0] = -y[0], vec![1.0], (0.0, 1.0));
        let tr = integrate_rk45(p).unwrap();
        assert!((tr.states[0][0] - (-1.0f64).exp()).abs() < 1e-6);
        assert!(tr.step_stats.accepted > 0);
    }

    #[test]
    fn dense_output_matches_closed_form() {
        let times = uniform_times(0.0, 3.0, 61);
        let p = OdeProblem::new(|_, y: &[f64], dy: &mut [f64]| dy[0] = -y[0], vec![1.0], (0.0, 3.0))
            .tolerances(1e-9, 1e-12)
            .record_at(times.clone());
        let tr = integrate_rk45(p).unwrap();
        assert_eq!(tr.times, times);
        for (t, s) in tr.iter() {
            assert!((s[0] - (-t).exp()).abs() < 1e-8, "t = {t}");
        }
    }

    #[test]
    fn oscillator_energy() {
        let times = uniform_times(0.0, 20.0, 201);
        let p = OdeProblem::new(
            |_, y: &[f64], dy: &mut [f64]| {
                dy[0] = y[1];
                dy[1] = -y[0];
            },
            vec![1.0, 0.0],
            (0.0, 20.0),
        )
        .record_at(times);
        let tr = integrate_rk45(p).unwrap();
        for (_, s) in tr.iter() {
            assert!((s[0] * s[0] + s[1] * s[1] - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn blow_up_reports_last_valid_time() {
        // y' = y^2 from y(0) = 1 blows up at t = 1
        let p = OdeProblem::new(|_, y: &[f64], dy: &mut [f64]| dy[0] = y[0] * y[0], vec![1.0], (0.0, 2.0))
            .record_at(vec![0.0, 0.5, 2.0]);
        let err = integrate_rk45(p).unwrap_err();
        let partial = err.partial().unwrap();
        assert_eq!(partial.times, vec![0.0, 0.5]);
        match err {
            OdeError::NonFiniteDerivative { t, .. } | OdeError::StepUnderflow { t, .. } => {
                assert!(t > 0.99 && t < 1.001, "t = {t}")
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_finite_at_start() {
        let p = OdeProblem::new(|_, _: &[f64], dy: &mut [f64]| dy[0] = f64::NAN, vec![1.0], (0.0, 1.0));
        assert!(matches!(integrate_rk45(p), Err(OdeError::NonFiniteDerivative { t, .. }) if t == 0.0));
    }

    #[test]
    fn rejects_invalid_problems() {
        let f = |_: f64, _: &[f64], dy: &mut [f64]| dy[0] = 0.0;
        assert!(integrate_rk45(OdeProblem::new(f, vec![1.0], (1.0, 0.0))).is_err());
        assert!(integrate_rk45(OdeProblem::new(f, vec![1.0], (0.0, 1.0)).tolerances(0.0, 1e-9)).is_err());
        assert!(integrate_rk45(OdeProblem::new(f, vec![1.0], (0.0, 1.0)).record_at(vec![0.5, 0.2])).is_err());
        assert!(integrate_rk45(OdeProblem::new(f, vec![1.0], (0.0, 1.0)).record_at(vec![2.0])).is_err());
    }

    #[test]
    fn step_limit() {
        let p = OdeProblem::new(|_, y: &[f64], dy: &mut [f64]| dy[0] = -y[0], vec![1.0], (0.0, 100.0)).max_steps(3);
        assert!(matches!(integrate_rk45(p), Err(OdeError::StepLimit { .. })));
    }

    #[test]
    fn log_times_are_increasing() {
        let t = log_times(0.0, 1e-3, 20.0, 50);
        assert_eq!(t[0], 0.0);
        assert_eq!(*t.last().unwrap(), 20.0);
        assert!(t.windows(2).all(|w| w[1] > w[0]));
    }
}
