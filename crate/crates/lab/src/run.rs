//! Building a model from a config and following it with gradient flow or gradient descent.

use rand::Rng;
use relscale_core::data::fixtures;
use relscale_core::linalg::{random_unit_vector, DenseMatrix, DenseVector};
use relscale_core::metrics::{hamming_distance_activations, kernel_distance, parameter_distance};
use relscale_core::ode::{integrate_rk45, log_times, OdeProblem};
use relscale_core::piecewise::{self, PiecewiseState};
use relscale_core::single_neuron::{self, SingleNeuronState};
use relscale_core::{deep, wide, Dataset, Rates};
use serde::Serialize;

use crate::config::{ExperimentConfig, Fixture, ModelKind, Optimizer};
use crate::error::{LabError, LabResult};
use crate::teacher::{self, stream};

const MODEL_STREAM: u64 = 2;

/// Network plus data, with the flat parameter layout used by the integrators.
#[derive(Debug, Clone)]
pub enum Model {
    SingleNeuron { data: Dataset, rates: Rates, beta_star: DenseVector },
    Wide { data: Dataset, h: usize, rates: Rates },
    Deep { data: Dataset, depth: usize },
    Piecewise { data: Dataset, h: usize, gamma: f64, rates: Rates },
}

/// Snapshot of everything the metrics need at one instant.
#[derive(Debug, Clone)]
pub struct Probe {
    pub loss: f64,
    pub ntk: DenseMatrix,
    /// Conserved quantities, flattened.
    pub conserved: Vec<f64>,
    pub activations: Option<DenseMatrix>,
    pub extras: Vec<f64>,
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::SingleNeuron { .. } => ModelKind::SingleNeuron,
            Model::Wide { .. } => ModelKind::Wide,
            Model::Deep { .. } => ModelKind::Deep,
            Model::Piecewise { .. } => ModelKind::Piecewise,
        }
    }

    pub fn data(&self) -> &Dataset {
        match self {
            Model::SingleNeuron { data, .. }
            | Model::Wide { data, .. }
            | Model::Deep { data, .. }
            | Model::Piecewise { data, .. } => data,
        }
    }

    pub fn field(&self, y: &[f64], dy: &mut [f64]) {
        match self {
            Model::SingleNeuron { data, rates, .. } => single_neuron::flat_field(data, *rates, y, dy),
            Model::Wide { data, h, rates } => wide::flat_field(data, *h, *rates, y, dy),
            Model::Deep { data, depth } => deep::flat_field(data, *depth, y, dy),
            Model::Piecewise { data, h, gamma, rates } => piecewise::flat_field(data, *h, *gamma, *rates, y, dy),
        }
    }

    pub fn extra_columns(&self) -> Vec<String> {
        match self {
            Model::SingleNeuron { data, .. } => {
                let mut cols: Vec<String> = (0..data.d()).map(|i| format!("beta_{i}")).collect();
                cols.extend(["mu".to_string(), "phi".to_string()]);
                cols
            }
            Model::Wide { .. } => vec!["beta_norm".into()],
            Model::Deep { .. } => vec!["beta_norm".into(), "conservation_residual".into()],
            Model::Piecewise { .. } => vec!["output_sup".into()],
        }
    }

    /// Maximum entry drift for per-neuron scalars, Frobenius drift for matrices.
    pub fn drift(&self, c0: &[f64], c1: &[f64]) -> f64 {
        let diffs = c0.iter().zip(c1).map(|(a, b)| (a - b).abs());
        match self {
            Model::SingleNeuron { .. } | Model::Piecewise { .. } => diffs.fold(0.0, f64::max),
            Model::Wide { .. } | Model::Deep { .. } => diffs.map(|v| v * v).sum::<f64>().sqrt(),
        }
    }

    pub fn probe(&self, y: &[f64]) -> LabResult<Probe> {
        Ok(match self {
            Model::SingleNeuron { data, rates, beta_star } => {
                let s = SingleNeuronState::from_flat(y, *rates)?;
                let beta = s.beta();
                let loss = data.loss(&DenseMatrix::from_column_slice(beta.len(), 1, beta.as_slice()))?;
                let coords = single_neuron::mu_phi(&s, beta_star);
                let mut extras: Vec<f64> = beta.iter().copied().collect();
                extras.extend([coords.mu, coords.phi]);
                Probe {
                    loss,
                    ntk: single_neuron::ntk_matrix(&s, data.x())?,
                    conserved: vec![single_neuron::conserved_delta(&s)],
                    activations: None,
                    extras,
                }
            }
            Model::Wide { data, h, rates } => {
                let s = wide::WideLinearState::from_flat(*h, data.d(), data.c(), y, *rates)?;
                let beta = s.beta();
                Probe {
                    loss: data.loss(&beta)?,
                    ntk: wide::ntk_matrix_wide(&s, data.x())?,
                    conserved: wide::conserved_delta_matrix(&s).as_slice().to_vec(),
                    activations: None,
                    extras: vec![beta.norm()],
                }
            }
            Model::Deep { data, depth } => {
                let s = deep::DeepLinearState::from_flat(data.d(), *depth, y)?;
                let beta = s.beta();
                let m = deep::deep_preconditioner_direct(&s);
                let mut conserved = Vec::new();
                for pair in s.layers.windows(2) {
                    conserved.extend_from_slice((pair[1].transpose() * &pair[1] - &pair[0] * pair[0].transpose()).as_slice());
                }
                let last = s.layers.last().expect("depth >= 1");
                conserved.extend_from_slice((&s.a * s.a.transpose() - last * last.transpose()).as_slice());
                Probe {
                    loss: data.loss(&DenseMatrix::from_column_slice(beta.len(), 1, beta.as_slice()))?,
                    ntk: data.x() * m * data.x().transpose(),
                    conserved,
                    activations: None,
                    extras: vec![beta.norm(), deep::deep_conservation(&s).max_residual()],
                }
            }
            Model::Piecewise { data, h, gamma, rates } => {
                let s = PiecewiseState::from_flat(*h, data.d(), y, *gamma, *rates)?;
                let out = s.forward(data.x());
                let resid = &out - data.y().column(0);
                Probe {
                    loss: 0.5 * resid.norm_squared(),
                    ntk: piecewise::ntk_matrix_piecewise(&s, data.x())?,
                    conserved: s.per_neuron_delta().as_slice().to_vec(),
                    activations: Some(piecewise::activation_matrix(&s, data.x())?),
                    extras: vec![out.amax()],
                }
            }
        })
    }
}

/// Model and initial parameters for one `(seed, tau, delta)` cell.
#[derive(Debug, Clone)]
pub struct Setup {
    pub model: Model,
    pub y0: Vec<f64>,
}

fn sphere_inputs<R: Rng + ?Sized>(n: usize, d: usize, rng: &mut R) -> DenseMatrix {
    let mut x = DenseMatrix::zeros(n, d);
    for i in 0..n {
        x.set_row(i, &random_unit_vector(d, rng).transpose());
    }
    x
}

/// Builds the model; the seed fixes data and base initialization, `tau` and `delta` only rescale.
pub fn build_setup(cfg: &ExperimentConfig, seed: u64, tau: f64, delta: f64) -> LabResult<Setup> {
    let rates = Rates::new(cfg.eta_a, cfg.eta_w).map_err(|e| LabError::Config(e.to_string()))?;
    match cfg.model {
        ModelKind::SingleNeuron => {
            let (data, beta_star, beta0) = match cfg.fixture {
                Fixture::Whitened => {
                    let f = fixtures::whitened();
                    (f.data, f.beta_star, f.beta0)
                }
                Fixture::LowRank => {
                    let f = fixtures::low_rank();
                    (f.data, f.beta_star, f.beta0)
                }
                Fixture::Teacher => {
                    let mut rng = stream(seed, MODEL_STREAM);
                    let x = sphere_inputs(cfg.n, cfg.d, &mut rng);
                    let target = random_unit_vector(cfg.d, &mut rng);
                    let y = &x * &target;
                    let data = Dataset::scalar_targets(x, &y)?;
                    let beta_star = data.min_norm_solution()?.column(0).into_owned();
                    (data, beta_star, random_unit_vector(cfg.d, &mut rng))
                }
            };
            let s = SingleNeuronState::from_beta(&(beta0 * (tau * tau)), delta, rates, true)?;
            Ok(Setup { y0: s.to_flat(), model: Model::SingleNeuron { data, rates, beta_star } })
        }
        ModelKind::Wide => {
            let mut rng = stream(seed, MODEL_STREAM);
            let x = sphere_inputs(cfg.n, cfg.d, &mut rng);
            let target = relscale_core::linalg::random_gaussian(cfg.d, cfg.c, &mut rng);
            let data = Dataset::new(x.clone(), &x * target)?;
            let mut w = sphere_inputs(cfg.h, cfg.d, &mut rng);
            let mut a = sphere_inputs(cfg.h, cfg.c, &mut rng);
            // per-unit rescale so that eta_w |a_k|^2 - eta_a |w_k|^2 = delta
            let alpha = teacher::relative_scale(tau, delta)?;
            w *= tau / (alpha * rates.eta_a.sqrt());
            a *= tau * alpha / rates.eta_w.sqrt();
            let s = wide::WideLinearState::new(w, a, rates)?;
            Ok(Setup { y0: s.to_flat(), model: Model::Wide { data, h: cfg.h, rates } })
        }
        ModelKind::Deep => {
            let mut rng = stream(seed, MODEL_STREAM);
            let x = sphere_inputs(cfg.n, cfg.d, &mut rng);
            let target = random_unit_vector(cfg.d, &mut rng);
            let y = &x * target;
            let data = Dataset::scalar_targets(x, &y)?;
            let mut s = deep::isotropic_deep_init(cfg.d, cfg.depth, tau, seed)?;
            if cfg.saddle_escape > 0.0 {
                s.perturb_readout(cfg.saddle_escape, &mut rng);
            }
            Ok(Setup { y0: s.to_flat(), model: Model::Deep { data, depth: cfg.depth } })
        }
        ModelKind::Piecewise => {
            let (data, _) = teacher::teacher_student_dataset(cfg.d, cfg.k, cfg.n, seed)?;
            let base = teacher::symmetrized_student_init(cfg.h, cfg.d, seed)?;
            let base = PiecewiseState::new(base.w, base.a, cfg.gamma, Rates::UNIT)?;
            let s = teacher::rescale_tau_delta(&base, tau, delta)?;
            let s = PiecewiseState::new(s.w, s.a, cfg.gamma, rates)?;
            Ok(Setup { y0: s.to_flat(), model: Model::Piecewise { data, h: cfg.h, gamma: cfg.gamma, rates } })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", content = "reason", rename_all = "kebab-case")]
pub enum RunStatus {
    Complete,
    Failed(String),
}

/// Recorded trajectory with metric table.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub states: Vec<Vec<f64>>,
    pub status: RunStatus,
    pub initial_conserved: Vec<f64>,
    pub max_drift: f64,
}

impl RunOutput {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[idx]).collect())
    }

    pub fn times(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r[0]).collect()
    }

    pub fn last_value(&self, name: &str) -> Option<f64> {
        self.column(name)?.last().copied()
    }

    /// Last recorded value at or before `t`.
    pub fn value_at_or_before(&self, name: &str, t: f64) -> Option<f64> {
        let col = self.column(name)?;
        self.times().iter().zip(col).filter(|(ti, _)| **ti <= t).map(|(_, v)| v).next_back()
    }
}

fn tabulate(model: &Model, times: &[f64], states: Vec<Vec<f64>>, status: RunStatus) -> LabResult<RunOutput> {
    let mut columns: Vec<String> =
        ["t", "loss", "kernel_distance", "parameter_distance", "conservation_drift"].iter().map(|s| s.to_string()).collect();
    let piecewise = model.kind() == ModelKind::Piecewise;
    if piecewise {
        columns.push("hamming_distance".into());
    }
    columns.extend(model.extra_columns());
    let first = model.probe(&states[0])?;
    let gamma = match model {
        Model::Piecewise { gamma, .. } => *gamma,
        _ => 0.0,
    };
    let mut rows = Vec::with_capacity(times.len());
    let mut max_drift = 0.0_f64;
    for (t, y) in times.iter().zip(&states) {
        let p = model.probe(y)?;
        let kd = kernel_distance(&first.ntk, &p.ntk).unwrap_or(f64::NAN);
        let drift = model.drift(&first.conserved, &p.conserved);
        max_drift = max_drift.max(drift);
        let mut row = vec![*t, p.loss, kd, parameter_distance(&states[0], y)?, drift];
        if piecewise {
            let (c0, c1) = (first.activations.as_ref(), p.activations.as_ref());
            row.push(hamming_distance_activations(c0.expect("piecewise"), c1.expect("piecewise"), gamma)?);
        }
        row.extend(p.extras);
        rows.push(row);
    }
    Ok(RunOutput { columns, rows, states, status, initial_conserved: first.conserved, max_drift })
}

/// Recording times for a span `[0, t_end]`: zero followed by log-spaced samples.
pub fn record_schedule(t_end: f64, records: usize) -> Vec<f64> {
    log_times(0.0, t_end * 1e-4, t_end, records)
}

/// Follows a prepared setup and tabulates the metrics.
pub fn run_setup(setup: &Setup, cfg: &ExperimentConfig, tau: f64) -> LabResult<RunOutput> {
    let factor = cfg.time_factor(tau);
    let (times, states, status) = match cfg.optimizer {
        Optimizer::Flow => {
            let t_end = cfg.t_end * factor;
            let model = &setup.model;
            let problem = OdeProblem::new(|_t, y: &[f64], dy: &mut [f64]| model.field(y, dy), setup.y0.clone(), (0.0, t_end))
                .tolerances(cfg.rtol, cfg.atol)
                .record_at(record_schedule(t_end, cfg.records));
            match integrate_rk45(problem) {
                Ok(traj) => (traj.times, traj.states, RunStatus::Complete),
                Err(e) => {
                    let reason = e.to_string();
                    match e.partial() {
                        Some(p) if !p.is_empty() => (p.times.clone(), p.states.clone(), RunStatus::Failed(reason)),
                        _ => return Err(LabError::Numerical(reason)),
                    }
                }
            }
        }
        Optimizer::Discrete => descend(&setup.model, &setup.y0, cfg.lr * factor, cfg.steps, cfg.records),
    };
    tabulate(&setup.model, &times, states, status)
}

/// Full-batch gradient descent; time is step count times learning rate.
fn descend(model: &Model, y0: &[f64], lr: f64, steps: usize, records: usize) -> (Vec<f64>, Vec<Vec<f64>>, RunStatus) {
    let mut marks: Vec<usize> = record_schedule(steps as f64, records).iter().map(|s| s.round() as usize).collect();
    marks.dedup();
    let mut y = y0.to_vec();
    let mut dy = vec![0.0; y.len()];
    let (mut times, mut states) = (Vec::new(), Vec::new());
    let mut next = 0;
    for step in 0..=steps {
        if next < marks.len() && marks[next] == step {
            times.push(step as f64 * lr);
            states.push(y.clone());
            next += 1;
        }
        if step == steps {
            break;
        }
        model.field(&y, &mut dy);
        if dy.iter().any(|v| !v.is_finite()) {
            return (times, states, RunStatus::Failed(format!("non-finite update at step {step}")));
        }
        for (yi, di) in y.iter_mut().zip(&dy) {
            *yi += lr * di;
        }
    }
    (times, states, RunStatus::Complete)
}

/// Builds and runs the configured single trajectory.
pub fn run_trajectory(cfg: &ExperimentConfig) -> LabResult<RunOutput> {
    cfg.validate()?;
    let setup = build_setup(cfg, cfg.seed, cfg.tau, cfg.delta)?;
    run_setup(&setup, cfg, cfg.tau)
}
