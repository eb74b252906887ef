//! Grid sweeps over overall scale and relative scale, averaged over seeds.

use rayon::prelude::*;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::{LabError, LabResult};
use crate::run::{build_setup, run_setup, RunStatus};

/// Per-run summaries averaged in each cell, in this order.
pub const SWEEP_METRICS: [&str; 7] = [
    "final_loss",
    "kernel_distance",
    "early_kernel_distance",
    "parameter_distance",
    "hamming_distance",
    "conservation_drift",
    "delta_error",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepCell {
    pub tau: f64,
    pub delta: f64,
    /// Runs that completed.
    pub count: usize,
    pub failures: Vec<String>,
    /// Seed means of [`SWEEP_METRICS`]; NaN where no run completed.
    pub means: Vec<f64>,
    /// Some run drifted past the configured conservation threshold.
    pub drift_flagged: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepResult {
    pub tau_grid: Vec<f64>,
    pub delta_grid: Vec<f64>,
    pub seeds: Vec<u64>,
    pub metrics: Vec<String>,
    /// Row-major over `(tau, delta)`.
    pub cells: Vec<SweepCell>,
    pub config_hash: String,
    pub version: String,
}

impl SweepResult {
    pub fn cell(&self, tau_index: usize, delta_index: usize) -> &SweepCell {
        &self.cells[tau_index * self.delta_grid.len() + delta_index]
    }

    pub fn metric(&self, tau_index: usize, delta_index: usize, name: &str) -> Option<f64> {
        let m = self.metrics.iter().position(|n| n == name)?;
        Some(self.cell(tau_index, delta_index).means[m])
    }
}

fn summarize(cfg: &ExperimentConfig, seed: u64, tau: f64, delta: f64) -> Result<(Vec<f64>, f64), String> {
    let setup = build_setup(cfg, seed, tau, delta).map_err(|e| e.to_string())?;
    let out = run_setup(&setup, cfg, tau).map_err(|e| e.to_string())?;
    if let RunStatus::Failed(reason) = &out.status {
        return Err(format!("seed {seed}: {reason}"));
    }
    let early = cfg.early_time * cfg.time_factor(tau);
    let value = |name: &str| out.last_value(name).unwrap_or(f64::NAN);
    let delta_error = out.initial_conserved.iter().map(|d| (d - delta).abs()).fold(0.0, f64::max);
    let metrics = vec![
        value("loss"),
        value("kernel_distance"),
        out.value_at_or_before("kernel_distance", early).unwrap_or(f64::NAN),
        value("parameter_distance"),
        value("hamming_distance"),
        out.max_drift,
        delta_error,
    ];
    Ok((metrics, out.max_drift))
}

/// One run per `(tau, delta, seed)`; a seed fixes data and base initialization across the grid.
pub fn run_sweep(cfg: &ExperimentConfig) -> LabResult<SweepResult> {
    cfg.validate()?;
    let tau_grid = if cfg.tau_grid.is_empty() { vec![cfg.tau] } else { cfg.tau_grid.clone() };
    let delta_grid = if cfg.delta_grid.is_empty() { vec![cfg.delta] } else { cfg.delta_grid.clone() };
    let seeds = cfg.seed_list();
    if seeds.is_empty() {
        return Err(LabError::Config("no seeds".into()));
    }
    let mut jobs = Vec::with_capacity(tau_grid.len() * delta_grid.len() * seeds.len());
    for ti in 0..tau_grid.len() {
        for di in 0..delta_grid.len() {
            jobs.extend(seeds.iter().map(|&s| (ti, di, s)));
        }
    }
    let results: Vec<_> = jobs
        .par_iter()
        .map(|&(ti, di, seed)| ((ti, di, seed), summarize(cfg, seed, tau_grid[ti], delta_grid[di])))
        .collect();

    let mut cells = Vec::with_capacity(tau_grid.len() * delta_grid.len());
    for (ti, &tau) in tau_grid.iter().enumerate() {
        for (di, &delta) in delta_grid.iter().enumerate() {
            let mut sums = vec![0.0; SWEEP_METRICS.len()];
            let mut count = 0;
            let mut failures = Vec::new();
            let mut drift_flagged = false;
            // results keep job order, so accumulation order is fixed
            for ((rti, rdi, _), r) in &results {
                if (*rti, *rdi) != (ti, di) {
                    continue;
                }
                match r {
                    Ok((metrics, drift)) => {
                        count += 1;
                        drift_flagged |= *drift > cfg.drift_flag;
                        for (s, m) in sums.iter_mut().zip(metrics) {
                            *s += m;
                        }
                    }
                    Err(reason) => failures.push(reason.clone()),
                }
            }
            let means = sums.iter().map(|s| if count > 0 { s / count as f64 } else { f64::NAN }).collect();
            cells.push(SweepCell { tau, delta, count, failures, means, drift_flagged });
        }
    }
    Ok(SweepResult {
        tau_grid,
        delta_grid,
        seeds,
        metrics: SWEEP_METRICS.iter().map(|s| s.to_string()).collect(),
        cells,
        config_hash: cfg.hash(),
        version: env!("CARGO_PKG_VERSION").to_string(),
    })
}
