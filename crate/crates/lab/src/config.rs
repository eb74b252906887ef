//! Flat key-value experiment configuration with command-line overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{LabError, LabResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    SingleNeuron,
    Wide,
    Deep,
    Piecewise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fixture {
    /// `X^T X = I`, teacher `(0, 1)`, start `(-1, 0)`.
    Whitened,
    /// One sample `x = (0.5, 1)`, `y = 1.1`, start `(0.4, 0.05)`.
    LowRank,
    /// Inputs on the sphere with a linear or ReLU teacher, depending on the model.
    Teacher,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Optimizer {
    Flow,
    Discrete,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputFormat {
    Csv,
    Jsonl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelKind,
    pub fixture: Fixture,
    pub d: usize,
    pub h: usize,
    pub c: usize,
    pub depth: usize,
    /// Teacher width.
    pub k: usize,
    pub n: usize,
    /// Overall scale. For deep chains this is the layer scale and fixes `delta = -tau^2`.
    pub tau: f64,
    pub delta: f64,
    pub gamma: f64,
    pub eta_a: f64,
    pub eta_w: f64,
    /// Readout perturbation for deep chains started at `a = 0`; zero disables it.
    pub saddle_escape: f64,
    pub seed: u64,
    pub seeds: Vec<u64>,
    pub tau_grid: Vec<f64>,
    pub delta_grid: Vec<f64>,
    pub optimizer: Optimizer,
    pub rtol: f64,
    pub atol: f64,
    pub t_end: f64,
    pub lr: f64,
    pub steps: usize,
    /// Divide time span and learning rate by `tau^2`.
    pub scale_time: bool,
    pub records: usize,
    /// Cut-off for the early kernel-distance metric in sweeps (same units as `t_end`).
    pub early_time: f64,
    /// Conservation drift above which a run is flagged.
    pub drift_flag: f64,
    pub format: OutputFormat,
    pub out: Option<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Piecewise,
            fixture: Fixture::Teacher,
            d: 2,
            h: 10,
            c: 1,
            depth: 2,
            k: 3,
            n: 20,
            tau: 1.0,
            delta: 0.0,
            gamma: 0.0,
            eta_a: 1.0,
            eta_w: 1.0,
            saddle_escape: 0.0,
            seed: 0,
            seeds: Vec::new(),
            tau_grid: Vec::new(),
            delta_grid: Vec::new(),
            optimizer: Optimizer::Flow,
            rtol: 1e-6,
            atol: 1e-9,
            t_end: 20.0,
            lr: 1e-3,
            steps: 10_000,
            scale_time: false,
            records: 200,
            early_time: 1.0,
            drift_flag: 1e-4,
            format: OutputFormat::Csv,
            out: None,
        }
    }
}

/// Parses one `key=value` override; bare words that are not TOML values are read as strings.
fn parse_override(raw: &str) -> LabResult<(String, toml::Value)> {
    let (key, value) = raw
        .split_once('=')
        .ok_or_else(|| LabError::Config(format!("override `{raw}` is not of the form key=value")))?;
    let key = key.trim().to_string();
    let value = value.trim();
    let parsed = toml::from_str::<toml::Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    Ok((key, parsed))
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str, overrides: &[String]) -> LabResult<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| LabError::Config(e.to_string()))?;
        for raw in overrides {
            let (key, value) = parse_override(raw)?;
            table.insert(key, value);
        }
        let cfg: Self = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| LabError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> LabResult<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| LabError::Config(format!("{}: {e}", p.display())))?,
            None => String::new(),
        };
        Self::from_toml_str(&text, overrides)
    }

    pub fn validate(&self) -> LabResult<()> {
        let fail = |msg: &str| Err(LabError::Config(msg.to_string()));
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return fail("tau must be positive");
        }
        if !self.delta.is_finite() {
            return fail("delta must be finite");
        }
        if self.n == 0 || self.d == 0 {
            return fail("n and d must be at least 1");
        }
        if !(self.eta_a > 0.0 && self.eta_w > 0.0) {
            return fail("learning rates must be positive");
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return fail("gamma must lie in [0, 1)");
        }
        if !(self.t_end > 0.0) {
            return fail("t_end must be positive");
        }
        if !(self.rtol > 0.0 && self.atol > 0.0) {
            return fail("tolerances must be positive");
        }
        if self.optimizer == Optimizer::Discrete && !(self.lr > 0.0 && self.steps > 0) {
            return fail("discrete mode needs a positive learning rate and step count");
        }
        if self.records < 2 {
            return fail("records must be at least 2");
        }
        if self.tau_grid.iter().any(|&t| !(t > 0.0)) {
            return fail("tau grid entries must be positive");
        }
        match self.model {
            ModelKind::SingleNeuron => {
                if matches!(self.fixture, Fixture::Whitened | Fixture::LowRank) && self.d != 2 {
                    return fail("the whitened and low-rank fixtures are two-dimensional; set d = 2");
                }
            }
            ModelKind::Wide => {
                if self.h == 0 || self.c == 0 {
                    return fail("wide networks need h >= 1 and c >= 1");
                }
                if self.fixture != Fixture::Teacher {
                    return fail("wide networks only support the teacher fixture");
                }
            }
            ModelKind::Deep => {
                if self.depth == 0 {
                    return fail("depth must be at least 1");
                }
                if self.fixture != Fixture::Teacher {
                    return fail("deep chains only support the teacher fixture");
                }
            }
            ModelKind::Piecewise => {
                if self.h == 0 || !self.h.is_multiple_of(2) {
                    return fail("piecewise students need an even, non-zero width h");
                }
                if self.k == 0 {
                    return fail("teacher width k must be at least 1");
                }
                if self.fixture != Fixture::Teacher {
                    return fail("piecewise networks only support the teacher fixture");
                }
            }
        }
        Ok(())
    }

    /// Seeds for sweeps; falls back to the single `seed`.
    pub fn seed_list(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            vec![self.seed]
        } else {
            self.seeds.clone()
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        format!("{:x}", Sha256::digest(json.as_bytes()))
    }

    /// Multiplier applied to time spans and learning rates at scale `tau`.
    pub fn time_factor(&self, tau: f64) -> f64 {
        if self.scale_time {
            1.0 / (tau * tau)
        } else {
            1.0
        }
    }
}
