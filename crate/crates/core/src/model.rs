//! Shared model plumbing: learning rates, regime labels and numeric thresholds.

use crate::error::{Error, Result};

/// Below this norm a predictor has no usable direction.
pub const EPS_BETA: f64 = 1e-12;
/// Band around zero treated as a balanced initialization.
pub const EPS_DELTA: f64 = 1e-9;

/// Per-layer learning rates for the readout (`eta_a`) and the first layer (`eta_w`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rates {
    pub eta_a: f64,
    pub eta_w: f64,
}

impl Default for Rates {
    fn default() -> Self {
        Self::UNIT
    }
}

impl Rates {
    pub const UNIT: Rates = Rates { eta_a: 1.0, eta_w: 1.0 };

    pub fn new(eta_a: f64, eta_w: f64) -> Result<Self> {
        let r = Rates { eta_a, eta_w };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if ok(self.eta_a) && ok(self.eta_w) {
            Ok(())
        } else {
            Err(Error::InvalidRates)
        }
    }

    pub fn product(&self) -> f64 {
        self.eta_a * self.eta_w
    }
}

/// Sign class of the conserved quantity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Regime {
    Upstream,
    Balanced,
    Downstream,
}

impl Regime {
    pub fn classify(delta: f64, eps: f64) -> Regime {
        if delta > eps {
            Regime::Upstream
        } else if delta < -eps {
            Regime::Downstream
        } else {
            Regime::Balanced
        }
    }
}
