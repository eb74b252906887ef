//! Scalar diagnostics shared by the experiments.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{mismatch, Error, Result};
use crate::linalg::{frobenius_inner, DenseMatrix};

/// Half the summed squared error over all samples and outputs.
pub fn mse_loss(predictions: &DenseMatrix, targets: &DenseMatrix) -> Result<f64> {
    if predictions.shape() != targets.shape() {
        return Err(mismatch("mse_loss", format!("{:?} vs {:?}", predictions.shape(), targets.shape())));
    }
    Ok(0.5 * (predictions - targets).norm_squared())
}

/// Scale-invariant kernel dissimilarity `1 - <K1, K2> / (|K1| |K2|)`.
pub fn kernel_distance(k1: &DenseMatrix, k2: &DenseMatrix) -> Result<f64> {
    if k1.shape() != k2.shape() {
        return Err(mismatch("kernel_distance", format!("{:?} vs {:?}", k1.shape(), k2.shape())));
    }
    let n1 = k1.norm();
    let n2 = k2.norm();
    if !(n1 > 0.0 && n2 > 0.0) {
        return Err(Error::Domain("kernel distance needs non-zero kernels"));
    }
    Ok(1.0 - frobenius_inner(k1, k2) / (n1 * n2))
}

/// Euclidean distance between two flattened parameter vectors.
pub fn parameter_distance(theta1: &[f64], theta2: &[f64]) -> Result<f64> {
    if theta1.len() != theta2.len() {
        return Err(mismatch("parameter_distance", format!("{} vs {} parameters", theta1.len(), theta2.len())));
    }
    Ok(theta1.iter().zip(theta2).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
}

/// Fraction of units whose on/off state differs between two activation matrices.
pub fn hamming_distance_activations(c1: &DenseMatrix, c2: &DenseMatrix, gamma: f64) -> Result<f64> {
    if c1.shape() != c2.shape() {
        return Err(mismatch("hamming_distance_activations", format!("{:?} vs {:?}", c1.shape(), c2.shape())));
    }
    if c1.is_empty() {
        return Ok(0.0);
    }
    // anything closer to 1 than to gamma counts as active
    let mid = 0.5 * (1.0 + gamma);
    let flips = c1.iter().zip(c2.iter()).filter(|(a, b)| (**a > mid) != (**b > mid)).count();
    Ok(flips as f64 / c1.len() as f64)
}

/// Named scalar time series.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricSeries {
    pub name: String,
    times: Vec<f64>,
    values: Vec<f64>,
}

impl MetricSeries {
    pub fn new(name: impl Into<String>) -> Self {
        Self { name: name.into(), times: Vec::new(), values: Vec::new() }
    }

    pub fn from_parts(name: impl Into<String>, times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let mut s = Self::new(name);
        if times.len() != values.len() {
            return Err(mismatch("MetricSeries", format!("{} times, {} values", times.len(), values.len())));
        }
        for (t, v) in times.into_iter().zip(values) {
            s.push(t, v)?;
        }
        Ok(s)
    }

    pub fn push(&mut self, t: f64, value: f64) -> Result<()> {
        if !t.is_finite() || !value.is_finite() {
            return Err(Error::NonFinite("metric sample"));
        }
        if self.times.last().is_some_and(|&last| t < last) {
            return Err(Error::Domain("metric times must be sorted"));
        }
        self.times.push(t);
        self.values.push(value);
        Ok(())
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> Option<(f64, f64)> {
        Some((*self.times.last()?, *self.values.last()?))
    }

    /// First time at which the value crosses `level` (linear interpolation between samples).
    pub fn first_crossing(&self, level: f64) -> Option<f64> {
        let first = *self.values.first()?;
        let above = first > level;
        if first == level {
            return Some(self.times[0]);
        }
        for i in 1..self.len() {
            let v = self.values[i];
            if (v > level) != above || v == level {
                let (t0, t1, v0) = (self.times[i - 1], self.times[i], self.values[i - 1]);
                if v == v0 {
                    return Some(t1);
                }
                return Some(t0 + (t1 - t0) * (level - v0) / (v - v0));
            }
        }
        None
    }
}
