//! Teacher-student data and the symmetrized, rescaled student initialization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use relscale_core::linalg::{random_unit_vector, DenseMatrix, DenseVector};
use relscale_core::piecewise::PiecewiseState;
use relscale_core::{Dataset, Rates};

use crate::error::{LabError, LabResult};

const TEACHER_STREAM: u64 = 0;
const STUDENT_STREAM: u64 = 1;

/// Random stream for one role under a shared seed.
pub fn stream(seed: u64, role: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(role);
    rng
}

/// Bias-free ReLU teacher `sum_i a_i relu(w_i^T x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Teacher {
    pub w: DenseMatrix,
    pub a: DenseVector,
}

impl Teacher {
    pub fn forward(&self, x: &DenseMatrix) -> DenseVector {
        let pre = &self.w * x.transpose();
        pre.map(|z| z.max(0.0)).transpose() * &self.a
    }
}

fn sphere_rows<R: Rng + ?Sized>(rows: usize, d: usize, rng: &mut R) -> DenseMatrix {
    let mut m = DenseMatrix::zeros(rows, d);
    for i in 0..rows {
        m.set_row(i, &random_unit_vector(d, rng).transpose());
    }
    m
}

fn signs<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DenseVector {
    DenseVector::from_fn(n, |_, _| if rng.random_bool(0.5) { 1.0 } else { -1.0 })
}

/// Teacher with unit-sphere rows and random-sign readout; inputs on the sphere; noiseless labels.
pub fn teacher_student_dataset(d: usize, k: usize, n: usize, seed: u64) -> LabResult<(Dataset, Teacher)> {
    if k == 0 || d == 0 || n == 0 {
        return Err(LabError::Config("teacher needs d, k, n >= 1".into()));
    }
    let mut rng = stream(seed, TEACHER_STREAM);
    let teacher = Teacher { w: sphere_rows(k, d, &mut rng), a: signs(k, &mut rng) };
    let x = sphere_rows(n, d, &mut rng);
    let y = teacher.forward(&x);
    Ok((Dataset::scalar_targets(x, &y)?, teacher))
}

/// Student whose second half mirrors the first with flipped readout, so it outputs zero everywhere.
pub fn symmetrized_student_init(h: usize, d: usize, seed: u64) -> LabResult<PiecewiseState> {
    if h == 0 || !h.is_multiple_of(2) {
        return Err(LabError::Config(format!("symmetrized init needs an even width, got {h}")));
    }
    let mut rng = stream(seed, STUDENT_STREAM);
    let half = h / 2;
    let w_half = sphere_rows(half, d, &mut rng);
    let a_half = signs(half, &mut rng);
    let mut w = DenseMatrix::zeros(h, d);
    let mut a = DenseVector::zeros(h);
    for i in 0..half {
        w.set_row(i, &w_half.row(i));
        w.set_row(i + half, &w_half.row(i));
        a[i] = a_half[i];
        a[i + half] = -a_half[i];
    }
    Ok(PiecewiseState::new(w, a, 0.0, Rates::UNIT)?)
}

/// Relative layer scale `alpha` with `tau^2 (alpha^2 - alpha^-2) = delta`.
pub fn relative_scale(tau: f64, delta: f64) -> LabResult<f64> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(LabError::Config("tau must be positive".into()));
    }
    let t2 = tau * tau;
    // the root (delta + sqrt(delta^2 + 4 tau^4)) / (2 tau^2) cancels badly for delta << 0
    let disc = (delta * delta + 4.0 * t2 * t2).sqrt();
    let alpha_sq = if delta >= 0.0 { (delta + disc) / (2.0 * t2) } else { 2.0 * t2 / (disc - delta) };
    Ok(alpha_sq.sqrt())
}

/// Scales each first-layer row by `tau / alpha` and each readout by `tau alpha`.
pub fn rescale_tau_delta(state: &PiecewiseState, tau: f64, delta: f64) -> LabResult<PiecewiseState> {
    let alpha = relative_scale(tau, delta)?;
    Ok(PiecewiseState::new(&state.w * (tau / alpha), &state.a * (tau * alpha), state.gamma, state.rates)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_properties() {
        let (data, _) = teacher_student_dataset(5, 3, 40, 7).unwrap();
        for i in 0..data.n() {
            assert!((data.x().row(i).norm() - 1.0).abs() < 1e-12);
        }
        let (again, _) = teacher_student_dataset(5, 3, 40, 7).unwrap();
        assert_eq!(data, again);
        let (other, _) = teacher_student_dataset(5, 3, 40, 8).unwrap();
        assert_ne!(data, other);
    }

    #[test]
    fn single_relu_teacher_labels() {
        let teacher = Teacher { w: DenseMatrix::from_row_slice(1, 2, &[1.0, 0.0]), a: DenseVector::from_element(1, 1.0) };
        let mut rng = stream(3, 9);
        let x = sphere_rows(30, 2, &mut rng);
        let y = teacher.forward(&x);
        for i in 0..30 {
            assert_eq!(y[i], x[(i, 0)].max(0.0));
        }
    }

    #[test]
    fn symmetrized_student_is_silent_and_balanced() {
        let s = symmetrized_student_init(12, 4, 5).unwrap();
        let mut rng = stream(99, 0);
        let x = sphere_rows(100, 4, &mut rng);
        assert!(s.forward(&x).amax() < 1e-12);
        assert!(s.per_neuron_delta().amax() < 1e-12);
        assert_eq!(symmetrized_student_init(12, 4, 5).unwrap(), s);
        assert!(symmetrized_student_init(7, 4, 5).is_err());
    }

    #[test]
    fn rescale_examples() {
        let s = symmetrized_student_init(6, 3, 1).unwrap();
        let same = rescale_tau_delta(&s, 1.0, 0.0).unwrap();
        assert!((&same.w - &s.w).amax() < 1e-15 && (&same.a - &s.a).amax() < 1e-15);
        let alpha = relative_scale(0.1, 1.0).unwrap();
        let expected_sq = (1.0 + (1.0_f64 + 4e-4).sqrt()) / 0.02;
        assert!((alpha * alpha - expected_sq).abs() < 1e-9);
        assert!((alpha * alpha - 100.009999).abs() < 1e-5);
        for (tau, delta) in [(0.1, 1.0), (2.0, -1.0), (0.1, -1e3), (1.5, 0.3)] {
            let r = rescale_tau_delta(&s, tau, delta).unwrap();
            assert!(r.per_neuron_delta().iter().all(|&dk| (dk - delta).abs() < 1e-10), "tau={tau} delta={delta}");
            let mut rng = stream(4, 0);
            assert!(r.forward(&sphere_rows(50, 3, &mut rng)).amax() < 1e-12);
        }
        assert!(rescale_tau_delta(&s, 0.0, 1.0).is_err());
    }
}
