//! Properties of whole integrated trajectories, checked against the closed forms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use relscale_core::data::fixtures;
use relscale_core::linalg::{random_gaussian, random_unit_vector};
use relscale_core::ode::{integrate_rk45, uniform_times, OdeProblem};
use relscale_core::single_neuron::{self, Basin, SingleNeuronState};
use relscale_core::wide::{self, RegimeThresholds, WideLinearState, WideRegime};
use relscale_core::{deep, metrics, Dataset, DenseMatrix, DenseVector, Rates};

fn integrate<F: FnMut(f64, &[f64], &mut [f64])>(field: F, y0: Vec<f64>, times: Vec<f64>) -> Vec<Vec<f64>> {
    let t_end = *times.last().unwrap();
    integrate_rk45(OdeProblem::new(field, y0, (0.0, t_end)).tolerances(1e-10, 1e-12).record_at(times)).unwrap().states
}

fn whitened(beta_star: &DenseVector) -> Dataset {
    Dataset::whitened(&DenseMatrix::from_column_slice(beta_star.len(), 1, beta_star.as_slice()))
}

#[test]
fn basin_predicts_final_readout_sign() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut checked = 0;
    while checked < 100 {
        let beta_star = random_unit_vector(3, &mut rng) * rng.random_range(0.5..2.0);
        let s0 = SingleNeuronState::unit(rng.random_range(-1.5..1.5), random_unit_vector(3, &mut rng) * rng.random_range(0.05..1.5));
        let basin = single_neuron::classify_basin(&s0, &beta_star);
        // skip starts within 1e-6 of the separating surface
        let delta = single_neuron::conserved_delta(&s0);
        let lift = (delta * delta + 4.0 * beta_star.norm_squared()).sqrt() + delta;
        let margin = s0.w.dot(&beta_star) + 0.5 * s0.a * lift;
        if delta < 0.0 && margin.abs() < 1e-6 {
            continue;
        }
        let data = whitened(&beta_star);
        let end = integrate(|_, y, dy| single_neuron::flat_field(&data, Rates::UNIT, y, dy), s0.to_flat(), vec![20.0]);
        let a_end = end[0][0];
        let expected = if a_end > 0.0 { Basin::PositiveBranch } else { Basin::NegativeBranch };
        assert_eq!(basin, expected, "start {s0:?}, a(20) = {a_end}");
        checked += 1;
    }
}

#[test]
fn teacher_overlap_product_changes_sign_at_most_once() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let times = uniform_times(0.0, 20.0, 2001);
    for _ in 0..40 {
        let beta_star = random_unit_vector(2, &mut rng);
        let s0 = SingleNeuronState::unit(rng.random_range(-1.0..1.0), random_unit_vector(2, &mut rng) * rng.random_range(0.05..1.5));
        let data = whitened(&beta_star);
        let states = integrate(|_, y, dy| single_neuron::flat_field(&data, Rates::UNIT, y, dy), s0.to_flat(), times.clone());
        let products: Vec<f64> = states
            .iter()
            .map(|y| y[0] * DenseVector::from_column_slice(&y[1..]).dot(&beta_star))
            .filter(|p| p.abs() > 1e-12)
            .collect();
        let changes = products.windows(2).filter(|w| w[0].signum() != w[1].signum()).count();
        assert!(changes <= 1, "{changes} sign changes from {s0:?}");
    }
}

#[test]
fn low_rank_endpoints_agree_three_ways() {
    let fx = fixtures::low_rank();
    let v = fixtures::low_rank_null_direction();
    for delta in [-5.0, -2.0, 0.0, 2.0, 5.0] {
        let closed = single_neuron::exact_interpolator_1d_null(&fx.beta_star, &v, &fx.beta0, delta).unwrap();
        let minimizer = single_neuron::implicit_bias_minimizer(&fx.data, &fx.beta0, delta).unwrap();
        let s0 = SingleNeuronState::from_beta(&fx.beta0, delta, Rates::UNIT, true).unwrap();
        let end = integrate(|_, y, dy| single_neuron::flat_field(&fx.data, Rates::UNIT, y, dy), s0.to_flat(), vec![400.0]);
        let flowed = SingleNeuronState::from_flat(&end[0], Rates::UNIT).unwrap().beta();
        assert!((&closed - &minimizer).amax() < 1e-3, "delta {delta}: closed {closed} minimizer {minimizer}");
        assert!((&closed - &flowed).amax() < 1e-3, "delta {delta}: closed {closed} flow {flowed}");
        assert!((&minimizer - &flowed).amax() < 1e-3, "delta {delta}");
    }
}

#[test]
fn lazy_classification_keeps_kernel() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..5 {
        let (n, d, h) = (8, 3, 4);
        let x = random_gaussian(n, d, &mut rng);
        let teacher = random_gaussian(d, 1, &mut rng);
        let teacher_norm = teacher.norm();
        let data = Dataset::new(x.clone(), &x * teacher).unwrap();
        // readouts carry the large conserved quantity
        let w = random_gaussian(h, d, &mut rng) * 0.1;
        let delta = 2e3 * teacher_norm;
        let a = DenseMatrix::from_fn(h, 1, |k, _| {
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            sign * (delta + w.row(k).norm_squared()).sqrt()
        });
        let s0 = WideLinearState::new(w, a, Rates::UNIT).unwrap();
        let report = wide::classify_wide_regime(&s0.factors(), &data, RegimeThresholds::for_teacher(teacher_norm)).unwrap();
        assert_eq!(report.regime, WideRegime::Lazy);
        let end = integrate(|_, y, dy| wide::flat_field(&data, h, Rates::UNIT, y, dy), s0.to_flat(), vec![20.0]);
        let s1 = WideLinearState::from_flat(h, d, 1, &end[0], Rates::UNIT).unwrap();
        let k0 = wide::ntk_matrix_wide(&s0, &x).unwrap();
        let k1 = wide::ntk_matrix_wide(&s1, &x).unwrap();
        let distance = metrics::kernel_distance(&k0, &k1).unwrap();
        assert!(distance < 0.01, "kernel distance {distance}");
        assert!(data.loss(&s1.beta()).unwrap() < 1e-6 * data.loss(&s0.beta()).unwrap().max(1.0));
    }
}

#[test]
fn deep_endpoint_approaches_rich_bias_as_scale_vanishes() {
    let d = 3;
    let depth = 2;
    let x = DenseMatrix::from_row_slice(2, 3, &[1.0, 0.5, -0.3, 0.2, -1.0, 0.8]);
    let y = DenseMatrix::from_column_slice(2, 1, &[0.7, -0.4]);
    let data = Dataset::new(x, y).unwrap();
    let mut gaps = Vec::new();
    for alpha in [0.3, 0.1, 0.03] {
        let mut s0 = deep::isotropic_deep_init(d, depth, alpha, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        s0.perturb_readout(alpha, &mut rng);
        let beta0 = s0.beta();
        let horizon = 40.0 / alpha.powi(depth as i32);
        let end = integrate(|_, y, dy| deep::flat_field(&data, depth, y, dy), s0.to_flat(), vec![horizon]);
        let flowed = deep::DeepLinearState::from_flat(d, depth, &end[0]).unwrap().beta();
        let target = deep::deep_rich_bias_minimizer(&data, &beta0, depth).unwrap();
        gaps.push((flowed - target).norm());
    }
    assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2], "gaps {gaps:?}");
    assert!(gaps[2] < 1e-2, "gaps {gaps:?}");
}
