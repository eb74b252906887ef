use super::*;
use crate::data::fixtures;
use crate::linalg::{null_space, residual_outside, RANK_TOL};
use crate::ode::{integrate_rk45, uniform_times, OdeProblem};
use approx::assert_relative_eq;
use proptest::prelude::*;

fn v(xs: &[f64]) -> DenseVector {
    DenseVector::from_column_slice(xs)
}

fn whitened(beta_star: &DenseVector) -> Dataset {
    Dataset::whitened(&DenseMatrix::from_column_slice(beta_star.len(), 1, beta_star.as_slice()))
}

fn integrate(state: &SingleNeuronState, data: &Dataset, times: Vec<f64>, rtol: f64) -> Vec<SingleNeuronState> {
    let rates = state.rates;
    let t1 = *times.last().unwrap();
    let p = OdeProblem::new(|_, y: &[f64], dy: &mut [f64]| flat_field(data, rates, y, dy), state.to_flat(), (0.0, t1))
        .tolerances(rtol, rtol * 1e-3)
        .record_at(times);
    integrate_rk45(p)
        .unwrap()
        .states
        .iter()
        .map(|s| SingleNeuronState::from_flat(s, rates).unwrap())
        .collect()
}

#[test]
fn conserved_delta_examples() {
    assert_eq!(conserved_delta(&SingleNeuronState::unit(1.0, v(&[1.0, 0.0]))), 0.0);
    assert_eq!(conserved_delta(&SingleNeuronState::unit(2.0, v(&[1.0, 0.0]))), 3.0);
    let s = SingleNeuronState::new(1.0, v(&[0.0, 1.0]), Rates::new(0.5, 2.0).unwrap()).unwrap();
    assert_eq!(conserved_delta(&s), 1.5);
}

#[test]
fn field_examples() {
    let f = fixtures::whitened();
    let (a_dot, w_dot) = gradient_flow_field(&SingleNeuronState::unit(1.0, v(&[1.0, 0.0])), &f.data).unwrap();
    assert_relative_eq!(a_dot, -1.0);
    assert_relative_eq!(w_dot, v(&[-1.0, 1.0]));

    let (a_dot, w_dot) = gradient_flow_field(&SingleNeuronState::unit(1.0, v(&[0.0, 1.0])), &f.data).unwrap();
    assert_eq!(a_dot, 0.0);
    assert_eq!(w_dot.norm(), 0.0);

    // a = 0 with w orthogonal to X^T y is a saddle
    let (a_dot, w_dot) = gradient_flow_field(&SingleNeuronState::unit(0.0, v(&[2.0, 0.0])), &f.data).unwrap();
    assert_eq!(a_dot, 0.0);
    assert_eq!(w_dot.norm(), 0.0);

    assert!(gradient_flow_field(&SingleNeuronState::unit(1.0, v(&[1.0, 0.0, 0.0])), &f.data).is_err());
}

#[test]
fn mu_phi_field_examples() {
    let (m, p) = mu_phi_field(HyperbolicSpherical { mu: 1.0, phi: 1.0 }, 0.3, 1.0, Rates::UNIT).unwrap();
    assert_eq!((m, p), (0.0, 0.0));
    let (_, p) = mu_phi_field(HyperbolicSpherical { mu: 0.4, phi: -1.0 }, 0.3, 1.0, Rates::UNIT).unwrap();
    assert_eq!(p, 0.0);
    let (m, p) = mu_phi_field(HyperbolicSpherical { mu: 0.0, phi: 0.5 }, -1.0, 1.0, Rates::UNIT).unwrap();
    assert_relative_eq!(m, 0.5);
    assert_eq!(p, 0.0);
    assert!(matches!(
        mu_phi_field(HyperbolicSpherical { mu: 0.0, phi: 0.5 }, 1.0, 1.0, Rates::UNIT),
        Err(Error::SingularCoordinates)
    ));
}

#[test]
fn mu_phi_field_matches_parameter_flow() {
    let beta_star = v(&[0.3, -1.2, 0.5]);
    let data = whitened(&beta_star);
    let rates = Rates::new(1.7, 0.6).unwrap();
    let s = SingleNeuronState::new(-0.7, v(&[0.2, 0.9, -0.4]), rates).unwrap();
    let c = mu_phi(&s, &beta_star);
    let (mu_dot, phi_dot) = mu_phi_field(c, conserved_delta(&s), beta_star.norm(), rates).unwrap();
    let h = 1e-6;
    let (a_dot, w_dot) = gradient_flow_field(&s, &data).unwrap();
    let fwd = SingleNeuronState::new(s.a + h * a_dot, &s.w + &w_dot * h, rates).unwrap();
    let bwd = SingleNeuronState::new(s.a - h * a_dot, &s.w - &w_dot * h, rates).unwrap();
    let (cf, cb) = (mu_phi(&fwd, &beta_star), mu_phi(&bwd, &beta_star));
    assert!((mu_dot - (cf.mu - cb.mu) / (2.0 * h)).abs() < 1e-7);
    assert!((phi_dot - (cf.phi - cb.phi) / (2.0 * h)).abs() < 1e-7);
}

#[test]
fn balanced_closed_form_matches_reference() {
    let reference = [(0.5, 0.5059338421054052, 0.669325164561134), (1.0, 0.6287432443382819, 0.8641538087731907), (5.0, 0.9993777147574247, 0.999951108963144)];
    for (t, mu, phi) in reference {
        let c = exact_balanced(0.5, 0.3, 1.0, t).unwrap();
        assert!((c.mu - mu).abs() < 1e-10, "t={t}: {} vs {mu}", c.mu);
        assert!((c.phi - phi).abs() < 1e-10);
    }
    let c0 = exact_balanced(0.5, 0.3, 1.0, 0.0).unwrap();
    assert_relative_eq!(c0.mu, 0.5, epsilon = 1e-14);
    assert_relative_eq!(c0.phi, 0.3, epsilon = 1e-14);
    assert!((exact_balanced(0.2, 0.0, 1.0, 40.0).unwrap().phi - 1.0).abs() < 1e-12);
    assert!(matches!(exact_balanced(0.5, -1.0, 1.0, 1.0), Err(Error::SaddleBound)));
}

#[test]
fn balanced_closed_form_non_unit_teacher() {
    let beta_star = v(&[2.5, 0.0]);
    let data = whitened(&beta_star);
    let s = SingleNeuronState::unit(0.6, v(&[0.6 * 0.2, 0.6 * (1.0f64 - 0.04).sqrt()]));
    let times = uniform_times(0.0, 6.0, 13);
    let states = integrate(&s, &data, times.clone(), 1e-10);
    for (t, st) in times.iter().zip(states) {
        let num = mu_phi(&st, &beta_star);
        let c = exact_balanced(0.36, 0.2, 2.5, *t).unwrap();
        assert!((c.mu - num.mu).abs() < 1e-7 && (c.phi - num.phi).abs() < 1e-7, "t={t}");
    }
}

#[test]
fn balanced_mirror_and_logistic() {
    let c = exact_balanced(-0.5, -0.3, 1.0, 1.0).unwrap();
    let m = exact_balanced(0.5, 0.3, 1.0, 1.0).unwrap();
    assert_eq!((c.mu, c.phi), (-m.mu, -m.phi));
    let l = exact_balanced(0.1, 1.0, 2.0, 0.5).unwrap();
    assert_relative_eq!(l.mu, 2.0 / (1.0 + 19.0 * (-2.0f64).exp()), epsilon = 1e-14);
}

#[test]
fn upstream_closed_form_matches_reference() {
    let beta_star = v(&[1.0, 0.0]);
    let s = SingleNeuronState::unit(2.01f64.sqrt(), v(&[0.1, 0.0]));
    for (t, mu) in [(1.0, 0.9240224378662892), (5.0, 0.9999990364935388)] {
        let (_, _, c) = exact_upstream(&s, &beta_star, t).unwrap();
        assert!((c.mu - mu).abs() < 1e-10);
        assert!((c.phi - 1.0).abs() < 1e-12);
    }
    let s = SingleNeuronState::unit(2.09f64.sqrt(), v(&[0.3 * 2.0f64.cos(), 0.3 * 2.0f64.sin()]));
    for (t, mu, phi) in [(1.0, 0.8859443353784171, 0.998573837477357), (5.0, 0.9999985020741158, 0.9999999999949835)] {
        let (_, _, c) = exact_upstream(&s, &beta_star, t).unwrap();
        assert!((c.mu - mu).abs() < 1e-10 && (c.phi - phi).abs() < 1e-10, "t={t}");
    }
    let (nu, a, _) = exact_upstream(&s, &beta_star, 0.0).unwrap();
    assert_relative_eq!(nu, s.w.dot(&beta_star) / s.a, epsilon = 1e-14);
    assert_relative_eq!(a, s.a, epsilon = 1e-14);
    // long-time limit is the stable Riccati root
    let (nu, _, _) = exact_upstream(&s, &beta_star, 60.0).unwrap();
    let delta = conserved_delta(&s);
    let r = 0.5 * (delta * delta + 4.0f64).sqrt();
    assert_relative_eq!(nu, -delta / 2.0 + r, epsilon = 1e-12);
    assert!(exact_upstream(&SingleNeuronState::unit(0.0, v(&[1.0, 0.0])), &beta_star, 1.0).is_err());
}

#[test]
fn downstream_closed_form_matches_reference() {
    let beta_star = v(&[1.0, 0.0]);
    let th = 2.0 * core::f64::consts::PI / 3.0;
    let r = 2.01f64.sqrt();
    let s = SingleNeuronState::unit(0.1, v(&[r * th.cos(), r * th.sin()]));
    let reference = [
        (1.0, -0.45532909599700394, -0.5801443849008323),
        (5.0, -0.9514800635823243, -0.9650248698308153),
        (20.0, -0.9999997906777095, -0.9999998519867801),
    ];
    for (t, mu, phi) in reference {
        let (_, _, c) = exact_downstream(&s, &beta_star, t).unwrap();
        assert!((c.mu - mu).abs() < 1e-10 && (c.phi - phi).abs() < 1e-10, "t={t}: {c:?}");
    }
    let (ups, omega, _) = exact_downstream(&s, &beta_star, 0.0).unwrap();
    assert_relative_eq!(ups, s.a / s.w.dot(&beta_star), epsilon = 1e-14);
    assert_relative_eq!(omega, s.w.dot(&beta_star), epsilon = 1e-14);
    let (ups, _, _) = exact_downstream(&s, &beta_star, 80.0).unwrap();
    let delta = -2.0;
    assert_relative_eq!(ups, (delta + (delta * delta + 4.0f64).sqrt()) / 2.0, epsilon = 1e-9);
}

#[test]
fn general_rates_match_reference() {
    let beta_star = v(&[0.6, 0.9]);
    let s = SingleNeuronState::new(0.8, v(&[0.4, -0.7]), Rates::new(2.0, 0.5).unwrap()).unwrap();
    for (t, mu, phi) in [(0.7, 0.08141471568734254, -0.27609154914037926), (3.0, -0.47254312075512017, -0.6328309613482057)] {
        let e = exact_solution(&s, &beta_star, t).unwrap();
        assert!((e.coords.mu - mu).abs() < 1e-10 && (e.coords.phi - phi).abs() < 1e-10, "t={t}: {e:?}");
    }
}

#[test]
fn exact_solution_state_fields() {
    let beta_star = v(&[1.0, 0.0]);
    let s = SingleNeuronState::unit(1.2, v(&[0.3, 0.4]));
    let e = exact_solution(&s, &beta_star, 0.0).unwrap();
    assert_eq!(e.chart, Chart::Nu);
    assert_relative_eq!(e.a, 1.2, epsilon = 1e-14);
    assert_relative_eq!(e.omega, 0.3, epsilon = 1e-14);
    assert_relative_eq!(e.nu.unwrap() * e.upsilon.unwrap(), 1.0, epsilon = 1e-14);
    assert!(matches!(exact_solution(&SingleNeuronState::unit(0.0, v(&[0.0, 1.0])), &beta_star, 1.0), Err(Error::SaddleBound)));
}

#[test]
fn recover_params_examples() {
    let bs = v(&[1.0, 0.0]);
    let w0 = v(&[0.0, 1.0]);
    let s = recover_params(HyperbolicSpherical { mu: 0.0, phi: 0.5 }, 0.0, &w0, &bs).unwrap();
    assert_eq!(s.a, 0.0);
    assert_eq!(s.w.norm(), 0.0);
    let s = recover_params(HyperbolicSpherical { mu: 2.0, phi: 0.5 }, 0.0, &w0, &bs).unwrap();
    assert_relative_eq!(s.a, 2.0f64.sqrt(), epsilon = 1e-14);
    assert_relative_eq!(s.w.norm(), 2.0f64.sqrt(), epsilon = 1e-14);
    assert!(matches!(
        recover_params(HyperbolicSpherical { mu: 2.0, phi: 0.5 }, 0.0, &v(&[3.0, 0.0]), &bs),
        Err(Error::InconsistentCoordinates(_))
    ));
}

#[test]
fn basin_examples() {
    let bs = v(&[1.0, 0.0]);
    let up = SingleNeuronState::unit(0.5, v(&[0.0, 0.0]));
    assert!(conserved_delta(&up) > 0.0);
    assert_eq!(classify_basin(&up, &bs), Basin::PositiveBranch);
    let down = SingleNeuronState::unit(0.0, v(&[1.0, 0.0]));
    assert_eq!(classify_basin(&down, &bs), Basin::PositiveBranch);
    // on the separating hyperplane: omega = -(a/2)(delta + sqrt(delta^2 + 4))
    // with delta = a^2 - |w|^2 = -1, omega = w1, pick a = 1, |w|^2 = 2
    let lift = -1.0 + 5.0f64.sqrt();
    let w1 = -0.5 * lift;
    let w2 = (2.0 - w1 * w1).sqrt();
    let on = SingleNeuronState::unit(1.0, v(&[w1, w2]));
    assert_relative_eq!(conserved_delta(&on), -1.0, epsilon = 1e-14);
    assert_eq!(classify_basin(&on, &bs), Basin::SaddleBound);
}

#[test]
fn preconditioner_examples() {
    let m = preconditioner_m(&v(&[1.0, 0.0, 0.0]), 0.0, Rates::UNIT).unwrap();
    assert_relative_eq!(m, DenseMatrix::from_diagonal(&v(&[2.0, 1.0, 1.0])), epsilon = 1e-14);
    let big = preconditioner_m(&v(&[0.3, -0.2]), 1e9, Rates::UNIT).unwrap() / 1e9;
    assert!((big - DenseMatrix::identity(2, 2)).amax() < 1e-9);
    assert!(matches!(preconditioner_m(&v(&[0.0, 0.0]), 1.0, Rates::UNIT), Err(Error::DegenerateBeta { .. })));
}

#[test]
fn beta_field_examples() {
    let f = fixtures::whitened();
    let bs = DenseMatrix::from_column_slice(2, 1, f.beta_star.as_slice());
    assert_eq!(beta_field(&bs.column(0).into_owned(), 0.7, &f.data, Rates::UNIT).unwrap().norm(), 0.0);
    let half = &f.beta_star * 0.5;
    let bd = beta_field(&half, 0.0, &f.data, Rates::UNIT).unwrap();
    assert!(bd[0].abs() < 1e-15 && bd[1] > 0.0);
}

#[test]
fn ntk_examples() {
    let x = DenseMatrix::from_row_slice(2, 2, &[1.0, 2.0, -0.5, 0.3]);
    let k = ntk_matrix(&SingleNeuronState::unit(1.0, v(&[0.0, 0.0])), &x).unwrap();
    assert_relative_eq!(k, &x * x.transpose(), epsilon = 1e-14);
    let k = ntk_matrix(&SingleNeuronState::unit(2.0, v(&[3.0])), &DenseMatrix::from_element(1, 1, 1.0)).unwrap();
    assert_relative_eq!(k[(0, 0)], 13.0);
}

#[test]
fn ntk_rate_terms_examples() {
    let beta = v(&[0.6, -0.8, 0.5]);
    let (_, dir) = ntk_rate_terms(&beta, &(&beta * 0.3), 0.4, Rates::UNIT).unwrap();
    assert!(dir.amax() < 1e-14);
    let perp = v(&[0.8, 0.6, 0.0]);
    let (mag, _) = ntk_rate_terms(&beta, &perp, 0.4, Rates::UNIT).unwrap();
    assert!(mag.amax() < 1e-14);
}

#[test]
fn implicit_bias_examples() {
    let b = v(&[0.3, 0.4]);
    assert_relative_eq!(potential(&b, 0.0), 2.0 * 2.0f64.sqrt() / 3.0 * 0.5f64.powf(1.5), epsilon = 1e-14);
    assert_relative_eq!(potential(&v(&[0.0, 0.0]), 1.0), -(2.0f64.sqrt()) / 3.0, epsilon = 1e-14);
    assert!(implicit_bias_objective(&b, &v(&[0.0, 0.0]), 1.0).is_err());
}

#[test]
fn interpolator_with_orthogonal_start_is_min_norm() {
    let f = fixtures::low_rank();
    let nv = fixtures::low_rank_null_direction();
    let b = exact_interpolator_1d_null(&f.beta_star, &nv, &f.beta_star, 0.7).unwrap();
    assert_relative_eq!(b, f.beta_star, epsilon = 1e-14);
}

#[test]
fn interpolator_solves_kkt_and_matches_minimizer() {
    let f = fixtures::low_rank();
    let nv = fixtures::low_rank_null_direction();
    let row = crate::linalg::range_basis(&f.data.x().transpose(), RANK_TOL).unwrap();
    for delta in [-5.0, -2.0, 0.0, 2.0, 5.0] {
        let b = exact_interpolator_1d_null(&f.beta_star, &nv, &f.beta0, delta).unwrap();
        let g = implicit_bias_gradient(&b, &f.beta0, delta).unwrap();
        assert!(residual_outside(&row, &g) < 1e-10, "delta = {delta}");
        let m = implicit_bias_minimizer(&f.data, &f.beta0, delta).unwrap();
        assert!((m - &b).norm() < 1e-9, "delta = {delta}");
    }
    assert_eq!(null_space(f.data.x(), RANK_TOL).unwrap().ncols(), 1);
}

#[test]
fn flow_conserves_delta() {
    let beta_star = v(&[0.0, 1.0]);
    let data = whitened(&beta_star);
    let s = SingleNeuronState::unit(1.0, v(&[1.0, 0.0]));
    let times = uniform_times(0.0, 20.0, 201);
    for st in integrate(&s, &data, times, 1e-6) {
        assert!((conserved_delta(&st) - conserved_delta(&s)).abs() < 1e-6);
    }
}

fn arb_state(d: usize) -> impl Strategy<Value = SingleNeuronState> {
    (-2.0f64..2.0, proptest::collection::vec(-2.0f64..2.0, d), 0.3f64..3.0, 0.3f64..3.0)
        .prop_map(|(a, w, ea, ew)| SingleNeuronState::new(a, v(&w), Rates::new(ea, ew).unwrap()).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn m_matches_parameter_form(s in arb_state(3)) {
        prop_assume!(s.a.abs() > 1e-3 && s.w.norm() > 1e-3);
        let m = preconditioner_m(&s.beta(), conserved_delta(&s), s.rates).unwrap();
        let d = s.d();
        let direct = DenseMatrix::identity(d, d) * (s.rates.eta_w * s.a * s.a) + &s.w * s.w.transpose() * s.rates.eta_a;
        prop_assert!((m.clone() - &direct).amax() < 1e-10 * direct.amax().max(1.0));
        let inv = preconditioner_m_inverse(&s.beta(), conserved_delta(&s), s.rates).unwrap();
        prop_assert!((m * inv - DenseMatrix::identity(d, d)).amax() < 1e-8);
    }

    #[test]
    fn m_spectrum(s in arb_state(4)) {
        prop_assume!(s.a.abs() > 1e-3 && s.w.norm() > 1e-3);
        let delta = conserved_delta(&s);
        let beta = s.beta();
        let m = preconditioner_m(&beta, delta, s.rates).unwrap();
        let (vals, _) = crate::linalg::symmetric_eigen(&m).unwrap();
        let k = (delta * delta + 4.0 * s.rates.product() * beta.norm_squared()).sqrt();
        let tol = 1e-10 * k.max(1.0);
        for i in 0..3 { prop_assert!((vals[i] - (k + delta) / 2.0).abs() < tol); }
        prop_assert!((vals[3] - k).abs() < tol);
    }

    #[test]
    fn beta_field_is_product_rule(s in arb_state(3), seed in 0u64..1000) {
        prop_assume!(s.a.abs() > 1e-3 && s.w.norm() > 1e-3);
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let x = crate::linalg::random_gaussian(5, 3, &mut rng);
        let y = crate::linalg::random_gaussian(5, 1, &mut rng);
        let data = Dataset::new(x, y).unwrap();
        let (a_dot, w_dot) = gradient_flow_field(&s, &data).unwrap();
        let direct = &w_dot * s.a + &s.w * a_dot;
        let bf = beta_field(&s.beta(), conserved_delta(&s), &data, s.rates).unwrap();
        prop_assert!((bf - &direct).amax() < 1e-10 * direct.amax().max(1.0));
    }

    #[test]
    fn ntk_matches_jacobian(s in arb_state(3), seed in 0u64..1000) {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let x = crate::linalg::random_gaussian(4, 3, &mut rng);
        // per-sample gradients: df/da = w.x, df/dw = a x
        let mut jac = DenseMatrix::zeros(4, 4);
        for i in 0..4 {
            let xi = x.row(i).transpose();
            jac[(i, 0)] = s.w.dot(&xi) * s.rates.eta_a.sqrt();
            for j in 0..3 { jac[(i, j + 1)] = s.a * xi[j] * s.rates.eta_w.sqrt(); }
        }
        let oracle = &jac * jac.transpose();
        let k = ntk_matrix(&s, &x).unwrap();
        prop_assert!((k - &oracle).amax() < 1e-10 * oracle.amax().max(1.0));
    }

    #[test]
    fn rate_terms_sum_to_derivative(s in arb_state(3), dir in proptest::collection::vec(-1.0f64..1.0, 3)) {
        prop_assume!(s.a.abs() > 0.1 && s.w.norm() > 0.1);
        let beta = s.beta();
        let bd = v(&dir);
        let delta = conserved_delta(&s);
        let (mag, dirm) = ntk_rate_terms(&beta, &bd, delta, s.rates).unwrap();
        let h = 1e-6;
        let fd = (preconditioner_m(&(&beta + &bd * h), delta, s.rates).unwrap()
            - preconditioner_m(&(&beta - &bd * h), delta, s.rates).unwrap()) / (2.0 * h);
        prop_assert!((mag + dirm - fd).amax() < 1e-5);
    }

    #[test]
    fn recover_roundtrip(a in -2.0f64..2.0, w in proptest::collection::vec(-2.0f64..2.0, 3)) {
        let s = SingleNeuronState::unit(a, v(&w));
        prop_assume!(a.abs() > 1e-3 && s.w.norm() > 1e-3);
        let bs = v(&[0.3, -0.5, 1.1]);
        let c = mu_phi(&s, &bs);
        let r = recover_params(c, conserved_delta(&s), &s.w, &bs).unwrap();
        prop_assert!((r.a - s.a).abs() < 1e-10);
        prop_assert!((r.w - &s.w).amax() < 1e-10);
    }

    #[test]
    fn rescaling_to_unit_rates(s in arb_state(2), t in 0.0f64..4.0) {
        let bs = v(&[0.8, -0.3]);
        prop_assume!(classify_basin(&s, &bs) != Basin::SaddleBound && s.a.abs() > 1e-3);
        let p = s.rates.product();
        let unit = SingleNeuronState::unit(s.a / s.rates.eta_a.sqrt(), &s.w / s.rates.eta_w.sqrt());
        let e = exact_solution(&s, &bs, t);
        let u = exact_solution(&unit, &(&bs / p.sqrt()), p * t);
        if let (Ok(e), Ok(u)) = (e, u) {
            prop_assert!((e.coords.mu - u.coords.mu * p.sqrt()).abs() < 1e-9 * (1.0 + e.coords.mu.abs()));
            prop_assert!((e.coords.phi - u.coords.phi).abs() < 1e-9);
        }
    }

    #[test]
    fn hessian_matches_finite_differences(b in proptest::collection::vec(-2.0f64..2.0, 3), delta in -3.0f64..3.0) {
        let beta = v(&b);
        prop_assume!(beta.norm() > 0.2);
        let hess = implicit_bias_hessian(&beta, delta).unwrap();
        let h = 1e-4;
        for i in 0..3 {
            for j in 0..3 {
                let e = |di: f64, dj: f64| {
                    let mut x = beta.clone();
                    x[i] += di;
                    x[j] += dj;
                    potential(&x, delta)
                };
                let fd = (e(h, h) - e(h, -h) - e(-h, h) + e(-h, -h)) / (4.0 * h * h);
                prop_assert!((fd - hess[(i, j)]).abs() < 1e-4, "{} vs {}", fd, hess[(i, j)]);
            }
        }
    }
}
