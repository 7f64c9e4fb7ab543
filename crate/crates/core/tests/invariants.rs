//! Property tests over random structural models.

mod common;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;
use proxy_anchor::estimators::{fit_anchor, fit_ols, fit_par, fit_ptar, fit_tar, fit_xpar, FitSpec, LinearPredictor, Method};
use proxy_anchor::identifiability::{implied_covariance, theta_from_rho, ObservedCovariance3};
use proxy_anchor::robustness::{build_set, omega_w_population, psd_leq, worst_case_mspe, SetKind};
use proxy_anchor::scm::{mspe_under_intervention, population_moments, InterventionSpec, ProxyModel};

use common::*;

fn config() -> ProptestConfig {
    ProptestConfig { cases: 64, ..ProptestConfig::default() }
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn fitted_coefficients_minimize_their_objective(seed in any::<u64>(), lambda in 0.0f64..20.0, step in 1e-3f64..0.5) {
        let mut r = rng(seed);
        let (scm, proxies) = random_model(&mut r, 4, true);
        let m = population_moments(&scm, Some(&proxies)).unwrap();
        for spec in [FitSpec::Ols, FitSpec::Anchor { lambda }, FitSpec::Par { lambda }, FitSpec::Xpar { lambda }] {
            let fit = spec.fit(&m).unwrap();
            let at = spec.objective(&m, &fit.gamma, 0.0).unwrap();
            let delta = random_vec(&mut r, m.d_x(), step);
            let away = spec.objective(&m, &(&fit.gamma + delta), 0.0).unwrap();
            prop_assert!(at <= away + 1e-9 * (1.0 + at.abs()));
        }
    }

    #[test]
    fn zero_penalty_is_least_squares(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (scm, proxies) = random_model(&mut r, 4, true);
        let m = population_moments(&scm, Some(&proxies)).unwrap();
        let ols = fit_ols(&m).unwrap().gamma;
        for g in [fit_anchor(&m, 0.0), fit_par(&m, 0.0), fit_xpar(&m, 0.0)] {
            prop_assert!((g.unwrap().gamma - &ols).amax() <= 1e-9 * (1.0 + ols.amax()));
        }
    }

    #[test]
    fn cross_proxy_fit_is_symmetric_in_the_proxies(seed in any::<u64>(), lambda in -0.5f64..10.0) {
        let mut r = rng(seed);
        let (scm, proxies) = random_model(&mut r, 3, true);
        let m = population_moments(&scm, Some(&proxies)).unwrap();
        let a = fit_xpar(&m, lambda).unwrap().gamma;
        let b = fit_xpar(&m.swap_proxies().unwrap(), lambda).unwrap().gamma;
        prop_assert!((a - b).amax() <= 1e-9);
    }

    #[test]
    fn robustness_sets_are_nested(seed in any::<u64>(), lambda in 0.0f64..50.0) {
        let mut r = rng(seed);
        let (scm, proxies) = random_model(&mut r, 4, true);
        let omega = omega_w_population(scm.sigma_a(), &proxies).unwrap();
        prop_assert!(psd_leq(&omega, scm.sigma_a(), None).unwrap());
        let ols = build_set(SetKind::Ols, scm.sigma_a(), lambda, None).unwrap();
        let w = build_set(SetKind::Par, scm.sigma_a(), lambda, Some(&omega)).unwrap();
        let a = build_set(SetKind::Ar, scm.sigma_a(), lambda, None).unwrap();
        prop_assert!(ols.is_subset_of(&w).unwrap());
        prop_assert!(w.is_subset_of(&a).unwrap());
    }

    #[test]
    fn worst_case_dominates_every_admissible_shift(seed in any::<u64>(), lambda in 0.0f64..10.0) {
        let mut r = rng(seed);
        let (scm, proxies) = random_model(&mut r, 3, true);
        let omega = omega_w_population(scm.sigma_a(), &proxies).unwrap();
        let set = build_set(SetKind::Par, scm.sigma_a(), lambda, Some(&omega)).unwrap();
        let gamma = random_vec(&mut r, scm.dims().d_x, 2.0);
        let p = LinearPredictor::new(Method::Par, gamma, 0.0);
        let wc = worst_case_mspe(&scm, &p, &set).unwrap();
        // random interventions with second moment t * S, t in (0, 1]
        let d_a = scm.dims().d_a;
        let t: f64 = r.random_range(0.01..1.0);
        let mean = DVector::zeros(d_a);
        let spec = InterventionSpec::Random { mean, cov: &set.bound * t };
        let v = mspe_under_intervention(&scm, &p, &spec).unwrap();
        prop_assert!(v <= wc.value * (1.0 + 1e-10));
    }

    #[test]
    fn exact_proxy_reduces_targeted_fit_to_the_anchor(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (scm, _) = random_model(&mut r, 3, true);
        let d_a = scm.dims().d_a;
        let exact = ProxyModel::single(DMatrix::identity(d_a, d_a), DMatrix::zeros(d_a, d_a)).unwrap();
        let m = population_moments(&scm, Some(&exact)).unwrap();
        let mean = random_vec(&mut r, d_a, 2.0);
        let cov = scm.sigma_a() + random_pd(&mut r, d_a, 0.0);
        let tar = fit_tar(&m, &mean, &cov).unwrap();
        let ptar = fit_ptar(&m, &mean, &cov).unwrap();
        prop_assert!((&tar.gamma - &ptar.gamma).amax() <= 1e-8);
        prop_assert!((tar.alpha - ptar.alpha).abs() <= 1e-8);
    }

    #[test]
    fn predictor_json_round_trip(seed in any::<u64>(), lambda in 0.0f64..10.0) {
        let mut r = rng(seed);
        let (scm, proxies) = random_model(&mut r, 4, true);
        let m = population_moments(&scm, Some(&proxies)).unwrap();
        let p = fit_par(&m, lambda).unwrap();
        let back = LinearPredictor::from_json(&p.to_json().unwrap()).unwrap();
        prop_assert_eq!(p, back);
    }

    #[test]
    fn family_members_reproduce_the_observed_covariance(
        bx in 0.3f64..2.0, by in -1.0f64..1.0, alpha in -1.0f64..1.0, sx in 0.2f64..2.0, sy in 0.2f64..2.0,
        beta_w in 0.5f64..2.0, sw in 0.1f64..2.0, rho in 0.05f64..1.0,
    ) {
        // a concrete one-dimensional model yields Sigma; every rho in the
        // feasible set must map back onto the same Sigma
        let c_ww = beta_w * beta_w + sw;
        let c_xw = bx * beta_w;
        let c_xx = bx * bx + sx;
        let c_xy = alpha * c_xx + by * bx;
        let c_yw = (alpha * bx + by) * beta_w;
        let c_yy = alpha * alpha * c_xx + 2.0 * alpha * by * bx + by * by + sy;
        let sigma = ObservedCovariance3::from_matrix(&[[c_xx, c_xy, c_xw], [c_xy, c_yy, c_yw], [c_xw, c_yw, c_ww]]).unwrap();
        if let Ok(theta) = theta_from_rho(&sigma, rho) {
            prop_assert!(implied_covariance(&theta).max_abs_diff(&sigma) <= 1e-9 * (1.0 + c_yy));
        }
        let truth = theta_from_rho(&sigma, beta_w * beta_w / c_ww).unwrap();
        prop_assert!((truth.alpha - alpha).abs() <= 1e-8 * (1.0 + c_yy));
        prop_assert!((truth.beta_x - bx).abs() <= 1e-8 * (1.0 + c_xx));
    }
}
