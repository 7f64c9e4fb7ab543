//! Simulation against population formulas. Seeds are fixed so the
//! standard-error bands are checked deterministically.

mod common;

use nalgebra::{DMatrix, DVector};
use proxy_anchor::estimators::{empirical_mspe, fit_anchor, LinearPredictor, Method};
use proxy_anchor::scm::{b_gamma, mspe_under_intervention, population_moments, w_gamma, InterventionSpec};
use proxy_anchor::simulate::{simulate, simulate_intervened, simulate_with, SimulationOptions};
use proxy_anchor::{moments_from_data, Dataset};

use common::*;

/// Mean and standard error of a per-row statistic.
fn mean_se(v: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = v.collect();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn check_entry(label: &str, rows: impl Iterator<Item = f64>, population: f64, bands: f64) {
    let (mean, se) = mean_se(rows);
    assert!(
        (mean - population).abs() <= bands * se,
        "{label}: sample {mean} vs population {population} (se {se})"
    );
}

#[test]
fn residuals_match_structural_loadings() {
    let mut r = rng(21);
    for _ in 0..10 {
        let (scm, proxies) = random_model(&mut r, 4, true);
        let opts = SimulationOptions { expose_noise: true, ..Default::default() };
        let data = simulate_with(&scm, Some(&proxies), 200, 5, None, &opts).unwrap();
        let gamma = random_vec(&mut r, scm.dims().d_x, 2.0);
        let w = w_gamma(&scm, &gamma).unwrap();
        let shocks = data.a.as_ref().unwrap() * scm.m_a().transpose() + data.eps.as_ref().unwrap();
        let expected = &shocks * &w;
        let actual = &data.y - &data.x * &gamma;
        assert!((expected - actual).amax() <= 1e-10);
    }
}

#[test]
fn sample_moments_within_five_standard_errors() {
    let mut r = rng(22);
    for k in 0..4 {
        let (scm, proxies) = random_model(&mut r, 3, true);
        let pop = population_moments(&scm, Some(&proxies)).unwrap();
        let data = simulate(&scm, Some(&proxies), 20_000, 100 + k).unwrap();
        let d = data.d_x();
        let col = |m: &DMatrix<f64>, j: usize| m.column(j).into_owned();
        for i in 0..d {
            for j in 0..d {
                let (xi, xj) = (col(&data.x, i), col(&data.x, j));
                check_entry("Sxx", xi.iter().zip(xj.iter()).map(|(a, b)| a * b), pop.sxx[(i, j)], 5.0);
            }
            let xi = col(&data.x, i);
            check_entry("Sxy", xi.iter().zip(data.y.iter()).map(|(a, b)| a * b), pop.sxy[i], 5.0);
        }
        let w = data.w.as_ref().unwrap();
        let pw = pop.proxy_w.as_ref().unwrap();
        for i in 0..d {
            for j in 0..w.ncols() {
                let (xi, wj) = (col(&data.x, i), col(w, j));
                check_entry("Sxw", xi.iter().zip(wj.iter()).map(|(a, b)| a * b), pw.sxv[(i, j)], 5.0);
            }
        }
        check_entry("Syy", data.y.iter().map(|y| y * y), pop.syy, 5.0);
    }
}

#[test]
fn intervened_mspe_within_three_standard_errors() {
    let mut r = rng(23);
    for k in 0..5 {
        let (scm, _) = random_model(&mut r, 3, true);
        let m = population_moments(&scm, None).unwrap();
        let predictor = fit_anchor(&m, 2.0).unwrap();
        let d_a = scm.dims().d_a;
        let spec = InterventionSpec::Random {
            mean: random_vec(&mut r, d_a, 1.5),
            cov: random_pd(&mut r, d_a, 0.1),
        };
        let test = simulate_intervened(&scm, None, &spec, 40_000, 200 + k).unwrap();
        let population = mspe_under_intervention(&scm, &predictor, &spec).unwrap();
        let resid = &test.y - &test.x * &predictor.gamma;
        check_entry("mspe", resid.iter().map(|e| e * e), population, 3.0);
        let direct = empirical_mspe(&predictor, &test).unwrap();
        assert!((direct - resid.map(|e| e * e).mean()).abs() <= 1e-9 * (1.0 + direct));
    }
}

#[test]
fn interventions_orthogonal_to_the_residual_loading_are_invisible() {
    let mut r = rng(24);
    let mut checked = 0;
    while checked < 10 {
        let (scm, _) = random_model(&mut r, 4, true);
        let d_a = scm.dims().d_a;
        if d_a < 2 {
            continue;
        }
        checked += 1;
        let gamma = random_vec(&mut r, scm.dims().d_x, 1.0);
        let b = b_gamma(&scm, &gamma).unwrap();
        let raw = random_vec(&mut r, d_a, 3.0);
        let nu = &raw - &b * (b.dot(&raw) / b.dot(&b));
        let shifted = simulate_intervened(&scm, None, &InterventionSpec::Deterministic(nu.clone()), 500, 9).unwrap();
        let base = simulate_intervened(&scm, None, &InterventionSpec::Deterministic(DVector::zeros(d_a)), 500, 9).unwrap();
        let resid = |d: &Dataset| &d.y - &d.x * &gamma;
        assert!((resid(&shifted) - resid(&base)).amax() <= 1e-10);

        let p = LinearPredictor::new(Method::Ols, gamma.clone(), 0.0);
        let far = mspe_under_intervention(&scm, &p, &InterventionSpec::Deterministic(nu)).unwrap();
        let zero = mspe_under_intervention(&scm, &p, &InterventionSpec::Deterministic(DVector::zeros(d_a))).unwrap();
        assert!((far - zero).abs() <= 1e-9 * (1.0 + zero));
    }
}

#[test]
fn centered_fit_intercept_is_the_mean_residual() {
    let mut r = rng(25);
    let (scm, proxies) = random_model(&mut r, 3, true);
    let mut data = simulate(&scm, Some(&proxies), 3000, 3).unwrap();
    for v in data.y.iter_mut() {
        *v += 4.0;
    }
    let centered = moments_from_data(&data, true).unwrap();
    let fit = fit_anchor(&centered, 3.0).unwrap();
    let resid = &data.y - &data.x * &fit.gamma;
    assert!((resid.mean() - fit.alpha).abs() <= 1e-9);
}
