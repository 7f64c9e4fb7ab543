//! Runners for the four simulated experiments.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimators::{empirical_mspe, fit_anchor, fit_ols, fit_par, fit_tar, fit_xpar, LinearPredictor};
use crate::experiments::config::{ExperimentKind, ExperimentSetup};
use crate::experiments::results::{ResultRow, ResultTable};
use crate::linalg;
use crate::moments::moments_from_data;
use crate::robustness::estimated_vs_actual_from_moments;
use crate::scm::{mspe_under_intervention, noise_variance_for_svr, population_moments, InterventionSpec, LinearScm, ProxyModel};
use crate::simulate::{derive_seed, simulate, simulate_intervened};

/// Default penalty of the robustness and misspecification experiments.
pub const DEFAULT_LAMBDA: f64 = 5.0;
/// Default penalty of the causal/anti-causal experiment.
pub const CAUSAL_LAMBDA: f64 = 3.0;
/// Test intervention of the robustness experiment.
pub const ROBUSTNESS_NU: [f64; 3] = [-2.83, 0.35, 0.71];
pub const DEFAULT_ASSUMED_SVR: f64 = 0.4;

/// Runs `f` on a dedicated pool of `jobs` threads, or on the global pool.
pub fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match jobs {
        None => f(),
        Some(j) => rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build()
            .map_err(|e| Error::Config(format!("cannot start {j} worker threads: {e}")))?
            .install(f),
    }
}

/// Dispatches on the configured experiment kind.
pub fn run_experiment(setup: &ExperimentSetup) -> Result<ResultTable> {
    setup.config.validate()?;
    with_jobs(setup.config.jobs, || match setup.config.kind {
        ExperimentKind::Robustness => run_robustness_experiment(setup),
        ExperimentKind::MisspecifiedSvr => run_misspecification_experiment(setup),
        ExperimentKind::CausalAnticausal => run_causal_anticausal_experiment(setup),
        ExperimentKind::Targeted => run_targeted_experiment(setup),
        ExperimentKind::Custom => crate::experiments::pollution::run_custom_experiment(setup),
    })
}

struct RowTemplate<'a> {
    experiment: &'a str,
    n: Option<usize>,
    svr: Option<f64>,
    replicate: Option<usize>,
    seed: Option<u64>,
}

impl RowTemplate<'_> {
    fn row(&self, estimator: &str, lambda: Option<f64>, cell: &str, metric: &str, value: f64) -> ResultRow {
        ResultRow {
            experiment: self.experiment.to_string(),
            estimator: estimator.to_string(),
            replicate: self.replicate,
            n: self.n,
            svr: self.svr,
            lambda,
            cell: cell.to_string(),
            metric: metric.to_string(),
            value,
            seed: self.seed,
        }
    }
}

/// Isotropic proxies at `svr` keeping the loadings of `base` (identity when absent).
fn proxies_at_svr(d_a: usize, base: Option<&ProxyModel>, svr: f64, two: bool) -> Result<ProxyModel> {
    let s2 = noise_variance_for_svr(svr)?;
    let noise = DMatrix::identity(d_a, d_a) * s2;
    let bw = base.map(|p| p.beta_w.clone()).unwrap_or_else(|| DMatrix::identity(d_a, d_a));
    if two {
        let bz = base
            .and_then(|p| p.beta_z.clone())
            .unwrap_or_else(|| DMatrix::identity(d_a, d_a));
        ProxyModel::pair(bw, noise.clone(), bz, noise)
    } else {
        ProxyModel::single(bw, noise)
    }
}

/// One `(n, replicate)` cell for every replicate and sample size, in a fixed order.
fn replicate_grid(sizes: &[usize], m: usize) -> Vec<(usize, usize, usize)> {
    sizes
        .iter()
        .enumerate()
        .flat_map(|(i, &n)| (0..m).map(move |r| (i, n, r)))
        .collect()
}

fn collect(rows: Vec<Result<Vec<ResultRow>>>, mut head: Vec<ResultRow>) -> Result<ResultTable> {
    for r in rows {
        head.extend(r?);
    }
    Ok(ResultTable::from_rows(head))
}

/// PAR and xPAR fitted on replicates at each SVR and evaluated on
/// `do(A := nu)`, plus the population losses of PAR, xPAR, AR and OLS.
///
/// All SVR levels of one replicate share the anchor, noise and proxy noise
/// draws; only the proxy noise scale changes.
pub fn run_robustness_experiment(setup: &ExperimentSetup) -> Result<ResultTable> {
    let cfg = &setup.config;
    let scm = setup.scm()?;
    let d_a = scm.dims().d_a;
    let lambda = cfg.lambda_or(DEFAULT_LAMBDA);
    let nu = cfg
        .intervention_vec(d_a)?
        .map_or_else(|| default_nu(d_a), Ok)?;
    let spec = InterventionSpec::Deterministic(nu);
    let base = setup.proxies.as_ref();
    let name = ExperimentKind::Robustness.as_str();

    let mut population = Vec::new();
    for &svr in &cfg.svr_grid {
        let proxies = proxies_at_svr(d_a, base, svr, true)?;
        let m = population_moments(scm, Some(&proxies))?;
        let t = RowTemplate { experiment: name, n: None, svr: Some(svr), replicate: None, seed: None };
        for p in [fit_par(&m, lambda)?, fit_xpar(&m, lambda)?, fit_anchor(&m, lambda)?, fit_ols(&m)?] {
            let loss = mspe_under_intervention(scm, &p, &spec)?;
            population.push(t.row(p.method.as_str(), p.lambda, "population", "population_mspe", loss));
        }
    }

    let grid = replicate_grid(&cfg.sample_sizes, cfg.replicates);
    let rows: Vec<Result<Vec<ResultRow>>> = grid
        .par_iter()
        .map(|&(ni, n, rep)| {
            let seed = derive_seed(cfg.seed, &[ni as u64, rep as u64]);
            let test_seed = derive_seed(cfg.seed, &[ni as u64, rep as u64, 1]);
            let test = simulate_intervened(scm, None, &spec, cfg.test_size(n), test_seed)?;
            let mut out = Vec::new();
            for &svr in &cfg.svr_grid {
                let proxies = proxies_at_svr(d_a, base, svr, true)?;
                let train = simulate(scm, Some(&proxies), n, seed)?;
                let m = moments_from_data(&train, false)?;
                let t = RowTemplate { experiment: name, n: Some(n), svr: Some(svr), replicate: Some(rep), seed: Some(seed) };
                for p in [fit_par(&m, lambda)?, fit_xpar(&m, lambda)?] {
                    out.push(t.row(p.method.as_str(), p.lambda, "test", "test_mspe", empirical_mspe(&p, &test)?));
                }
            }
            Ok(out)
        })
        .collect();
    collect(rows, population)
}

fn default_nu(d_a: usize) -> Result<DVector<f64>> {
    if d_a != ROBUSTNESS_NU.len() {
        return Err(Error::Config(format!(
            "no default intervention for d_A = {d_a}; set experiment.intervention"
        )));
    }
    Ok(DVector::from_column_slice(&ROBUSTNESS_NU))
}

/// Estimated worst case of PAR under an assumed SVR against the true worst
/// case, for each true SVR. Metrics: `estimated`, `actual`,
/// `relative_gap = (estimated - actual) / actual`.
pub fn run_misspecification_experiment(setup: &ExperimentSetup) -> Result<ResultTable> {
    let cfg = &setup.config;
    let scm = setup.scm()?;
    let d_a = scm.dims().d_a;
    let lambda = cfg.lambda_or(DEFAULT_LAMBDA);
    let assumed = cfg.assumed_svr.unwrap_or(DEFAULT_ASSUMED_SVR);
    let base = setup.proxies.as_ref();
    let name = ExperimentKind::MisspecifiedSvr.as_str();

    let mut population = Vec::new();
    for &svr in &cfg.svr_grid {
        let proxies = proxies_at_svr(d_a, base, svr, false)?;
        let m = population_moments(scm, Some(&proxies))?;
        let r = estimated_vs_actual_from_moments(scm, &proxies, &m, lambda, assumed)?;
        let t = RowTemplate { experiment: name, n: None, svr: Some(svr), replicate: None, seed: None };
        population.push(t.row("par", Some(lambda), "population", "estimated", r.estimated));
        population.push(t.row("par", Some(lambda), "population", "actual", r.actual));
    }

    let grid = replicate_grid(&cfg.sample_sizes, cfg.replicates);
    let rows: Vec<Result<Vec<ResultRow>>> = grid
        .par_iter()
        .map(|&(ni, n, rep)| {
            let seed = derive_seed(cfg.seed, &[ni as u64, rep as u64]);
            let mut out = Vec::new();
            for &svr in &cfg.svr_grid {
                let proxies = proxies_at_svr(d_a, base, svr, false)?;
                let train = simulate(scm, Some(&proxies), n, seed)?;
                let m = moments_from_data(&train, false)?;
                let r = estimated_vs_actual_from_moments(scm, &proxies, &m, lambda, assumed)?;
                let t = RowTemplate { experiment: name, n: Some(n), svr: Some(svr), replicate: Some(rep), seed: Some(seed) };
                out.push(t.row("par", Some(lambda), "worst-case", "estimated", r.estimated));
                out.push(t.row("par", Some(lambda), "worst-case", "actual", r.actual));
                out.push(t.row(
                    "par",
                    Some(lambda),
                    "worst-case",
                    "relative_gap",
                    (r.estimated - r.actual) / r.actual,
                ));
            }
            Ok(out)
        })
        .collect();
    collect(rows, population)
}

/// Indices of the causal (`Y` reads them) and anti-causal (they read `Y`)
/// covariates.
pub fn causal_split(scm: &LinearScm) -> (Vec<usize>, Vec<usize>) {
    let dims = scm.dims();
    let (b, iy) = (scm.b(), dims.y_index());
    let causal = (0..dims.d_x).filter(|&j| b[(iy, j)] != 0.0).collect();
    let anticausal = (0..dims.d_x).filter(|&j| b[(j, iy)] != 0.0).collect();
    (causal, anticausal)
}

fn mean_abs(gamma: &DVector<f64>, idx: &[usize]) -> f64 {
    if idx.is_empty() {
        return f64::NAN;
    }
    idx.iter().map(|&j| gamma[j].abs()).sum::<f64>() / idx.len() as f64
}

/// Absolute PAR and xPAR coefficients grouped into causal and anti-causal
/// covariates (metric `mean_abs_coef`) and per coefficient (`abs_coef`,
/// cell `x<j>`).
pub fn run_causal_anticausal_experiment(setup: &ExperimentSetup) -> Result<ResultTable> {
    let cfg = &setup.config;
    let scm = setup.scm()?;
    let lambda = cfg.lambda_or(CAUSAL_LAMBDA);
    let mut proxies = setup
        .proxies
        .clone()
        .ok_or_else(|| Error::Config("causal-anticausal experiment needs proxies W and Z".into()))?;
    if let Some(var) = &cfg.proxy_noise_var {
        let d = DMatrix::from_diagonal(&DVector::from_column_slice(var));
        let bz = proxies.beta_z.clone().unwrap_or_else(|| proxies.beta_w.clone());
        linalg::ensure_shape(&d, proxies.d_w(), proxies.d_w(), "proxy_noise_var")?;
        proxies = ProxyModel::pair(proxies.beta_w.clone(), d.clone(), bz, d)?;
    }
    let (causal, anticausal) = causal_split(scm);
    let name = ExperimentKind::CausalAnticausal.as_str();

    let grid = replicate_grid(&cfg.sample_sizes, cfg.replicates);
    let rows: Vec<Result<Vec<ResultRow>>> = grid
        .par_iter()
        .map(|&(ni, n, rep)| {
            let seed = derive_seed(cfg.seed, &[ni as u64, rep as u64]);
            let train = simulate(scm, Some(&proxies), n, seed)?;
            let m = moments_from_data(&train, false)?;
            let t = RowTemplate { experiment: name, n: Some(n), svr: None, replicate: Some(rep), seed: Some(seed) };
            let mut out = Vec::new();
            for p in [fit_par(&m, lambda)?, fit_xpar(&m, lambda)?] {
                let est = p.method.as_str();
                out.push(t.row(est, p.lambda, "causal", "mean_abs_coef", mean_abs(&p.gamma, &causal)));
                out.push(t.row(est, p.lambda, "anticausal", "mean_abs_coef", mean_abs(&p.gamma, &anticausal)));
                for (j, g) in p.gamma.iter().enumerate() {
                    out.push(t.row(est, p.lambda, &format!("x{}", j + 1), "abs_coef", g.abs()));
                }
            }
            Ok(out)
        })
        .collect();
    collect(rows, Vec::new())
}

/// Target of the targeted experiment: `nu = kappa^T eps_A + eta`, so
/// `E[nu] = eta` and `Cov(nu) = kappa^T Sigma_A kappa`.
pub fn targeted_shift(setup: &ExperimentSetup) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let scm = setup.scm()?;
    let d_a = scm.dims().d_a;
    let eta = match &setup.config.shift_mean {
        Some(v) => DVector::from_column_slice(v),
        None => DVector::zeros(d_a),
    };
    linalg::ensure_len(&eta, d_a, "shift_mean")?;
    let kappa = setup.config.kappa()?.unwrap_or_else(|| DMatrix::identity(d_a, d_a));
    linalg::ensure_shape(&kappa, d_a, d_a, "shift_kappa")?;
    let cov = linalg::symmetrize(&(kappa.transpose() * scm.sigma_a() * &kappa));
    Ok((eta, cov))
}

/// AR penalty matching the targeted second moment:
/// `lambda_max(Sigma_nu + eta eta^T) - 1` relative to `Sigma_A = Id`.
pub fn targeted_ar_lambda(sigma_a: &DMatrix<f64>, eta: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    // Generalized eigenvalue of (Sigma_nu + eta eta^T) against Sigma_A.
    let second = cov + eta * eta.transpose();
    let l = linalg::psd_factor(sigma_a);
    let l_inv = linalg::inverse_checked(&l, "Sigma_A factor", linalg::BLOCK_RCOND_MIN)?;
    let rel = linalg::symmetrize(&(&l_inv * second * l_inv.transpose()));
    Ok((linalg::max_eigenvalue(&rel) - 1.0).max(-1.0))
}

/// OLS, AR and TAR evaluated on the shifted and on the training distribution.
pub fn run_targeted_experiment(setup: &ExperimentSetup) -> Result<ResultTable> {
    let cfg = &setup.config;
    let scm = setup.scm()?;
    let (eta, cov) = targeted_shift(setup)?;
    let lambda = match cfg.lambda {
        Some(l) => l,
        None => targeted_ar_lambda(scm.sigma_a(), &eta, &cov)?,
    };
    let shifted = InterventionSpec::Random { mean: eta.clone(), cov: cov.clone() };
    let training = InterventionSpec::Random {
        mean: DVector::zeros(eta.len()),
        cov: scm.sigma_a().clone(),
    };
    let name = ExperimentKind::Targeted.as_str();
    let fit_all = |m: &crate::moments::MomentSet| -> Result<[LinearPredictor; 3]> {
        Ok([fit_ols(m)?, fit_anchor(m, lambda)?, fit_tar(m, &eta, &cov)?])
    };

    let mut population = Vec::new();
    {
        let m = population_moments(scm, None)?;
        let t = RowTemplate { experiment: name, n: None, svr: None, replicate: None, seed: None };
        for p in fit_all(&m)? {
            for (cell, spec) in [("shifted", &shifted), ("training", &training)] {
                let loss = mspe_under_intervention(scm, &p, spec)?;
                population.push(t.row(p.method.as_str(), p.lambda, cell, "population_mspe", loss));
            }
        }
    }

    let grid = replicate_grid(&cfg.sample_sizes, cfg.replicates);
    let rows: Vec<Result<Vec<ResultRow>>> = grid
        .par_iter()
        .map(|&(ni, n, rep)| {
            let path = [ni as u64, rep as u64];
            let seed = derive_seed(cfg.seed, &path);
            let train = simulate(scm, None, n, seed)?;
            let m = moments_from_data(&train, false)?;
            let n_test = cfg.test_size(n);
            let test_shifted = simulate_intervened(scm, None, &shifted, n_test, derive_seed(cfg.seed, &[path[0], path[1], 1]))?;
            let test_training = simulate(scm, None, n_test, derive_seed(cfg.seed, &[path[0], path[1], 2]))?;
            let t = RowTemplate { experiment: name, n: Some(n), svr: None, replicate: Some(rep), seed: Some(seed) };
            let mut out = Vec::new();
            for p in fit_all(&m)? {
                for (cell, test) in [("shifted", &test_shifted), ("training", &test_training)] {
                    out.push(t.row(p.method.as_str(), p.lambda, cell, "test_mspe", empirical_mspe(&p, test)?));
                }
            }
            Ok(out)
        })
        .collect();
    collect(rows, population)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::results::Filter;

    fn small(kind: ExperimentKind) -> ExperimentSetup {
        let mut s = ExperimentSetup::builtin(kind).unwrap();
        s.config.replicates = 3;
        s.config.sample_sizes = vec![500];
        s.config.n_test = Some(500);
        if !s.config.svr_grid.is_empty() {
            s.config.svr_grid = vec![0.2, 1.0];
        }
        s
    }

    #[test]
    fn reruns_are_identical() {
        for kind in [
            ExperimentKind::Robustness,
            ExperimentKind::MisspecifiedSvr,
            ExperimentKind::CausalAnticausal,
            ExperimentKind::Targeted,
        ] {
            let s = small(kind);
            let a = run_experiment(&s).unwrap();
            let mut s2 = s.clone();
            s2.config.jobs = Some(2);
            let b = run_experiment(&s2).unwrap();
            assert_eq!(a, b, "{kind:?}");
            assert!(a.rows.iter().all(|r| r.replicate.is_none() || r.seed.is_some()));
        }
    }

    #[test]
    fn noiseless_proxies_match_anchor_at_population() {
        let t = run_robustness_experiment(&small(ExperimentKind::Robustness)).unwrap();
        let pop = |e| {
            t.values(&Filter { estimator: Some(e), svr: Some(1.0), metric: Some("population_mspe"), ..Default::default() })[0]
        };
        assert!((pop("par") - pop("ar")).abs() < 1e-8);
        assert!((pop("xpar") - pop("ar")).abs() < 1e-8);
    }

    #[test]
    fn targeted_lambda_of_bundle() {
        let s = ExperimentSetup::builtin(ExperimentKind::Targeted).unwrap();
        let (eta, cov) = targeted_shift(&s).unwrap();
        let l = targeted_ar_lambda(s.scm().unwrap().sigma_a(), &eta, &cov).unwrap();
        assert!((l - 4.0).abs() < 1e-12);
    }

    #[test]
    fn causal_split_of_bundle() {
        let s = ExperimentSetup::builtin(ExperimentKind::CausalAnticausal).unwrap();
        let (c, a) = causal_split(s.scm().unwrap());
        assert_eq!(c, vec![0, 1, 2]);
        assert_eq!(a, vec![3, 4, 5]);
    }
}
