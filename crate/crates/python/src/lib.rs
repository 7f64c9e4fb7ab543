//! Python module `proxy_anchor_rs`: models, datasets, fitted predictors,
//! the identifiability scan and the experiment harness.
//!
//! Matrices cross the boundary as lists of rows.

use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use proxy_anchor::estimators::{empirical_mspe, predict};
use proxy_anchor::experiments::{loog_cv_lambda, run_experiment, ExperimentKind, ExperimentSetup};
use proxy_anchor::identifiability::{scan_family, ObservedCovariance3};
use proxy_anchor::robustness::{build_set, omega_w_population, worst_case_mspe};
use proxy_anchor::scm::{mspe_under_intervention, population_moments, ScmConfig};
use proxy_anchor::{bundles, moments_from_data, FitSpec, InterventionSpec, LinearPredictor, LinearScm, Method, ProxyModel, SetKind};

fn err(e: proxy_anchor::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn matrix(rows: &[Vec<f64>], what: &str) -> PyResult<DMatrix<f64>> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err(format!("{what}: rows must have equal length")));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn method(name: &str) -> PyResult<Method> {
    name.parse().map_err(err)
}

fn spec(
    method: Method,
    lam: Option<f64>,
    target_mean: Option<Vec<f64>>,
    target_cov: Option<Vec<Vec<f64>>>,
) -> PyResult<FitSpec> {
    if method.is_targeted() {
        let (Some(mean), Some(cov)) = (target_mean, target_cov) else {
            return Err(PyValueError::new_err(format!("{method} needs target_mean and target_cov")));
        };
        let (mean, cov) = (DVector::from_vec(mean), matrix(&cov, "target_cov")?);
        return Ok(match method {
            Method::Tar => FitSpec::Tar { mean, cov },
            Method::Ptar => FitSpec::Ptar { mean, cov },
            _ => FitSpec::Xtar { mean, cov },
        });
    }
    if method != Method::Ols && lam.is_none() {
        return Err(PyValueError::new_err(format!("{method} needs lam")));
    }
    FitSpec::untargeted(method, lam.unwrap_or(0.0)).map_err(err)
}

/// Linear structural model with optional proxies of the anchor.
#[pyclass(name = "Model", module = "proxy_anchor_rs")]
struct PyModel {
    scm: LinearScm,
    proxies: Option<ProxyModel>,
}

#[pymethods]
impl PyModel {
    /// Built-in bundle (e1, e2, e3, e4) or a JSON file path.
    #[staticmethod]
    fn load(name: &str) -> PyResult<Self> {
        Self::from_json(&bundles::resolve(name).map_err(err)?)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let (scm, proxies) = ScmConfig::from_json(text).and_then(|c| c.build()).map_err(err)?;
        Ok(PyModel { scm, proxies })
    }

    fn to_json(&self) -> PyResult<String> {
        let cfg = ScmConfig::from_model(&self.scm, self.proxies.as_ref());
        serde_json::to_string_pretty(&cfg).map_err(|e| err(e.into()))
    }

    /// Replaces the proxies by isotropic `W`, `Z` at signal-to-variance ratio `svr`.
    fn with_isotropic_proxies(&self, svr: f64) -> PyResult<Self> {
        let proxies = ProxyModel::isotropic(self.scm.dims().d_a, svr, true).map_err(err)?;
        Ok(PyModel { scm: self.scm.clone(), proxies: Some(proxies) })
    }

    /// `(d_x, d_h, d_a)`.
    #[getter]
    fn dims(&self) -> (usize, usize, usize) {
        let d = self.scm.dims();
        (d.d_x, d.d_h, d.d_a)
    }

    #[pyo3(signature = (n, seed = 0, intervention = None))]
    fn simulate(&self, n: usize, seed: u64, intervention: Option<Vec<f64>>) -> PyResult<PyDataset> {
        let data = match intervention {
            None => proxy_anchor::simulate::simulate(&self.scm, self.proxies.as_ref(), n, seed),
            Some(nu) => proxy_anchor::simulate::simulate_intervened(
                &self.scm,
                self.proxies.as_ref(),
                &InterventionSpec::Deterministic(DVector::from_vec(nu)),
                n,
                seed,
            ),
        }
        .map_err(err)?;
        Ok(PyDataset { data })
    }

    /// Fit from the population moments of the model.
    #[pyo3(signature = (method, lam = None, target_mean = None, target_cov = None))]
    fn population_fit(
        &self,
        method: &str,
        lam: Option<f64>,
        target_mean: Option<Vec<f64>>,
        target_cov: Option<Vec<Vec<f64>>>,
    ) -> PyResult<PyPredictor> {
        let spec = spec(self::method(method)?, lam, target_mean, target_cov)?;
        let m = population_moments(&self.scm, self.proxies.as_ref()).map_err(err)?;
        Ok(PyPredictor { inner: spec.fit(&m).map_err(err)? })
    }

    /// Population MSPE under `do(A := nu)` with `nu` of mean `mean` and covariance `cov`.
    #[pyo3(signature = (predictor, mean, cov = None))]
    fn mspe(&self, predictor: PyRef<'_, PyPredictor>, mean: Vec<f64>, cov: Option<Vec<Vec<f64>>>) -> PyResult<f64> {
        let mean = DVector::from_vec(mean);
        let spec = match cov {
            None => InterventionSpec::Deterministic(mean),
            Some(c) => InterventionSpec::Random { mean, cov: matrix(&c, "cov")? },
        };
        mspe_under_intervention(&self.scm, &predictor.inner, &spec).map_err(err)
    }

    /// Worst-case MSPE over the robustness set `kind` ("ols", "ar", "par"),
    /// returned as `(value, maximizer)`.
    fn worst_case(&self, predictor: PyRef<'_, PyPredictor>, kind: &str, lam: f64) -> PyResult<(f64, Vec<f64>)> {
        let (kind, omega) = match kind {
            "ols" => (SetKind::Ols, None),
            "ar" => (SetKind::Ar, None),
            "par" => {
                let p = self
                    .proxies
                    .as_ref()
                    .ok_or_else(|| PyValueError::new_err("the model has no proxies"))?;
                (SetKind::Par, Some(omega_w_population(self.scm.sigma_a(), p).map_err(err)?))
            }
            other => return Err(PyValueError::new_err(format!("unknown set '{other}' (ols, ar, par)"))),
        };
        let set = build_set(kind, self.scm.sigma_a(), lam, omega.as_ref()).map_err(err)?;
        let wc = worst_case_mspe(&self.scm, &predictor.inner, &set).map_err(err)?;
        Ok((wc.value, wc.nu_star.iter().copied().collect()))
    }
}

/// Observations of `X`, `Y` and any of `A`, `W`, `Z`, group labels.
#[pyclass(name = "Dataset", module = "proxy_anchor_rs")]
struct PyDataset {
    data: proxy_anchor::Dataset,
}

#[pymethods]
impl PyDataset {
    #[new]
    #[pyo3(signature = (x, y, a = None, w = None, z = None, groups = None))]
    fn new(
        x: Vec<Vec<f64>>,
        y: Vec<f64>,
        a: Option<Vec<Vec<f64>>>,
        w: Option<Vec<Vec<f64>>>,
        z: Option<Vec<Vec<f64>>>,
        groups: Option<Vec<String>>,
    ) -> PyResult<Self> {
        let mut data = proxy_anchor::Dataset::new(matrix(&x, "x")?, DVector::from_vec(y)).map_err(err)?;
        if let Some(a) = a {
            data = data.with_a(matrix(&a, "a")?).map_err(err)?;
        }
        if let Some(w) = w {
            data = data.with_w(matrix(&w, "w")?).map_err(err)?;
        }
        if let Some(z) = z {
            data = data.with_z(matrix(&z, "z")?).map_err(err)?;
        }
        if let Some(g) = groups {
            data = data.with_groups(g).map_err(err)?;
        }
        Ok(PyDataset { data })
    }

    #[staticmethod]
    fn read_csv(path: &str) -> PyResult<Self> {
        Ok(PyDataset { data: proxy_anchor::Dataset::read_csv(path).map_err(err)? })
    }

    fn write_csv(&self, path: &str) -> PyResult<()> {
        self.data.write_csv(path).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.data.n()
    }

    #[getter]
    fn x(&self) -> Vec<Vec<f64>> {
        rows(&self.data.x)
    }

    #[getter]
    fn y(&self) -> Vec<f64> {
        self.data.y.iter().copied().collect()
    }

    #[getter]
    fn a(&self) -> Option<Vec<Vec<f64>>> {
        self.data.a.as_ref().map(rows)
    }

    #[getter]
    fn w(&self) -> Option<Vec<Vec<f64>>> {
        self.data.w.as_ref().map(rows)
    }

    #[pyo3(signature = (method, lam = None, target_mean = None, target_cov = None, intercept = true))]
    fn fit(
        &self,
        method: &str,
        lam: Option<f64>,
        target_mean: Option<Vec<f64>>,
        target_cov: Option<Vec<Vec<f64>>>,
        intercept: bool,
    ) -> PyResult<PyPredictor> {
        let spec = spec(self::method(method)?, lam, target_mean, target_cov)?;
        let m = moments_from_data(&self.data, intercept).map_err(err)?;
        Ok(PyPredictor { inner: spec.fit(&m).map_err(err)? })
    }

    /// Leave-one-group-out choice of `lam`; returns `(lam, [(lam, score), ...])`.
    #[pyo3(signature = (grid, method = "par"))]
    fn cv_lambda(&self, grid: Vec<f64>, method: &str) -> PyResult<(f64, Vec<(f64, f64)>)> {
        let r = loog_cv_lambda(&self.data, &grid, self::method(method)?).map_err(err)?;
        Ok((r.lambda, r.scores))
    }
}

/// Fitted `x -> alpha + gamma^T x`.
#[pyclass(name = "Predictor", module = "proxy_anchor_rs")]
struct PyPredictor {
    inner: LinearPredictor,
}

#[pymethods]
impl PyPredictor {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyPredictor { inner: LinearPredictor::from_json(text).map_err(err)? })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(err)
    }

    #[getter]
    fn method(&self) -> &'static str {
        self.inner.method.as_str()
    }

    #[getter]
    fn gamma(&self) -> Vec<f64> {
        self.inner.raw_coefficients().0.iter().copied().collect()
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.inner.alpha
    }

    #[getter]
    fn lam(&self) -> Option<f64> {
        self.inner.lambda
    }

    fn predict(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        Ok(predict(&self.inner, &matrix(&x, "x")?).map_err(err)?.iter().copied().collect())
    }

    fn mspe(&self, data: PyRef<'_, PyDataset>) -> PyResult<f64> {
        empirical_mspe(&self.inner, &data.data).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("Predictor(method={}, gamma={:?}, alpha={})", self.inner.method, self.gamma(), self.inner.alpha)
    }
}

/// Family of one-dimensional models sharing the covariance `sigma` of
/// `(X, Y, W)`, one dict per feasible grid point.
#[pyfunction]
#[pyo3(signature = (sigma, lam = 5.0, step = 0.01))]
fn identify<'py>(py: Python<'py>, sigma: [[f64; 3]; 3], lam: f64, step: f64) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let s = ObservedCovariance3::from_matrix(&sigma).map_err(err)?;
    let scan = scan_family(&s, lam, step).map_err(err)?;
    scan.rows
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("rho_w", r.rho_w)?;
            d.set_item("alpha", r.theta.alpha)?;
            d.set_item("beta_x", r.theta.beta_x)?;
            d.set_item("beta_y", r.theta.beta_y)?;
            d.set_item("gamma_par", r.gamma_par)?;
            d.set_item("gamma_ar", r.gamma_ar)?;
            Ok(d)
        })
        .collect()
}

/// Runs an experiment and returns its summary rows as dicts.
#[pyfunction]
#[pyo3(signature = (kind, config = None, m = None, n = None, seed = None, jobs = None))]
fn experiment<'py>(
    py: Python<'py>,
    kind: &str,
    config: Option<&str>,
    m: Option<usize>,
    n: Option<usize>,
    seed: Option<u64>,
    jobs: Option<usize>,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let kind: ExperimentKind = kind.parse().map_err(err)?;
    let mut setup = ExperimentSetup::resolve(config.unwrap_or(kind.default_bundle())).map_err(err)?;
    if let Some(m) = m {
        setup.config.replicates = m;
    }
    if let Some(n) = n {
        setup.config.sample_sizes = vec![n];
    }
    if let Some(s) = seed {
        setup.config.seed = s;
    }
    setup.config.jobs = jobs.or(setup.config.jobs);
    let table = py.detach(|| run_experiment(&setup)).map_err(err)?;
    table
        .summary
        .iter()
        .map(|s| {
            let d = PyDict::new(py);
            d.set_item("estimator", &s.estimator)?;
            d.set_item("n", s.n)?;
            d.set_item("svr", s.svr)?;
            d.set_item("cell", &s.cell)?;
            d.set_item("metric", &s.metric)?;
            d.set_item("count", s.count)?;
            d.set_item("mean", s.mean)?;
            d.set_item("median", s.median)?;
            Ok(d)
        })
        .collect()
}

#[pymodule]
fn proxy_anchor_rs(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyPredictor>()?;
    m.add_function(wrap_pyfunction!(identify, m)?)?;
    m.add_function(wrap_pyfunction!(experiment, m)?)?;
    Ok(())
}
