//! Closed-form fitters for OLS, anchor regression and its proxy and
//! targeted variants, all driven by a [`MomentSet`].

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{self, BLOCK_RCOND_MIN, STRUCTURAL_RCOND_MIN};
use crate::moments::{Aux, AuxBlock, MomentSet};
use crate::robustness;
use crate::scm::check_psd;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ols,
    Ar,
    Par,
    Xpar,
    Tar,
    Ptar,
    Xtar,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Ols,
        Method::Ar,
        Method::Par,
        Method::Xpar,
        Method::Tar,
        Method::Ptar,
        Method::Xtar,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Ols => "ols",
            Method::Ar => "ar",
            Method::Par => "par",
            Method::Xpar => "xpar",
            Method::Tar => "tar",
            Method::Ptar => "ptar",
            Method::Xtar => "xtar",
        }
    }

    pub fn is_targeted(self) -> bool {
        matches!(self, Method::Tar | Method::Ptar | Method::Xtar)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::param(
                    "method",
                    format!("unknown method '{s}' (expected ols, ar, par, xpar, tar, ptar or xtar)"),
                )
            })
    }
}

/// Target moments of a targeted fit: the mean and covariance of the
/// intervened anchor (TAR) or proxy (PTAR, xTAR).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetMoments {
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
}

impl TargetMoments {
    pub fn new(mean: &DVector<f64>, cov: &DMatrix<f64>) -> Self {
        TargetMoments {
            mean: mean.iter().copied().collect(),
            cov: linalg::to_rows(cov),
        }
    }

    pub fn mean_vec(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.mean)
    }

    pub fn cov_mat(&self) -> Result<DMatrix<f64>> {
        linalg::from_rows(&self.cov, "target covariance")
    }
}

/// Per-column scaling applied to `X` before fitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub x_scale: Vec<f64>,
}

/// Unit-variance rescaling of the `X` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub x_scale: DVector<f64>,
}

impl Standardizer {
    /// Scales are sample standard deviations (divisor `n`).
    pub fn fit(data: &Dataset) -> Result<Self> {
        let n = data.n();
        if n < 2 {
            return Err(Error::Data("standardization needs at least two rows".into()));
        }
        let mut scale = DVector::zeros(data.d_x());
        for (j, col) in data.x.column_iter().enumerate() {
            let mean = col.mean();
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            if !(var > 0.0) {
                return Err(Error::Data(format!(
                    "column {} is constant and cannot be standardized",
                    data.x_names.get(j).map_or("?", String::as_str)
                )));
            }
            scale[j] = var.sqrt();
        }
        Ok(Standardizer { x_scale: scale })
    }

    pub fn apply(&self, data: &Dataset) -> Result<Dataset> {
        linalg::ensure_len(&self.x_scale, data.d_x(), "standardizer")?;
        let mut out = data.clone();
        for (j, mut col) in out.x.column_iter_mut().enumerate() {
            col /= self.x_scale[j];
        }
        Ok(out)
    }

    /// Records the scaling on a predictor fitted to standardized data.
    pub fn attach(&self, mut p: LinearPredictor) -> LinearPredictor {
        p.standardization = Some(Standardization {
            x_scale: self.x_scale.iter().copied().collect(),
        });
        p
    }
}

/// `x -> alpha + gamma^T x`, with the metadata of the fit that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearPredictor {
    pub method: Method,
    #[serde(with = "dvector_serde")]
    pub gamma: DVector<f64>,
    pub alpha: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<TargetMoments>,
    #[serde(default)]
    pub centered: bool,
    /// When present, `gamma` acts on `x / x_scale`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub standardization: Option<Standardization>,
}

mod dvector_serde {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
        Ok(DVector::from_vec(Vec::<f64>::deserialize(d)?))
    }
}

impl LinearPredictor {
    pub fn new(method: Method, gamma: DVector<f64>, alpha: f64) -> Self {
        LinearPredictor {
            method,
            gamma,
            alpha,
            lambda: None,
            target: None,
            centered: false,
            standardization: None,
        }
    }

    /// `(gamma, alpha)` acting on unscaled `X`.
    pub fn raw_coefficients(&self) -> (DVector<f64>, f64) {
        match &self.standardization {
            None => (self.gamma.clone(), self.alpha),
            Some(s) => (
                DVector::from_fn(self.gamma.len(), |j, _| self.gamma[j] / s.x_scale[j]),
                self.alpha,
            ),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: LinearPredictor = serde_json::from_str(text)?;
        if p.gamma.iter().any(|v| !v.is_finite()) || !p.alpha.is_finite() {
            return Err(Error::Data("predictor has non-finite coefficients".into()));
        }
        Ok(p)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path.as_ref(), self.to_json()?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(&path, e))?;
        Self::from_json(&text)
    }
}

/// `alpha + X gamma` row-wise.
pub fn predict(p: &LinearPredictor, x: &DMatrix<f64>) -> Result<DVector<f64>> {
    let (gamma, alpha) = p.raw_coefficients();
    if x.ncols() != gamma.len() {
        return Err(Error::dim("predictor input columns", gamma.len(), x.ncols()));
    }
    Ok((x * gamma).add_scalar(alpha))
}

/// `(1/n) sum (y_i - alpha - gamma^T x_i)^2`.
pub fn empirical_mspe(p: &LinearPredictor, data: &Dataset) -> Result<f64> {
    if data.n() == 0 {
        return Err(Error::Data("cannot evaluate on an empty dataset".into()));
    }
    let r = &data.y - predict(p, &data.x)?;
    Ok(r.norm_squared() / data.n() as f64)
}

/// `E[(Y - gamma^T X)^2]` from the moments.
pub fn ls_loss(m: &MomentSet, gamma: &DVector<f64>) -> Result<f64> {
    linalg::ensure_len(gamma, m.d_x(), "gamma")?;
    Ok(m.syy - 2.0 * gamma.dot(&m.sxy) + linalg::quad_form(gamma, &m.sxx))
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= -1.0) || !lambda.is_finite() {
        return Err(Error::param(
            "lambda",
            format!("must be a finite value of at least -1, got {lambda}"),
        ));
    }
    Ok(())
}

/// Penalty pieces `(L, k)` such that the penalized least-squares normal
/// equations read `(Sxx + lambda L) gamma = Sxy + lambda k`.
///
/// For proxies `W`, `Z` the cross term is `L = sym(Sxw Szw^{-1} Szx)` and
/// `k = (Sxw Szw^{-1} szy + Sxz Swz^{-1} swy) / 2`; with `W = Z = V` this is
/// the projection term `Sxv Svv^{-1} Svx`, `Sxv Svv^{-1} svy`.
fn cross_system(
    w: &AuxBlock,
    z: &AuxBlock,
    szw: &DMatrix<f64>,
    what: &str,
    min_rcond: f64,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let rc = linalg::rcond(szw);
    if !(rc >= min_rcond) {
        return Err(Error::Singular {
            what: what.to_string(),
            rcond: rc,
        });
    }
    let lu = szw.clone().lu();
    let lu_t = szw.transpose().lu();
    let singular = || Error::Singular {
        what: what.to_string(),
        rcond: rc,
    };
    // Szw^{-1} Szx and Szw^{-1} szy
    let p_x = lu.solve(&z.sxv.transpose()).ok_or_else(singular)?;
    let p_y = lu.solve(&z.syv).ok_or_else(singular)?;
    // Swz^{-1} swy
    let q_y = lu_t.solve(&w.syv).ok_or_else(singular)?;
    let l = linalg::symmetrize(&(&w.sxv * p_x));
    let k = (&w.sxv * p_y + &z.sxv * q_y) * 0.5;
    Ok((l, k))
}

fn single_system(block: &AuxBlock, what: &str) -> Result<(DMatrix<f64>, DVector<f64>)> {
    cross_system(block, block, &block.svv, what, BLOCK_RCOND_MIN)
}

fn penalized_solve(
    m: &MomentSet,
    lambda: f64,
    l: &DMatrix<f64>,
    k: &DVector<f64>,
    what: &str,
) -> Result<DVector<f64>> {
    let a = &m.sxx + l * lambda;
    let b = &m.sxy + k * lambda;
    linalg::solve_symmetric(&a, &b, what)
}

fn untargeted(m: &MomentSet, method: Method, gamma: DVector<f64>, lambda: Option<f64>) -> LinearPredictor {
    let alpha = match &m.means {
        Some(mu) => mu.y - gamma.dot(&mu.x),
        None => 0.0,
    };
    let mut p = LinearPredictor::new(method, gamma, alpha);
    p.lambda = lambda;
    p.centered = m.is_centered();
    p
}

/// `gamma = Sxx^{-1} Sxy`.
pub fn fit_ols(m: &MomentSet) -> Result<LinearPredictor> {
    let gamma = linalg::solve_symmetric(&m.sxx, &m.sxy, "Sxx")?;
    Ok(untargeted(m, Method::Ols, gamma, None))
}

/// Anchor regression, minimizer of `l_LS + lambda l_PLS(A)`.
pub fn fit_anchor(m: &MomentSet, lambda: f64) -> Result<LinearPredictor> {
    fit_projected(m, Aux::A, lambda, Method::Ar)
}

/// Proxy anchor regression with the single proxy `W`.
pub fn fit_par(m: &MomentSet, lambda: f64) -> Result<LinearPredictor> {
    fit_projected(m, Aux::W, lambda, Method::Par)
}

fn fit_projected(m: &MomentSet, aux: Aux, lambda: f64, method: Method) -> Result<LinearPredictor> {
    check_lambda(lambda)?;
    let block = m.block(aux)?;
    let (l, k) = single_system(block, &format!("second moment of {}", aux.name()))?;
    let gamma = penalized_solve(m, lambda, &l, &k, &format!("{method} normal equations"))?;
    Ok(untargeted(m, method, gamma, Some(lambda)))
}

fn szw_error(rcond: f64) -> Error {
    Error::Singular {
        what: "cross-proxy moment E[ZW^T] (the proxies need equal dimension and full-rank loadings)"
            .into(),
        rcond,
    }
}

fn cross_blocks(m: &MomentSet) -> Result<(&AuxBlock, &AuxBlock, &DMatrix<f64>)> {
    let w = m.block(Aux::W)?;
    let z = m.block(Aux::Z)?;
    let szw = m.szw_required()?;
    if szw.nrows() != szw.ncols() {
        return Err(Error::dim("E[ZW^T] (d_W must equal d_Z)", "square", format!("{}x{}", szw.nrows(), szw.ncols())));
    }
    let rc = linalg::rcond(szw);
    if !(rc >= STRUCTURAL_RCOND_MIN) {
        return Err(szw_error(rc));
    }
    Ok((w, z, szw))
}

/// Cross-proxy anchor regression with proxies `W`, `Z`.
pub fn fit_xpar(m: &MomentSet, lambda: f64) -> Result<LinearPredictor> {
    check_lambda(lambda)?;
    let (w, z, szw) = cross_blocks(m)?;
    let (l, k) = cross_system(w, z, szw, "E[ZW^T]", STRUCTURAL_RCOND_MIN)?;
    let gamma = penalized_solve(m, lambda, &l, &k, "xpar normal equations")?;
    Ok(untargeted(m, Method::Xpar, gamma, Some(lambda)))
}

fn check_target(mean: &DVector<f64>, cov: &DMatrix<f64>, d: usize, what: &str) -> Result<()> {
    linalg::ensure_len(mean, d, &format!("{what} mean"))?;
    linalg::ensure_shape(cov, d, d, &format!("{what} covariance"))?;
    check_psd(cov, &format!("{what} covariance"))
}

/// Solves `(Sxx + Sxv Q Svx) gamma = Sxy + Sxv Q svy` for a symmetric `Q`,
/// i.e. the minimizer of `l_LS + r_V^T Q r_V` with `r_V = svy - Svx gamma`.
fn targeted_gamma(
    m: &MomentSet,
    sxv: &DMatrix<f64>,
    syv: &DVector<f64>,
    q: &DMatrix<f64>,
    what: &str,
) -> Result<DVector<f64>> {
    let sxv_q = sxv * q;
    let a = &m.sxx + &sxv_q * sxv.transpose();
    let b = &m.sxy + &sxv_q * syv;
    linalg::solve_symmetric(&linalg::symmetrize(&a), &b, what)
}

/// Intercept of a targeted fit. `coef` is the regression coefficient of the
/// residual on the auxiliary (`b_gamma`, `c_gamma` or `a_gamma`).
fn targeted_alpha(m: &MomentSet, gamma: &DVector<f64>, coef: &DVector<f64>, mean: &DVector<f64>, aux: Aux) -> Result<f64> {
    match &m.means {
        None => Ok(coef.dot(mean)),
        Some(mu) => {
            let base = mu.of(aux).ok_or_else(|| {
                Error::MissingBlock(format!("mean of {} for the centred targeted fit", aux.name()))
            })?;
            Ok(mu.y - gamma.dot(&mu.x) + coef.dot(&(mean - base)))
        }
    }
}

fn targeted(method: Method, m: &MomentSet, gamma: DVector<f64>, alpha: f64, mean: &DVector<f64>, cov: &DMatrix<f64>) -> LinearPredictor {
    let mut p = LinearPredictor::new(method, gamma, alpha);
    p.target = Some(TargetMoments::new(mean, cov));
    p.centered = m.is_centered();
    p
}

/// Regression coefficient of `Y - gamma^T X` on `V`: `Svv^{-1}(svy - Svx gamma)`.
pub fn residual_coefficient(block: &AuxBlock, gamma: &DVector<f64>, what: &str) -> Result<DVector<f64>> {
    let r = &block.syv - block.sxv.transpose() * gamma;
    linalg::solve_symmetric(&block.svv, &r, what)
}

fn fit_single_targeted(
    m: &MomentSet,
    aux: Aux,
    method: Method,
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
) -> Result<LinearPredictor> {
    let block = m.block(aux)?;
    check_target(mean, cov, block.dim(), &format!("target of {}", aux.name()))?;
    let what = format!("second moment of {}", aux.name());
    let svv_inv = linalg::inverse_checked(&block.svv, &what, BLOCK_RCOND_MIN)?;
    let omega = linalg::symmetrize(&(&svv_inv * (cov - &block.svv) * &svv_inv));
    let gamma = targeted_gamma(m, &block.sxv, &block.syv, &omega, &format!("{method} normal equations"))?;
    let coef = residual_coefficient(block, &gamma, &what)?;
    let alpha = targeted_alpha(m, &gamma, &coef, mean, aux)?;
    Ok(targeted(method, m, gamma, alpha, mean, cov))
}

/// Targeted anchor regression for the intervention mean `mu_nu` and
/// covariance `sigma_nu` of `A`.
pub fn fit_tar(m: &MomentSet, mu_nu: &DVector<f64>, sigma_nu: &DMatrix<f64>) -> Result<LinearPredictor> {
    fit_single_targeted(m, Aux::A, Method::Tar, mu_nu, sigma_nu)
}

/// Proxy-targeted anchor regression; `mu_tilde`, `sigma_tilde` are the
/// mean and covariance of `W` under the intervention.
pub fn fit_ptar(m: &MomentSet, mu_tilde: &DVector<f64>, sigma_tilde: &DMatrix<f64>) -> Result<LinearPredictor> {
    fit_single_targeted(m, Aux::W, Method::Ptar, mu_tilde, sigma_tilde)
}

/// `a_gamma = Szw^{-1}(szy - Szx gamma)`.
pub fn cross_coefficient(m: &MomentSet, gamma: &DVector<f64>) -> Result<DVector<f64>> {
    let (_, z, szw) = cross_blocks(m)?;
    let r = &z.syv - z.sxv.transpose() * gamma;
    szw.clone().lu().solve(&r).ok_or_else(|| szw_error(linalg::rcond(szw)))
}

/// Cross-proxy targeted anchor regression.
///
/// The objective `l_LS + a^T (S~ - Sww) a + (a^T mu~ - alpha)^2` with
/// `a = P r_Z`, `P = Szw^{-1}`, `r_Z = szy - Szx gamma` is minimized by
/// `alpha = a^T mu~` and `(Sxx + Sxz Q Szx) gamma = Sxy + Sxz Q szy` with
/// `Q = P^T (S~ - Sww) P`.
pub fn fit_xtar(m: &MomentSet, mu_tilde: &DVector<f64>, sigma_tilde: &DMatrix<f64>) -> Result<LinearPredictor> {
    let (w, z, szw) = cross_blocks(m)?;
    check_target(mu_tilde, sigma_tilde, w.dim(), "target of W")?;
    let p = szw.clone().try_inverse().ok_or_else(|| szw_error(linalg::rcond(szw)))?;
    let q = linalg::symmetrize(&(p.transpose() * (sigma_tilde - &w.svv) * &p));
    let gamma = targeted_gamma(m, &z.sxv, &z.syv, &q, "xtar normal equations")?;
    let coef = cross_coefficient(m, &gamma)?;
    let alpha = targeted_alpha(m, &gamma, &coef, mu_tilde, Aux::W)?;
    Ok(targeted(Method::Xtar, m, gamma, alpha, mu_tilde, sigma_tilde))
}

/// A fitter together with its hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub enum FitSpec {
    Ols,
    Anchor { lambda: f64 },
    Par { lambda: f64 },
    Xpar { lambda: f64 },
    Tar { mean: DVector<f64>, cov: DMatrix<f64> },
    Ptar { mean: DVector<f64>, cov: DMatrix<f64> },
    Xtar { mean: DVector<f64>, cov: DMatrix<f64> },
}

impl FitSpec {
    pub fn method(&self) -> Method {
        match self {
            FitSpec::Ols => Method::Ols,
            FitSpec::Anchor { .. } => Method::Ar,
            FitSpec::Par { .. } => Method::Par,
            FitSpec::Xpar { .. } => Method::Xpar,
            FitSpec::Tar { .. } => Method::Tar,
            FitSpec::Ptar { .. } => Method::Ptar,
            FitSpec::Xtar { .. } => Method::Xtar,
        }
    }

    /// Untargeted spec for `method` at `lambda` (ignored for OLS).
    pub fn untargeted(method: Method, lambda: f64) -> Result<Self> {
        Ok(match method {
            Method::Ols => FitSpec::Ols,
            Method::Ar => FitSpec::Anchor { lambda },
            Method::Par => FitSpec::Par { lambda },
            Method::Xpar => FitSpec::Xpar { lambda },
            other => {
                return Err(Error::param(
                    "method",
                    format!("{other} needs target moments, not a lambda"),
                ))
            }
        })
    }

    pub fn fit(&self, m: &MomentSet) -> Result<LinearPredictor> {
        match self {
            FitSpec::Ols => fit_ols(m),
            FitSpec::Anchor { lambda } => fit_anchor(m, *lambda),
            FitSpec::Par { lambda } => fit_par(m, *lambda),
            FitSpec::Xpar { lambda } => fit_xpar(m, *lambda),
            FitSpec::Tar { mean, cov } => fit_tar(m, mean, cov),
            FitSpec::Ptar { mean, cov } => fit_ptar(m, mean, cov),
            FitSpec::Xtar { mean, cov } => fit_xtar(m, mean, cov),
        }
    }

    /// Value of the defining objective at `(gamma, alpha)`, computed from
    /// the (uncentred) moment blocks. `alpha` only enters targeted objectives.
    pub fn objective(&self, m: &MomentSet, gamma: &DVector<f64>, alpha: f64) -> Result<f64> {
        let ls = ls_loss(m, gamma)?;
        match self {
            FitSpec::Ols => Ok(ls),
            FitSpec::Anchor { lambda } => Ok(ls + lambda * robustness::pls_penalty(m, Aux::A, gamma)?),
            FitSpec::Par { lambda } => Ok(ls + lambda * robustness::pls_penalty(m, Aux::W, gamma)?),
            FitSpec::Xpar { lambda } => Ok(ls + lambda * robustness::cross_penalty(m, gamma)?),
            FitSpec::Tar { mean, cov } | FitSpec::Ptar { mean, cov } => {
                let aux = if matches!(self, FitSpec::Tar { .. }) { Aux::A } else { Aux::W };
                let block = m.block(aux)?;
                let coef = residual_coefficient(block, gamma, aux.name())?;
                let shift = coef.dot(mean) - alpha;
                Ok(ls + linalg::quad_form(&coef, &(cov - &block.svv)) + shift * shift)
            }
            FitSpec::Xtar { mean, cov } => {
                let w = m.block(Aux::W)?;
                let coef = cross_coefficient(m, gamma)?;
                let shift = coef.dot(mean) - alpha;
                Ok(ls + linalg::quad_form(&coef, &(cov - &w.svv)) + shift * shift)
            }
        }
    }
}
