//! Linear structural causal model over `(X, Y, H)` driven by anchors `A`,
//! with optional noisy proxies `W`, `Z` of the anchors.
//!
//! Internally the `D = d_X + 1 + d_H` block is always ordered `(X, Y, H)`:
//! rows `0..d_X` are the covariates, row `d_X` is the target and the
//! remaining rows are hidden. Configurations written in another block order
//! are permuted on load (see [`ScmConfig`]).

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::LinearPredictor;
use crate::linalg::{self, STRUCTURAL_RCOND_MIN};
use crate::moments::{AuxBlock, MomentSet};

/// Block dimensions. `d_Y` is fixed to one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub d_x: usize,
    #[serde(default = "one")]
    pub d_y: usize,
    pub d_h: usize,
    pub d_a: usize,
}

fn one() -> usize {
    1
}

impl Dims {
    pub fn new(d_x: usize, d_h: usize, d_a: usize) -> Self {
        Dims { d_x, d_y: 1, d_h, d_a }
    }

    /// Size of the structural block `(X, Y, H)`.
    pub fn d(&self) -> usize {
        self.d_x + self.d_y + self.d_h
    }

    /// Row of `Y` in canonical order.
    pub fn y_index(&self) -> usize {
        self.d_x
    }
}

/// Linear SCM `(X, Y, H) := B (X, Y, H) + M_A A + eps`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearScm {
    dims: Dims,
    b: DMatrix<f64>,
    m_a: DMatrix<f64>,
    sigma_eps: DMatrix<f64>,
    sigma_a: DMatrix<f64>,
}

impl LinearScm {
    /// Builds an SCM in canonical `(X, Y, H)` order. Only shapes are checked
    /// here; [`validate_scm`] checks the structural assumptions.
    pub fn new(
        dims: Dims,
        b: DMatrix<f64>,
        m_a: DMatrix<f64>,
        sigma_eps: DMatrix<f64>,
        sigma_a: DMatrix<f64>,
    ) -> Result<Self> {
        if dims.d_y != 1 {
            return Err(Error::param("d_y", "only a scalar target is supported"));
        }
        if dims.d_x == 0 || dims.d_a == 0 {
            return Err(Error::param("dims", "d_x and d_a must be positive"));
        }
        let d = dims.d();
        linalg::ensure_shape(&b, d, d, "B")?;
        linalg::ensure_shape(&m_a, d, dims.d_a, "M_A")?;
        linalg::ensure_shape(&sigma_eps, d, d, "Sigma_eps")?;
        linalg::ensure_shape(&sigma_a, dims.d_a, dims.d_a, "Sigma_A")?;
        Ok(LinearScm {
            dims,
            b,
            m_a,
            sigma_eps,
            sigma_a,
        })
    }

    /// SCM with identity noise and anchor second moments.
    pub fn with_unit_noise(dims: Dims, b: DMatrix<f64>, m_a: DMatrix<f64>) -> Result<Self> {
        let d = dims.d();
        Self::new(
            dims,
            b,
            m_a,
            DMatrix::identity(d, d),
            DMatrix::identity(dims.d_a, dims.d_a),
        )
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn m_a(&self) -> &DMatrix<f64> {
        &self.m_a
    }
    pub fn sigma_eps(&self) -> &DMatrix<f64> {
        &self.sigma_eps
    }
    pub fn sigma_a(&self) -> &DMatrix<f64> {
        &self.sigma_a
    }

    /// `(Id - B)^{-1}`.
    pub fn structural_inverse(&self) -> Result<DMatrix<f64>> {
        let d = self.dims.d();
        linalg::inverse_checked(
            &(DMatrix::identity(d, d) - &self.b),
            "Id - B",
            STRUCTURAL_RCOND_MIN,
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, Option<ProxyModel>)> {
        ScmConfig::load(path)?.build()
    }
}

/// Loadings and noise of the anchor proxies `W = beta_W^T A + eps_W` and
/// optionally `Z = beta_Z^T A + eps_Z`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProxyModel {
    pub beta_w: DMatrix<f64>,
    pub sigma_eps_w: DMatrix<f64>,
    pub beta_z: Option<DMatrix<f64>>,
    pub sigma_eps_z: Option<DMatrix<f64>>,
}

impl ProxyModel {
    pub fn single(beta_w: DMatrix<f64>, sigma_eps_w: DMatrix<f64>) -> Result<Self> {
        let p = ProxyModel {
            beta_w,
            sigma_eps_w,
            beta_z: None,
            sigma_eps_z: None,
        };
        p.check_shapes()?;
        Ok(p)
    }

    pub fn pair(
        beta_w: DMatrix<f64>,
        sigma_eps_w: DMatrix<f64>,
        beta_z: DMatrix<f64>,
        sigma_eps_z: DMatrix<f64>,
    ) -> Result<Self> {
        let p = ProxyModel {
            beta_w,
            sigma_eps_w,
            beta_z: Some(beta_z),
            sigma_eps_z: Some(sigma_eps_z),
        };
        p.check_shapes()?;
        Ok(p)
    }

    /// Proxies `A + s eps` with `beta = Id` and isotropic noise chosen so that
    /// the signal-to-variance ratio `(1 + s^2)^{-1}` equals `svr` (for unit
    /// anchor variance).
    pub fn isotropic(d_a: usize, svr: f64, two_proxies: bool) -> Result<Self> {
        let s2 = noise_variance_for_svr(svr)?;
        let beta = DMatrix::identity(d_a, d_a);
        let noise = DMatrix::identity(d_a, d_a) * s2;
        if two_proxies {
            Self::pair(beta.clone(), noise.clone(), beta, noise)
        } else {
            Self::single(beta, noise)
        }
    }

    pub fn d_a(&self) -> usize {
        self.beta_w.nrows()
    }
    pub fn d_w(&self) -> usize {
        self.beta_w.ncols()
    }
    pub fn d_z(&self) -> Option<usize> {
        self.beta_z.as_ref().map(|b| b.ncols())
    }
    pub fn has_z(&self) -> bool {
        self.beta_z.is_some()
    }

    fn check_shapes(&self) -> Result<()> {
        let d_w = self.beta_w.ncols();
        linalg::ensure_shape(&self.sigma_eps_w, d_w, d_w, "Sigma_epsW")?;
        match (&self.beta_z, &self.sigma_eps_z) {
            (Some(bz), Some(sz)) => {
                if bz.nrows() != self.beta_w.nrows() {
                    return Err(Error::dim("beta_Z rows", self.beta_w.nrows(), bz.nrows()));
                }
                linalg::ensure_shape(sz, bz.ncols(), bz.ncols(), "Sigma_epsZ")?;
            }
            (None, None) => {}
            _ => {
                return Err(Error::Config(
                    "beta_Z and Sigma_epsZ must be given together".into(),
                ))
            }
        }
        Ok(())
    }
}

/// `s^2 = (1 - x) / x` for a signal-to-variance ratio `x` in `(0, 1]`.
pub fn noise_variance_for_svr(svr: f64) -> Result<f64> {
    if !(svr > 0.0 && svr <= 1.0) {
        return Err(Error::param(
            "svr",
            format!("signal-to-variance ratio must lie in (0, 1], got {svr}"),
        ));
    }
    Ok((1.0 - svr) / svr)
}

/// Intervention `do(A := nu)`.
#[derive(Debug, Clone, PartialEq)]
pub enum InterventionSpec {
    Deterministic(DVector<f64>),
    /// `nu = mean + delta` with `Cov(delta) = cov`, drawn independently of
    /// all noise terms.
    Random { mean: DVector<f64>, cov: DMatrix<f64> },
}

impl InterventionSpec {
    pub fn dim(&self) -> usize {
        match self {
            InterventionSpec::Deterministic(v) => v.len(),
            InterventionSpec::Random { mean, .. } => mean.len(),
        }
    }

    pub fn mean(&self) -> DVector<f64> {
        match self {
            InterventionSpec::Deterministic(v) => v.clone(),
            InterventionSpec::Random { mean, .. } => mean.clone(),
        }
    }

    pub fn cov(&self) -> DMatrix<f64> {
        match self {
            InterventionSpec::Deterministic(v) => DMatrix::zeros(v.len(), v.len()),
            InterventionSpec::Random { cov, .. } => cov.clone(),
        }
    }

    /// `E[nu nu^T] = Sigma_nu + mu mu^T`.
    pub fn second_moment(&self) -> DMatrix<f64> {
        let mu = self.mean();
        self.cov() + &mu * mu.transpose()
    }

    pub fn validate(&self) -> Result<()> {
        if let InterventionSpec::Random { mean, cov } = self {
            linalg::ensure_shape(cov, mean.len(), mean.len(), "Sigma_nu")?;
            check_psd(cov, "Sigma_nu")?;
        }
        Ok(())
    }
}

pub(crate) fn check_psd(m: &DMatrix<f64>, what: &str) -> Result<()> {
    let scale = 1.0 + m.amax();
    let asym = linalg::asymmetry(m);
    if asym > 1e-9 * scale {
        return Err(Error::NotSymmetric {
            what: what.to_string(),
            asymmetry: asym,
        });
    }
    let min = linalg::min_eigenvalue(m);
    if min < -1e-9 * scale {
        return Err(Error::NotPsd {
            what: what.to_string(),
            min_eigenvalue: min,
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Outcome of [`validate_scm`]; failures are carried, not raised.
#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct ValidationReport {
    pub checks: Vec<ValidationCheck>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ValidationCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&ValidationCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// Error naming the first failed check, if any.
    pub fn into_result(self) -> Result<()> {
        match self.failures().next() {
            None => Ok(()),
            Some(c) => Err(Error::InvalidModel(format!("{}: {}", c.name, c.detail))),
        }
    }

    fn push(&mut self, name: &str, passed: bool, detail: String) {
        self.checks.push(ValidationCheck {
            name: name.to_string(),
            passed,
            detail,
        });
    }
}

const PSD_TOL: f64 = 1e-9;

/// Checks invertibility of `Id - B`, definiteness of the covariances and the
/// rank of the proxy loadings.
pub fn validate_scm(scm: &LinearScm, proxies: Option<&ProxyModel>) -> ValidationReport {
    let mut report = ValidationReport::default();
    let d = scm.dims.d();

    let rc = linalg::rcond(&(DMatrix::identity(d, d) - &scm.b));
    report.push(
        "id_minus_b_invertible",
        rc > STRUCTURAL_RCOND_MIN,
        format!("reciprocal condition number {rc:.3e}"),
    );

    let asym_a = linalg::asymmetry(&scm.sigma_a);
    let min_a = linalg::min_eigenvalue(&scm.sigma_a);
    let scale_a = 1.0 + scm.sigma_a.amax();
    report.push(
        "sigma_a_positive_definite",
        asym_a <= PSD_TOL * scale_a && min_a > PSD_TOL * scale_a,
        format!("smallest eigenvalue {min_a:.3e}, asymmetry {asym_a:.3e}"),
    );

    psd_check(&mut report, "sigma_eps_psd", &scm.sigma_eps);

    if let Some(p) = proxies {
        report.push(
            "proxy_anchor_dimension",
            p.d_a() == scm.dims.d_a,
            format!("beta_W has {} rows, d_A = {}", p.d_a(), scm.dims.d_a),
        );
        psd_check(&mut report, "sigma_eps_w_psd", &p.sigma_eps_w);
        rank_check(&mut report, "beta_w_full_rank", &p.beta_w);
        if p.d_a() == scm.dims.d_a {
            let sww = p.beta_w.transpose() * &scm.sigma_a * &p.beta_w + &p.sigma_eps_w;
            let rc = linalg::rcond(&sww);
            report.push(
                "sww_invertible",
                rc > linalg::BLOCK_RCOND_MIN,
                format!("reciprocal condition number of E[WW^T] {rc:.3e}"),
            );
        }
        if let (Some(bz), Some(sz)) = (&p.beta_z, &p.sigma_eps_z) {
            report.push(
                "proxy_z_anchor_dimension",
                bz.nrows() == scm.dims.d_a,
                format!("beta_Z has {} rows, d_A = {}", bz.nrows(), scm.dims.d_a),
            );
            psd_check(&mut report, "sigma_eps_z_psd", sz);
            rank_check(&mut report, "beta_z_full_rank", bz);
        }
    }
    report
}

fn psd_check(report: &mut ValidationReport, name: &str, m: &DMatrix<f64>) {
    let asym = linalg::asymmetry(m);
    let min = linalg::min_eigenvalue(m);
    let scale = 1.0 + m.amax();
    report.push(
        name,
        asym <= PSD_TOL * scale && min >= -PSD_TOL * scale,
        format!("smallest eigenvalue {min:.3e}, asymmetry {asym:.3e}"),
    );
}

fn rank_check(report: &mut ValidationReport, name: &str, m: &DMatrix<f64>) {
    let full = m.nrows().min(m.ncols());
    let rank = m.clone().svd(false, false).rank(1e-10 * (1.0 + m.amax()));
    report.push(
        name,
        rank == full,
        format!("rank {rank} of {}x{}", m.nrows(), m.ncols()),
    );
}

/// Population second moments of `(X, Y, A, W, Z)` implied by the SCM.
///
/// With `G = (Id - B)^{-1}` the structural block has covariance
/// `G (M_A Sigma_A M_A^T + Sigma_eps) G^T`; cross moments with the anchors
/// are `G M_A Sigma_A` and with the proxies `G M_A Sigma_A beta`.
pub fn population_moments(scm: &LinearScm, proxies: Option<&ProxyModel>) -> Result<MomentSet> {
    validate_scm(scm, proxies).into_result()?;
    let dims = scm.dims;
    let (dx, iy) = (dims.d_x, dims.y_index());
    let g = scm.structural_inverse()?;
    let ma_sa = &scm.m_a * &scm.sigma_a;
    let cov_v = &g * (&ma_sa * scm.m_a.transpose() + &scm.sigma_eps) * g.transpose();
    let cov_va = &g * &ma_sa;

    let sxx = linalg::symmetrize(&cov_v.view((0, 0), (dx, dx)).into_owned());
    let sxy = cov_v.view((0, iy), (dx, 1)).column(0).into_owned();
    let syy = cov_v[(iy, iy)];

    let block_from = |cov_vu: &DMatrix<f64>, suu: DMatrix<f64>| AuxBlock {
        sxv: cov_vu.rows(0, dx).into_owned(),
        syv: cov_vu.row(iy).transpose(),
        svv: linalg::symmetrize(&suu),
    };

    let anchor = block_from(&cov_va, scm.sigma_a.clone());
    let mut m = MomentSet::new(sxx, sxy, syy, 0)?.with_anchor(anchor)?;

    if let Some(p) = proxies {
        let sa_bw = &scm.sigma_a * &p.beta_w;
        let sww = p.beta_w.transpose() * &sa_bw + &p.sigma_eps_w;
        m = m.with_proxy_w(block_from(&(&cov_va * &p.beta_w), sww))?;
        m.saw = Some(sa_bw.clone());
        if let (Some(bz), Some(sz)) = (&p.beta_z, &p.sigma_eps_z) {
            let sa_bz = &scm.sigma_a * bz;
            let szz = bz.transpose() * &sa_bz + sz;
            m = m.with_proxy_z(block_from(&(&cov_va * bz), szz))?;
            m.saz = Some(sa_bz);
            m.szw = Some(bz.transpose() * &sa_bw);
        }
    }
    Ok(m)
}

/// Structural residual loadings: `Y - gamma^T X = w_gamma^T (eps + M_A A)`.
pub fn w_gamma(scm: &LinearScm, gamma: &DVector<f64>) -> Result<DVector<f64>> {
    let dims = scm.dims;
    linalg::ensure_len(gamma, dims.d_x, "gamma")?;
    let g = scm.structural_inverse()?;
    let mut w = g.row(dims.y_index()).transpose();
    w -= g.rows(0, dims.d_x).transpose() * gamma;
    Ok(w)
}

/// Anchor sensitivity of the residual, `b_gamma = M_A^T w_gamma`.
pub fn b_gamma(scm: &LinearScm, gamma: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(scm.m_a.transpose() * w_gamma(scm, gamma)?)
}

/// Population MSPE `E[(Y - alpha - gamma^T X)^2]` under `do(A := nu)`:
/// `w^T Sigma_eps w + b^T (Sigma_nu + mu mu^T) b - 2 alpha b^T mu + alpha^2`.
pub fn mspe_under_intervention(
    scm: &LinearScm,
    predictor: &LinearPredictor,
    intervention: &InterventionSpec,
) -> Result<f64> {
    if intervention.dim() != scm.dims.d_a {
        return Err(Error::dim("intervention", scm.dims.d_a, intervention.dim()));
    }
    intervention.validate()?;
    let (gamma, alpha) = predictor.raw_coefficients();
    let w = w_gamma(scm, &gamma)?;
    let b = scm.m_a.transpose() * &w;
    let mu = intervention.mean();
    let noise = linalg::quad_form(&w, &scm.sigma_eps);
    let anchor = linalg::quad_form(&b, &intervention.second_moment());
    let value = noise + anchor - 2.0 * alpha * b.dot(&mu) + alpha * alpha;
    Ok(value.max(0.0))
}

/// Block label used in configuration orderings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockName {
    X,
    Y,
    H,
}

/// JSON-compatible SCM/proxy configuration. Matrices are row-major nested
/// arrays written in the block order given by `ordering`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScmConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub dims: Dims,
    #[serde(default = "canonical_ordering")]
    pub ordering: Vec<BlockName>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    #[serde(rename = "M_A")]
    pub m_a: Vec<Vec<f64>>,
    #[serde(rename = "Sigma_eps", default, skip_serializing_if = "Option::is_none")]
    pub sigma_eps: Option<Vec<Vec<f64>>>,
    #[serde(rename = "Sigma_A", default, skip_serializing_if = "Option::is_none")]
    pub sigma_a: Option<Vec<Vec<f64>>>,
    #[serde(rename = "beta_W", default, skip_serializing_if = "Option::is_none")]
    pub beta_w: Option<Vec<Vec<f64>>>,
    #[serde(rename = "Sigma_epsW", default, skip_serializing_if = "Option::is_none")]
    pub sigma_eps_w: Option<Vec<Vec<f64>>>,
    #[serde(rename = "beta_Z", default, skip_serializing_if = "Option::is_none")]
    pub beta_z: Option<Vec<Vec<f64>>>,
    #[serde(rename = "Sigma_epsZ", default, skip_serializing_if = "Option::is_none")]
    pub sigma_eps_z: Option<Vec<Vec<f64>>>,
}

fn canonical_ordering() -> Vec<BlockName> {
    vec![BlockName::X, BlockName::Y, BlockName::H]
}

impl ScmConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(&path, e))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// `perm[c]` is the row of the configured matrices holding canonical
    /// variable `c`.
    fn permutation(&self) -> Result<Vec<usize>> {
        let mut sorted = self.ordering.clone();
        sorted.sort_by_key(|b| *b as u8);
        if sorted != canonical_ordering() {
            return Err(Error::Config(format!(
                "ordering must be a permutation of [X, Y, H], got {:?}",
                self.ordering
            )));
        }
        let size = |b: BlockName| match b {
            BlockName::X => self.dims.d_x,
            BlockName::Y => self.dims.d_y,
            BlockName::H => self.dims.d_h,
        };
        let mut start = [0usize; 3];
        let mut offset = 0;
        for &b in &self.ordering {
            start[b as usize] = offset;
            offset += size(b);
        }
        let mut perm = Vec::with_capacity(offset);
        for b in canonical_ordering() {
            perm.extend(start[b as usize]..start[b as usize] + size(b));
        }
        Ok(perm)
    }

    pub fn build(&self) -> Result<(LinearScm, Option<ProxyModel>)> {
        let dims = self.dims;
        let d = dims.d();
        let perm = self.permutation()?;
        let b_raw = linalg::from_rows(&self.b, "B")?;
        let m_raw = linalg::from_rows(&self.m_a, "M_A")?;
        linalg::ensure_shape(&b_raw, d, d, "B")?;
        linalg::ensure_shape(&m_raw, d, dims.d_a, "M_A")?;
        let b = DMatrix::from_fn(d, d, |i, j| b_raw[(perm[i], perm[j])]);
        let m_a = DMatrix::from_fn(d, dims.d_a, |i, j| m_raw[(perm[i], j)]);
        let sigma_eps = match &self.sigma_eps {
            Some(rows) => {
                let raw = linalg::from_rows(rows, "Sigma_eps")?;
                linalg::ensure_shape(&raw, d, d, "Sigma_eps")?;
                DMatrix::from_fn(d, d, |i, j| raw[(perm[i], perm[j])])
            }
            None => DMatrix::identity(d, d),
        };
        let sigma_a = match &self.sigma_a {
            Some(rows) => linalg::from_rows(rows, "Sigma_A")?,
            None => DMatrix::identity(dims.d_a, dims.d_a),
        };
        let scm = LinearScm::new(dims, b, m_a, sigma_eps, sigma_a)?;

        let proxies = match (&self.beta_w, &self.sigma_eps_w) {
            (None, None) => None,
            (Some(bw), sw) => {
                let beta_w = linalg::from_rows(bw, "beta_W")?;
                let d_w = beta_w.ncols();
                let sigma_w = match sw {
                    Some(s) => linalg::from_rows(s, "Sigma_epsW")?,
                    None => DMatrix::zeros(d_w, d_w),
                };
                match &self.beta_z {
                    Some(bz) => {
                        let beta_z = linalg::from_rows(bz, "beta_Z")?;
                        let d_z = beta_z.ncols();
                        let sigma_z = match &self.sigma_eps_z {
                            Some(s) => linalg::from_rows(s, "Sigma_epsZ")?,
                            None => DMatrix::zeros(d_z, d_z),
                        };
                        Some(ProxyModel::pair(beta_w, sigma_w, beta_z, sigma_z)?)
                    }
                    None => Some(ProxyModel::single(beta_w, sigma_w)?),
                }
            }
            (None, Some(_)) => {
                return Err(Error::Config("Sigma_epsW given without beta_W".into()))
            }
        };
        Ok((scm, proxies))
    }

    /// Configuration in canonical order describing `scm` and `proxies`.
    pub fn from_model(scm: &LinearScm, proxies: Option<&ProxyModel>) -> Self {
        ScmConfig {
            name: None,
            note: None,
            dims: scm.dims,
            ordering: canonical_ordering(),
            b: linalg::to_rows(&scm.b),
            m_a: linalg::to_rows(&scm.m_a),
            sigma_eps: Some(linalg::to_rows(&scm.sigma_eps)),
            sigma_a: Some(linalg::to_rows(&scm.sigma_a)),
            beta_w: proxies.map(|p| linalg::to_rows(&p.beta_w)),
            sigma_eps_w: proxies.map(|p| linalg::to_rows(&p.sigma_eps_w)),
            beta_z: proxies.and_then(|p| p.beta_z.as_ref().map(linalg::to_rows)),
            sigma_eps_z: proxies.and_then(|p| p.sigma_eps_z.as_ref().map(linalg::to_rows)),
        }
    }
}
