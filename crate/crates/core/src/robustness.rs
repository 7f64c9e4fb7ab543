//! Robustness sets in the PSD order, the anchor and cross-proxy penalties
//! and the analytic worst-case MSPE with its maximizing intervention.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{fit_par, FitSpec, LinearPredictor};
use crate::linalg::{self, BLOCK_RCOND_MIN, STRUCTURAL_RCOND_MIN};
use crate::moments::{Aux, MomentSet};
use crate::scm::{self, check_psd, LinearScm, ProxyModel};

/// `Omega_W = Saw Sww^{-1} Saw^T`, symmetrized.
pub fn omega_w(saa: &DMatrix<f64>, saw: &DMatrix<f64>, sww: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    linalg::ensure_square(saa, "Saa")?;
    linalg::ensure_shape(saw, saa.nrows(), sww.nrows(), "Saw")?;
    let sww_inv = linalg::inverse_checked(sww, "Sww", BLOCK_RCOND_MIN)?;
    Ok(linalg::symmetrize(&(saw * sww_inv * saw.transpose())))
}

/// `Omega_W` implied by the anchor covariance and proxy model.
pub fn omega_w_population(sigma_a: &DMatrix<f64>, proxies: &ProxyModel) -> Result<DMatrix<f64>> {
    let saw = sigma_a * &proxies.beta_w;
    let sww = proxies.beta_w.transpose() * &saw + &proxies.sigma_eps_w;
    omega_w(sigma_a, &saw, &sww)
}

/// Default tolerance of PSD comparisons: `1e-9 (1 + ||D - C||)`.
pub fn psd_tolerance(diff: &DMatrix<f64>) -> f64 {
    1e-9 * (1.0 + diff.norm())
}

fn psd_gap(c: &DMatrix<f64>, d: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
    linalg::ensure_square(c, "C")?;
    linalg::ensure_shape(d, c.nrows(), c.ncols(), "D")?;
    for (m, what) in [(c, "C"), (d, "D")] {
        let asym = linalg::asymmetry(m);
        if asym > 1e-9 * (1.0 + m.amax()) {
            return Err(Error::NotSymmetric {
                what: what.to_string(),
                asymmetry: asym,
            });
        }
    }
    let diff = d - c;
    Ok((linalg::min_eigenvalue(&diff), diff))
}

/// `C <= D` in the PSD order: `lambda_min(D - C) >= -tol`.
pub fn psd_leq(c: &DMatrix<f64>, d: &DMatrix<f64>, tol: Option<f64>) -> Result<bool> {
    let (min, diff) = psd_gap(c, d)?;
    Ok(min >= -tol.unwrap_or_else(|| psd_tolerance(&diff)))
}

/// Strict order: `lambda_min(D - C) > tol`.
pub fn psd_lt(c: &DMatrix<f64>, d: &DMatrix<f64>, tol: Option<f64>) -> Result<bool> {
    let (min, diff) = psd_gap(c, d)?;
    Ok(min > tol.unwrap_or_else(|| psd_tolerance(&diff)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SetKind {
    Ols,
    Ar,
    Par,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SetLabel {
    Ols,
    Ar { lambda: f64 },
    Par { lambda: f64 },
    Custom { name: String },
}

/// `{nu : E[nu nu^T] <= S}`.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessSet {
    pub bound: DMatrix<f64>,
    pub label: SetLabel,
}

impl RobustnessSet {
    pub fn custom(bound: DMatrix<f64>, name: impl Into<String>) -> Result<Self> {
        linalg::ensure_square(&bound, "robustness bound")?;
        check_psd(&bound, "robustness bound")?;
        Ok(RobustnessSet {
            bound: linalg::symmetrize(&bound),
            label: SetLabel::Custom { name: name.into() },
        })
    }

    /// Whether every intervention allowed by `self` is allowed by `other`.
    pub fn is_subset_of(&self, other: &RobustnessSet) -> Result<bool> {
        psd_leq(&self.bound, &other.bound, None)
    }

    pub fn record(&self) -> RobustnessSetRecord {
        RobustnessSetRecord {
            label: self.label.clone(),
            bound: linalg::to_rows(&self.bound),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessSetRecord {
    pub label: SetLabel,
    pub bound: Vec<Vec<f64>>,
}

/// `Sigma_A` (OLS), `(1 + lambda) Sigma_A` (AR) or `Sigma_A + lambda Omega_W` (PAR).
pub fn build_set(
    kind: SetKind,
    saa: &DMatrix<f64>,
    lambda: f64,
    omega: Option<&DMatrix<f64>>,
) -> Result<RobustnessSet> {
    linalg::ensure_square(saa, "Saa")?;
    if kind != SetKind::Ols && !(lambda >= -1.0 && lambda.is_finite()) {
        return Err(Error::param("lambda", format!("must be at least -1, got {lambda}")));
    }
    let (bound, label) = match kind {
        SetKind::Ols => (saa.clone(), SetLabel::Ols),
        SetKind::Ar => (saa * (1.0 + lambda), SetLabel::Ar { lambda }),
        SetKind::Par => {
            let omega = omega.ok_or_else(|| Error::param("omega", "required for a PAR set"))?;
            linalg::ensure_shape(omega, saa.nrows(), saa.ncols(), "Omega_W")?;
            (saa + omega * lambda, SetLabel::Par { lambda })
        }
    };
    Ok(RobustnessSet {
        bound: linalg::symmetrize(&bound),
        label,
    })
}

/// `E[R V^T] Svv^{-1} E[V R] = r^T Svv^{-1} r` with `r = syv - Svx gamma`.
pub fn pls_penalty(m: &MomentSet, aux: Aux, gamma: &DVector<f64>) -> Result<f64> {
    let block = m.block(aux)?;
    linalg::ensure_len(gamma, m.d_x(), "gamma")?;
    let what = format!("second moment of {}", aux.name());
    let rc = linalg::rcond(&block.svv);
    if !(rc >= BLOCK_RCOND_MIN) {
        return Err(Error::Singular { what, rcond: rc });
    }
    let r = &block.syv - block.sxv.transpose() * gamma;
    let s = linalg::solve_symmetric(&block.svv, &r, &what)?;
    Ok(r.dot(&s).max(0.0))
}

/// `E[R W^T] E[ZW^T]^{-1} E[Z R]`.
pub fn cross_penalty(m: &MomentSet, gamma: &DVector<f64>) -> Result<f64> {
    let w = m.block(Aux::W)?;
    let z = m.block(Aux::Z)?;
    let szw = m.szw_required()?;
    linalg::ensure_len(gamma, m.d_x(), "gamma")?;
    let rc = linalg::rcond(szw);
    if szw.nrows() != szw.ncols() || !(rc >= STRUCTURAL_RCOND_MIN) {
        return Err(Error::Singular {
            what: "cross-proxy moment E[ZW^T] (the proxies need equal dimension and full-rank loadings)".into(),
            rcond: rc,
        });
    }
    let r_w = &w.syv - w.sxv.transpose() * gamma;
    let r_z = &z.syv - z.sxv.transpose() * gamma;
    let s = szw.clone().lu().solve(&r_z).ok_or_else(|| Error::Singular {
        what: "E[ZW^T]".into(),
        rcond: rc,
    })?;
    Ok(r_w.dot(&s))
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorstCase {
    pub value: f64,
    pub nu_star: DVector<f64>,
    /// `b_gamma^T S b_gamma` vanishes: the loss does not depend on the
    /// intervention and no maximizing direction exists.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorstCaseRecord {
    pub set: RobustnessSetRecord,
    pub value: f64,
    pub nu_star: Vec<f64>,
    pub degenerate: bool,
}

impl WorstCase {
    pub fn record(&self, set: &RobustnessSet) -> WorstCaseRecord {
        WorstCaseRecord {
            set: set.record(),
            value: self.value,
            nu_star: self.nu_star.iter().copied().collect(),
            degenerate: self.degenerate,
        }
    }
}

/// Relative size below which `b^T S b` is treated as zero.
const DEGENERATE_REL: f64 = 1e-14;

/// `sup_{E[nu nu^T] <= S} E_do(A:=nu)[(Y - gamma^T X)^2]
///   = w^T Sigma_eps w + b^T S b`, attained at `nu* = S b / sqrt(b^T S b)`.
pub fn worst_case_mspe(
    scm: &LinearScm,
    predictor: &LinearPredictor,
    set: &RobustnessSet,
) -> Result<WorstCase> {
    let (gamma, alpha) = predictor.raw_coefficients();
    if alpha != 0.0 {
        return Err(Error::param(
            "alpha",
            "the worst case over a centred robustness set is defined for predictors without intercept; \
             use mspe_under_intervention for targeted predictors",
        ));
    }
    let d_a = scm.dims().d_a;
    linalg::ensure_shape(&set.bound, d_a, d_a, "robustness bound")?;
    check_psd(&set.bound, "robustness bound")?;
    let w = scm::w_gamma(scm, &gamma)?;
    let b = scm.m_a().transpose() * &w;
    let noise = linalg::quad_form(&w, scm.sigma_eps());
    let sb = &set.bound * &b;
    let q = b.dot(&sb).max(0.0);
    let scale = b.norm_squared() * (1.0 + set.bound.norm());
    if !(q > DEGENERATE_REL * scale) {
        return Ok(WorstCase {
            value: noise + q,
            nu_star: DVector::zeros(d_a),
            degenerate: true,
        });
    }
    Ok(WorstCase {
        value: noise + q,
        nu_star: sb / q.sqrt(),
        degenerate: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatedVsActual {
    /// PAR objective at the fitted coefficients.
    pub estimated: f64,
    /// True worst-case MSPE over `(1 + svr lambda) Sigma_A`.
    pub actual: f64,
    pub gamma: Vec<f64>,
}

/// Signal-to-variance ratio of an isotropic single-proxy model, i.e. the
/// scalar `rho` with `Omega_W = rho Sigma_A`.
pub fn isotropic_svr(sigma_a: &DMatrix<f64>, proxies: &ProxyModel) -> Result<f64> {
    let omega = omega_w_population(sigma_a, proxies)?;
    let rho = omega.trace() / sigma_a.trace();
    let gap = (&omega - sigma_a * rho).amax();
    if gap > 1e-8 * (1.0 + sigma_a.amax()) {
        return Err(Error::InvalidModel(
            "proxy noise is anisotropic: Omega_W is not a multiple of Sigma_A, so no scalar \
             signal-to-variance correction exists (it is not identifiable from observed data)"
                .into(),
        ));
    }
    Ok(rho)
}

/// PAR fitted on population moments, its objective value as the estimated
/// worst case over `{E[nu nu^T] <= (1 + assumed_svr lambda) Sigma_A}`, and
/// the true worst case over that set.
pub fn estimated_vs_actual_worst_case(
    scm: &LinearScm,
    proxies: &ProxyModel,
    lambda: f64,
    assumed_svr: f64,
) -> Result<EstimatedVsActual> {
    let m = scm::population_moments(scm, Some(proxies))?;
    estimated_vs_actual_from_moments(scm, proxies, &m, lambda, assumed_svr)
}

/// As [`estimated_vs_actual_worst_case`] with PAR fitted on `moments`
/// (typically sample moments drawn from `scm`).
pub fn estimated_vs_actual_from_moments(
    scm: &LinearScm,
    proxies: &ProxyModel,
    moments: &MomentSet,
    lambda: f64,
    assumed_svr: f64,
) -> Result<EstimatedVsActual> {
    if !(assumed_svr > 0.0 && assumed_svr <= 1.0) {
        return Err(Error::param("assumed_svr", format!("must lie in (0, 1], got {assumed_svr}")));
    }
    isotropic_svr(scm.sigma_a(), proxies)?;
    let fitted = fit_par(moments, lambda)?;
    let mut uncentred = fitted.clone();
    uncentred.alpha = 0.0;
    let estimated = FitSpec::Par { lambda }.objective(moments, &fitted.gamma, 0.0)?;
    let set = build_set(SetKind::Ar, scm.sigma_a(), assumed_svr * lambda, None)?;
    let actual = worst_case_mspe(scm, &uncentred, &set)?.value;
    Ok(EstimatedVsActual {
        estimated,
        actual,
        gamma: fitted.gamma.iter().copied().collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::Method;

    #[test]
    fn omega_noiseless_equals_sigma_a() {
        let sa = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let p = ProxyModel::single(DMatrix::identity(2, 2), DMatrix::zeros(2, 2)).unwrap();
        let om = omega_w_population(&sa, &p).unwrap();
        assert!(linalg::max_abs_diff(&om, &sa) < 1e-12);
    }

    #[test]
    fn omega_one_dimensional_is_rho() {
        let (bw, s2) = (1.7, 0.8);
        let p = ProxyModel::single(DMatrix::from_element(1, 1, bw), DMatrix::from_element(1, 1, s2)).unwrap();
        let om = omega_w_population(&DMatrix::identity(1, 1), &p).unwrap();
        assert!((om[(0, 0)] - bw * bw / (bw * bw + s2)).abs() < 1e-15);
    }

    #[test]
    fn psd_order_witnesses() {
        let i = DMatrix::<f64>::identity(2, 2);
        assert!(psd_leq(&i, &i, None).unwrap());
        assert!(psd_leq(&i, &(&i * 2.0), None).unwrap());
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 0.0]));
        assert!(!psd_leq(&a, &i, None).unwrap());
        assert!(!psd_leq(&i, &a, None).unwrap());
        assert!(!psd_lt(&i, &i, None).unwrap());
    }

    #[test]
    fn asymmetric_input_rejected() {
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        assert!(psd_leq(&c, &c, None).is_err());
    }

    #[test]
    fn build_set_bounds() {
        let sa = DMatrix::<f64>::identity(1, 1);
        assert_eq!(build_set(SetKind::Ar, &sa, 0.0, None).unwrap().bound, sa);
        let rho = DMatrix::from_element(1, 1, 0.3);
        let par = build_set(SetKind::Par, &sa, 5.0, Some(&rho)).unwrap();
        assert!((par.bound[(0, 0)] - 2.5).abs() < 1e-15);
        assert!(build_set(SetKind::Ar, &sa, -2.0, None).is_err());
        assert!(build_set(SetKind::Par, &sa, 1.0, None).is_err());
    }

    #[test]
    fn worst_case_refuses_intercept() {
        let (scm, _) = crate::bundles::e4().unwrap();
        let p = LinearPredictor::new(Method::Tar, DVector::zeros(2), 0.5);
        let set = build_set(SetKind::Ols, scm.sigma_a(), 0.0, None).unwrap();
        assert!(worst_case_mspe(&scm, &p, &set).is_err());
    }

    #[test]
    fn invariant_predictor_is_degenerate() {
        // X := A + eps_X, Y := X + eps_Y: gamma = 1 removes the anchor
        let dims = crate::scm::Dims::new(1, 1, 1);
        let mut b = DMatrix::zeros(3, 3);
        b[(1, 0)] = 1.0;
        let scm = LinearScm::with_unit_noise(dims, b, DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.0])).unwrap();
        let p = LinearPredictor::new(Method::Ar, DVector::from_element(1, 1.0), 0.0);
        for s in [0.5, 3.0, 100.0] {
            let set = RobustnessSet::custom(DMatrix::from_element(1, 1, s), "c").unwrap();
            let wc = worst_case_mspe(&scm, &p, &set).unwrap();
            assert!(wc.degenerate);
            assert!((wc.value - 1.0).abs() < 1e-14);
            assert_eq!(wc.nu_star[0], 0.0);
        }
    }

    #[test]
    fn anisotropic_noise_rejected() {
        let (scm, _) = crate::bundles::e1(1.0).unwrap();
        let p = ProxyModel::single(DMatrix::identity(3, 3), DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 3.0]))).unwrap();
        let err = estimated_vs_actual_worst_case(&scm, &p, 5.0, 0.4).unwrap_err();
        assert!(err.to_string().contains("anisotropic"));
    }

    #[test]
    fn correct_svr_gives_matching_estimate() {
        let (scm, p) = crate::bundles::e1(0.4).unwrap();
        let r = estimated_vs_actual_worst_case(&scm, &p, 5.0, 0.4).unwrap();
        assert!((r.estimated - r.actual).abs() < 1e-8 * r.actual);
    }
}
