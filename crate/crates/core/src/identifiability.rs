//! One-dimensional families of SCMs over `(A, X, Y, W)` that all induce the
//! same observed covariance of `(X, Y, W)` but differ in the proxy
//! signal-to-variance ratio `rho_W`.
//!
//! The model is `W = beta_W A + eps_W`, `X = beta_X A + eps_X`,
//! `Y = alpha X + beta_Y A + eps_Y` with unit-variance `A`.

use nalgebra::Matrix3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Feasibility slack on `sigma_Y^2`; values in `[-tol, 0)` are clamped.
pub const SIGMA_Y2_TOL: f64 = 1e-10;

/// Observed covariance over `(X, Y, W)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservedCovariance3 {
    pub sxx: f64,
    pub sxy: f64,
    pub sxw: f64,
    pub syy: f64,
    pub syw: f64,
    pub sww: f64,
}

impl ObservedCovariance3 {
    /// From a symmetric matrix ordered `(X, Y, W)`.
    pub fn from_matrix(m: &[[f64; 3]; 3]) -> Result<Self> {
        for i in 0..3 {
            for j in 0..i {
                if (m[i][j] - m[j][i]).abs() > 1e-12 * (1.0 + m[i][j].abs()) {
                    return Err(Error::NotSymmetric {
                        what: "observed covariance".into(),
                        asymmetry: (m[i][j] - m[j][i]).abs(),
                    });
                }
            }
        }
        let s = ObservedCovariance3 {
            sxx: m[0][0],
            sxy: m[0][1],
            sxw: m[0][2],
            syy: m[1][1],
            syw: m[1][2],
            sww: m[2][2],
        };
        s.validate()?;
        Ok(s)
    }

    pub fn to_matrix(&self) -> [[f64; 3]; 3] {
        [
            [self.sxx, self.sxy, self.sxw],
            [self.sxy, self.syy, self.syw],
            [self.sxw, self.syw, self.sww],
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let m = Matrix3::from_fn(|i, j| self.to_matrix()[i][j]);
        let min = m.symmetric_eigenvalues().min();
        if !(min > 0.0) {
            return Err(Error::NotPsd {
                what: "observed covariance (must be positive definite)".into(),
                min_eigenvalue: min,
            });
        }
        if !(self.sxw > 0.0) {
            return Err(Error::InvalidModel(
                "the construction requires W and X to be positively correlated".into(),
            ));
        }
        Ok(())
    }

    /// `corr(W, X)^2`, the smallest admissible `rho_W`.
    pub fn corr_wx2(&self) -> f64 {
        self.sxw * self.sxw / (self.sxx * self.sww)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        let (a, b) = (self.to_matrix(), other.to_matrix());
        let mut worst = 0.0f64;
        for i in 0..3 {
            for j in 0..3 {
                worst = worst.max((a[i][j] - b[i][j]).abs());
            }
        }
        worst
    }
}

/// `theta = (beta_W, beta_X, beta_Y, alpha, sigma_W^2, sigma_X^2, sigma_Y^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScmParams1D {
    pub beta_w: f64,
    pub beta_x: f64,
    pub beta_y: f64,
    pub alpha: f64,
    pub sigma_w2: f64,
    pub sigma_x2: f64,
    pub sigma_y2: f64,
}

/// The member of the family with proxy signal-to-variance ratio `rho_w`.
pub fn theta_from_rho(sigma: &ObservedCovariance3, rho_w: f64) -> Result<ScmParams1D> {
    sigma.validate()?;
    let corr2 = sigma.corr_wx2();
    if !(rho_w > 0.0 && rho_w <= 1.0) {
        return Err(Error::param("rho_w", format!("must lie in (0, 1], got {rho_w}")));
    }
    if rho_w < corr2 {
        return Err(Error::param(
            "rho_w",
            format!("{rho_w} is below corr(W, X)^2 = {corr2:.6}, which would make sigma_X^2 negative"),
        ));
    }
    let s = sigma;
    let beta_w = (s.sww * rho_w).sqrt();
    let sigma_w2 = s.sww * (1.0 - rho_w);
    let rho_x = corr2 / rho_w;
    let beta_x = (s.sxx * rho_x).sqrt();
    let sigma_x2 = s.sxx * (1.0 - rho_x);
    let beta_y = (s.syw - s.sxy * s.sxw / s.sxx) / (beta_w * (1.0 - rho_x));
    if !beta_y.is_finite() {
        return Err(Error::param(
            "rho_w",
            format!("{rho_w} leaves no noise in X (rho_X = 1), so beta_Y is undetermined"),
        ));
    }
    let alpha = (s.sxy - beta_y * beta_x) / s.sxx;
    let mut sigma_y2 = s.syy - beta_y * beta_y - 2.0 * alpha * beta_y * beta_x - alpha * alpha * s.sxx;
    if sigma_y2 < 0.0 {
        if sigma_y2 >= -SIGMA_Y2_TOL {
            sigma_y2 = 0.0;
        } else {
            return Err(Error::param(
                "rho_w",
                format!("{rho_w} is outside the valid set: implied sigma_Y^2 = {sigma_y2:.6e}"),
            ));
        }
    }
    Ok(ScmParams1D {
        beta_w,
        beta_x,
        beta_y,
        alpha,
        sigma_w2,
        sigma_x2,
        sigma_y2,
    })
}

/// Covariance of `(X, Y, W)` implied by `theta`.
pub fn implied_covariance(t: &ScmParams1D) -> ObservedCovariance3 {
    let sxx = t.beta_x * t.beta_x + t.sigma_x2;
    let sxy = t.alpha * sxx + t.beta_y * t.beta_x;
    ObservedCovariance3 {
        sxx,
        sxy,
        sxw: t.beta_w * t.beta_x,
        syy: t.alpha * t.alpha * sxx + 2.0 * t.alpha * t.beta_x * t.beta_y + t.beta_y * t.beta_y + t.sigma_y2,
        syw: t.beta_w * (t.alpha * t.beta_x + t.beta_y),
        sww: t.beta_w * t.beta_w + t.sigma_w2,
    }
}

/// PAR minimizer from observed moments:
/// `(Sxy Sww + lambda Syw Sxw) / (Sxx Sww + lambda Sxw^2)`.
pub fn gamma_par_1d(sigma: &ObservedCovariance3, lambda: f64) -> Result<f64> {
    let s = sigma;
    let den = s.sxx * s.sww + lambda * s.sxw * s.sxw;
    if den.abs() <= 1e-14 * (s.sxx * s.sww).abs() {
        return Err(Error::param("lambda", "the PAR normal equation is degenerate"));
    }
    Ok((s.sxy * s.sww + lambda * s.syw * s.sxw) / den)
}

/// AR minimizer with the anchor observed:
/// `((alpha beta_X^2 + beta_X beta_Y)(1 + lambda) + alpha sigma_X^2) / (beta_X^2 (1 + lambda) + sigma_X^2)`.
pub fn gamma_ar_1d(t: &ScmParams1D, lambda: f64) -> Result<f64> {
    if !(lambda >= -1.0) {
        return Err(Error::param("lambda", format!("must be at least -1, got {lambda}")));
    }
    let bx2 = t.beta_x * t.beta_x;
    let den = bx2 * (1.0 + lambda) + t.sigma_x2;
    if !(den > 0.0) {
        return Err(Error::param(
            "lambda",
            "denominator beta_X^2 (1 + lambda) + sigma_X^2 vanishes",
        ));
    }
    Ok(((t.alpha * bx2 + t.beta_x * t.beta_y) * (1.0 + lambda) + t.alpha * t.sigma_x2) / den)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyRow {
    pub rho_w: f64,
    pub theta: ScmParams1D,
    pub gamma_par: f64,
    pub gamma_ar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyScan {
    pub lambda: f64,
    pub step: f64,
    /// Feasible grid points with their parameters, in increasing `rho_w`.
    pub rows: Vec<FamilyRow>,
    /// Grid points where the construction failed.
    pub infeasible: Vec<f64>,
}

impl FamilyScan {
    pub fn gamma_ar_range(&self) -> Option<(f64, f64)> {
        let mut it = self.rows.iter().map(|r| r.gamma_ar);
        let first = it.next()?;
        Some(it.fold((first, first), |(lo, hi), v| (lo.min(v), hi.max(v))))
    }

    pub fn feasible_range(&self) -> Option<(f64, f64)> {
        Some((self.rows.first()?.rho_w, self.rows.last()?.rho_w))
    }

    /// Whether every grid point in `[lo, hi]` is feasible.
    pub fn covers(&self, lo: f64, hi: f64) -> bool {
        let tol = self.step * 1e-6;
        !self.infeasible.iter().any(|&r| r >= lo - tol && r <= hi + tol)
            && self.rows.iter().any(|r| (r.rho_w - lo).abs() < tol)
            && self.rows.iter().any(|r| (r.rho_w - hi).abs() < tol)
    }

    pub fn write_csv_to<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(out);
        wr.write_record([
            "rho_w", "beta_w", "beta_x", "beta_y", "alpha", "sigma_w2", "sigma_x2", "sigma_y2",
            "gamma_par", "gamma_ar",
        ])?;
        for r in &self.rows {
            let t = &r.theta;
            let vals = [
                r.rho_w, t.beta_w, t.beta_x, t.beta_y, t.alpha, t.sigma_w2, t.sigma_x2, t.sigma_y2,
                r.gamma_par, r.gamma_ar,
            ];
            wr.write_record(vals.iter().map(|v| v.to_string()))?;
        }
        wr.flush().map_err(|e| Error::io("<csv output>", e))?;
        Ok(())
    }
}

/// Evaluates the family on `rho_w = step, 2 step, ..., 1`.
pub fn scan_family(sigma: &ObservedCovariance3, lambda: f64, step: f64) -> Result<FamilyScan> {
    sigma.validate()?;
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::param("step", format!("grid step must lie in (0, 1], got {step}")));
    }
    let count = (1.0 / step).round() as usize;
    let gamma_par = gamma_par_1d(sigma, lambda)?;
    let points: Vec<f64> = (1..=count).map(|i| (i as f64 * step).min(1.0)).collect();
    let results: Vec<(f64, Option<FamilyRow>)> = points
        .par_iter()
        .map(|&rho| {
            let row = theta_from_rho(sigma, rho).ok().and_then(|theta| {
                gamma_ar_1d(&theta, lambda).ok().map(|gamma_ar| FamilyRow {
                    rho_w: rho,
                    theta,
                    gamma_par,
                    gamma_ar,
                })
            });
            (rho, row)
        })
        .collect();
    let mut rows = Vec::new();
    let mut infeasible = Vec::new();
    for (rho, row) in results {
        match row {
            Some(r) => rows.push(r),
            None => infeasible.push(rho),
        }
    }
    Ok(FamilyScan {
        lambda,
        step,
        rows,
        infeasible,
    })
}
