//! Sampling from a [`LinearScm`], observationally or under `do(A := nu)`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg;
use crate::scm::{validate_scm, InterventionSpec, LinearScm, ProxyModel};

/// Zero-mean, unit-variance base distribution for all noise terms and
/// anchors; draws are scaled by a square root of the target covariance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseDistribution {
    #[default]
    Gaussian,
    /// Uniform on `[-sqrt(3), sqrt(3)]`.
    Uniform,
    /// `+1` or `-1` with equal probability.
    Rademacher,
}

impl NoiseDistribution {
    pub fn sample<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        match self {
            NoiseDistribution::Gaussian => rng.sample(StandardNormal),
            NoiseDistribution::Uniform => rng.random_range(-3f64.sqrt()..3f64.sqrt()),
            NoiseDistribution::Rademacher => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
        }
    }
}

impl std::str::FromStr for NoiseDistribution {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" | "normal" => Ok(NoiseDistribution::Gaussian),
            "uniform" => Ok(NoiseDistribution::Uniform),
            "rademacher" => Ok(NoiseDistribution::Rademacher),
            other => Err(Error::param("noise", format!("unknown distribution '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationOptions {
    pub noise: NoiseDistribution,
    /// Emit the anchor block `A`.
    pub expose_anchor: bool,
    /// Emit the hidden block `H` (tests only).
    pub expose_hidden: bool,
    /// Emit the structural noise `eps` (tests only).
    pub expose_noise: bool,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        SimulationOptions {
            noise: NoiseDistribution::Gaussian,
            expose_anchor: true,
            expose_hidden: false,
            expose_noise: false,
        }
    }
}

/// Deterministic child seed of `base` for the index path `path`.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    let mut state = splitmix64(base ^ 0x6a09_e667_f3bc_c908);
    for &p in path {
        state = splitmix64(state ^ splitmix64(p.wrapping_add(0x9e37_79b9_7f4a_7c15)));
    }
    state
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `rows x cols` matrix of independent standardized draws, filled row by row.
pub fn standard_draws<R: Rng + ?Sized>(
    rng: &mut R,
    rows: usize,
    cols: usize,
    dist: NoiseDistribution,
) -> DMatrix<f64> {
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        data.push(dist.sample(rng));
    }
    DMatrix::from_row_slice(rows, cols, &data)
}

/// Draws with second moment `cov`: `standard_draws * L^T` with `L L^T = cov`.
pub fn correlated_draws<R: Rng + ?Sized>(
    rng: &mut R,
    rows: usize,
    cov: &DMatrix<f64>,
    dist: NoiseDistribution,
) -> DMatrix<f64> {
    let l = linalg::psd_factor(cov);
    standard_draws(rng, rows, cov.nrows(), dist) * l.transpose()
}

/// Structural block `(X, Y, H)` row-wise: `(A M_A^T + eps) G^T`.
pub fn structural_rows(
    scm: &LinearScm,
    anchors: &DMatrix<f64>,
    eps: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let g = scm.structural_inverse()?;
    Ok((anchors * scm.m_a().transpose() + eps) * g.transpose())
}

/// Observational sample with default options.
pub fn simulate(
    scm: &LinearScm,
    proxies: Option<&ProxyModel>,
    n: usize,
    seed: u64,
) -> Result<Dataset> {
    simulate_with(scm, proxies, n, seed, None, &SimulationOptions::default())
}

/// Sample with `A` replaced by `nu`.
pub fn simulate_intervened(
    scm: &LinearScm,
    proxies: Option<&ProxyModel>,
    intervention: &InterventionSpec,
    n: usize,
    seed: u64,
) -> Result<Dataset> {
    simulate_with(
        scm,
        proxies,
        n,
        seed,
        Some(intervention),
        &SimulationOptions::default(),
    )
}

pub fn simulate_with(
    scm: &LinearScm,
    proxies: Option<&ProxyModel>,
    n: usize,
    seed: u64,
    intervention: Option<&InterventionSpec>,
    opts: &SimulationOptions,
) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::param("n", "sample size must be at least 1"));
    }
    validate_scm(scm, proxies).into_result()?;
    let dims = scm.dims();
    let mut rng = rng_from_seed(seed);

    let anchors = match intervention {
        None => correlated_draws(&mut rng, n, scm.sigma_a(), opts.noise),
        Some(spec) => {
            if spec.dim() != dims.d_a {
                return Err(Error::dim("intervention", dims.d_a, spec.dim()));
            }
            spec.validate()?;
            let mean = spec.mean();
            let mut a = match spec {
                InterventionSpec::Deterministic(_) => DMatrix::zeros(n, dims.d_a),
                InterventionSpec::Random { cov, .. } => correlated_draws(&mut rng, n, cov, opts.noise),
            };
            for mut row in a.row_iter_mut() {
                row += mean.transpose();
            }
            a
        }
    };
    let eps = correlated_draws(&mut rng, n, scm.sigma_eps(), opts.noise);
    let v = structural_rows(scm, &anchors, &eps)?;

    let (dx, iy) = (dims.d_x, dims.y_index());
    let mut data = Dataset::new(
        v.columns(0, dx).into_owned(),
        DVector::from_iterator(n, v.column(iy).iter().copied()),
    )?;
    if let Some(p) = proxies {
        let w = &anchors * &p.beta_w + correlated_draws(&mut rng, n, &p.sigma_eps_w, opts.noise);
        data = data.with_w(w)?;
        if let (Some(bz), Some(sz)) = (&p.beta_z, &p.sigma_eps_z) {
            let z = &anchors * bz + correlated_draws(&mut rng, n, sz, opts.noise);
            data = data.with_z(z)?;
        }
    }
    if opts.expose_hidden {
        data.h = Some(v.columns(iy + 1, dims.d_h).into_owned());
    }
    if opts.expose_noise {
        data.eps = Some(eps);
    }
    if opts.expose_anchor {
        data = data.with_a(anchors)?;
    }
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scm::Dims;

    #[test]
    fn same_seed_same_data() {
        let (scm, p) = crate::bundles::e1(0.5).unwrap();
        let a = simulate(&scm, Some(&p), 50, 7).unwrap();
        let b = simulate(&scm, Some(&p), 50, 7).unwrap();
        assert_eq!(a, b);
        let c = simulate(&scm, Some(&p), 50, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_rows_rejected() {
        let (scm, _) = crate::bundles::e4().unwrap();
        assert!(simulate(&scm, None, 0, 1).is_err());
    }

    #[test]
    fn deterministic_zero_intervention_zeroes_anchor() {
        let (scm, _) = crate::bundles::e4().unwrap();
        let nu = InterventionSpec::Deterministic(DVector::zeros(2));
        let d = simulate_intervened(&scm, None, &nu, 20, 3).unwrap();
        assert_eq!(d.a.unwrap().amax(), 0.0);
    }

    #[test]
    fn pure_noise_moments_approach_identity() {
        let dims = Dims::new(2, 1, 1);
        let scm =
            LinearScm::with_unit_noise(dims, DMatrix::zeros(4, 4), DMatrix::zeros(4, 1)).unwrap();
        let d = simulate(&scm, None, 200_000, 11).unwrap();
        let m = (d.x.transpose() * &d.x) / d.n() as f64;
        assert!((m - DMatrix::identity(2, 2)).amax() < 0.02);
    }

    #[test]
    fn hidden_block_only_on_request() {
        let (scm, _) = crate::bundles::e1(1.0).unwrap();
        let d = simulate(&scm, None, 5, 1).unwrap();
        assert!(d.h.is_none() && d.eps.is_none());
        let opts = SimulationOptions {
            expose_hidden: true,
            expose_noise: true,
            ..Default::default()
        };
        let d = simulate_with(&scm, None, 5, 1, None, &opts).unwrap();
        assert_eq!(d.h.unwrap().ncols(), 1);
    }

    #[test]
    fn alternative_noise_has_unit_variance() {
        let mut rng = rng_from_seed(5);
        for dist in [NoiseDistribution::Uniform, NoiseDistribution::Rademacher] {
            let draws = standard_draws(&mut rng, 100_000, 1, dist);
            let var = draws.iter().map(|v| v * v).sum::<f64>() / 100_000.0;
            assert!((var - 1.0).abs() < 0.02, "{dist:?}: {var}");
        }
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(1, &[0, 1]), derive_seed(1, &[1, 0]));
        assert_eq!(derive_seed(9, &[3]), derive_seed(9, &[3]));
    }
}
