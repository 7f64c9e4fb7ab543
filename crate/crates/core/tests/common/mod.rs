//! Test-only oracles: random models, objectives written out from the moment
//! blocks, and a derivative-free quasi-Newton minimizer.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use proxy_anchor::moments::MomentSet;
use proxy_anchor::scm::{Dims, LinearScm, ProxyModel};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
}

/// `L L^T + ridge Id` for a random `L`.
pub fn random_pd(rng: &mut ChaCha8Rng, d: usize, ridge: f64) -> DMatrix<f64> {
    let l = uniform(rng, d, d, 1.0);
    &l * l.transpose() + DMatrix::identity(d, d) * ridge
}

fn rcond_1(m: &DMatrix<f64>) -> f64 {
    let s = m.clone().svd(false, false).singular_values;
    s.min() / s.max()
}

/// Random SCM with `d_X, d_A <= max_d`, cyclic `B` kept well away from
/// singularity, PD noise and a two-proxy model with `d_W = d_Z = d_A`.
pub fn random_model(rng: &mut ChaCha8Rng, max_d: usize, proxy_noise: bool) -> (LinearScm, ProxyModel) {
    let d_x = rng.random_range(1..=max_d);
    let d_a = rng.random_range(1..=max_d);
    let d_h = rng.random_range(1..=2);
    let dims = Dims::new(d_x, d_h, d_a);
    let d = dims.d();
    let b = loop {
        let mut b = uniform(rng, d, d, 0.5);
        for i in 0..d {
            b[(i, i)] = 0.0;
        }
        let id_minus = DMatrix::identity(d, d) - &b;
        if rcond_1(&id_minus) > 0.05 {
            break b;
        }
    };
    let m_a = uniform(rng, d, d_a, 2.0);
    let sigma_eps = random_pd(rng, d, 0.3);
    let sigma_a = random_pd(rng, d_a, 0.5);
    let loading = |rng: &mut ChaCha8Rng| DMatrix::identity(d_a, d_a) + uniform(rng, d_a, d_a, 0.3);
    let noise = |rng: &mut ChaCha8Rng| {
        if proxy_noise {
            random_pd(rng, d_a, 0.2)
        } else {
            DMatrix::zeros(d_a, d_a)
        }
    };
    let bw = loading(rng);
    let sw = noise(rng);
    let bz = loading(rng);
    let sz = noise(rng);
    let scm = LinearScm::new(dims, b, m_a, sigma_eps, sigma_a).unwrap();
    (scm, ProxyModel::pair(bw, sw, bz, sz).unwrap())
}

pub fn random_vec(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(d, |_, _| rng.random_range(-scale..scale))
}

/// Residual loadings written out directly: `Y - gamma^T X = w^T (eps + M_A A)`.
pub fn residual_loading(scm: &LinearScm, gamma: &DVector<f64>) -> DVector<f64> {
    let dims = scm.dims();
    let d = dims.d();
    let g = (DMatrix::identity(d, d) - scm.b()).try_inverse().unwrap();
    let mut w = g.row(dims.y_index()).transpose();
    for j in 0..dims.d_x {
        w -= g.row(j).transpose() * gamma[j];
    }
    w
}

/// MSPE of `x -> gamma^T x` under `do(A := nu)` for a constant `nu`.
pub fn mspe_at(scm: &LinearScm, gamma: &DVector<f64>, nu: &DVector<f64>) -> f64 {
    let w = residual_loading(scm, gamma);
    let b = scm.m_a().transpose() * &w;
    (w.transpose() * scm.sigma_eps() * &w)[(0, 0)] + b.dot(nu).powi(2)
}

pub fn ls(m: &MomentSet, g: &DVector<f64>) -> f64 {
    m.syy - 2.0 * g.dot(&m.sxy) + (g.transpose() * &m.sxx * g)[(0, 0)]
}

fn resid(sxv: &DMatrix<f64>, syv: &DVector<f64>, g: &DVector<f64>) -> DVector<f64> {
    syv - sxv.transpose() * g
}

/// `E[R V^T] Svv^{-1} E[V R]`.
pub fn projected(m: &MomentSet, which: char, g: &DVector<f64>) -> f64 {
    let blk = match which {
        'a' => m.anchor.as_ref(),
        'w' => m.proxy_w.as_ref(),
        _ => m.proxy_z.as_ref(),
    }
    .unwrap();
    let r = resid(&blk.sxv, &blk.syv, g);
    (r.transpose() * blk.svv.clone().try_inverse().unwrap() * &r)[(0, 0)]
}

/// `E[R W^T] E[Z W^T]^{-1} E[Z R]`.
pub fn cross(m: &MomentSet, g: &DVector<f64>) -> f64 {
    let (w, z) = (m.proxy_w.as_ref().unwrap(), m.proxy_z.as_ref().unwrap());
    let rw = resid(&w.sxv, &w.syv, g);
    let rz = resid(&z.sxv, &z.syv, g);
    let szw_inv = m.szw.as_ref().unwrap().clone().try_inverse().unwrap();
    (rw.transpose() * szw_inv * rz)[(0, 0)]
}

/// Targeted objective with residual coefficient `c` on the auxiliary.
pub fn targeted(m: &MomentSet, g: &DVector<f64>, alpha: f64, c: DVector<f64>, svv: &DMatrix<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    ls(m, g) + (c.transpose() * (cov - svv) * &c)[(0, 0)] + (c.dot(mean) - alpha).powi(2)
}

pub fn tar_objective(m: &MomentSet, which: char, g: &DVector<f64>, alpha: f64, mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let blk = if which == 'a' { m.anchor.as_ref() } else { m.proxy_w.as_ref() }.unwrap();
    let c = blk.svv.clone().try_inverse().unwrap() * resid(&blk.sxv, &blk.syv, g);
    targeted(m, g, alpha, c, &blk.svv, mean, cov)
}

pub fn xtar_objective(m: &MomentSet, g: &DVector<f64>, alpha: f64, mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let (w, z) = (m.proxy_w.as_ref().unwrap(), m.proxy_z.as_ref().unwrap());
    let a = m.szw.as_ref().unwrap().clone().try_inverse().unwrap() * resid(&z.sxv, &z.syv, g);
    targeted(m, g, alpha, a, &w.svv, mean, cov)
}

fn fd_gradient(f: &dyn Fn(&DVector<f64>) -> f64, x: &DVector<f64>) -> DVector<f64> {
    let mut g = DVector::zeros(x.len());
    for i in 0..x.len() {
        let h = 1e-5 * (1.0 + x[i].abs());
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += h;
        xm[i] -= h;
        g[i] = (f(&xp) - f(&xm)) / (2.0 * h);
    }
    g
}

/// BFGS with central-difference gradients and a backtracking line search.
pub fn minimize(f: &dyn Fn(&DVector<f64>) -> f64, x0: DVector<f64>) -> DVector<f64> {
    let n = x0.len();
    let mut x = x0;
    let mut h_inv = DMatrix::<f64>::identity(n, n);
    let mut g = fd_gradient(f, &x);
    let mut fx = f(&x);
    for _ in 0..500 {
        if g.amax() < 1e-10 {
            break;
        }
        let mut p = -(&h_inv * &g);
        if p.dot(&g) >= 0.0 {
            h_inv = DMatrix::identity(n, n);
            p = -g.clone();
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let xn = &x + &p * t;
            let fnew = f(&xn);
            if fnew <= fx + 1e-4 * t * p.dot(&g) {
                accepted = Some((xn, fnew));
                break;
            }
            t *= 0.5;
        }
        let Some((xn, fnew)) = accepted else { break };
        let gn = fd_gradient(f, &xn);
        let s = &xn - &x;
        let y = &gn - &g;
        let sy = s.dot(&y);
        if sy > 1e-14 {
            let rho = 1.0 / sy;
            let i = DMatrix::<f64>::identity(n, n);
            let left = &i - &s * y.transpose() * rho;
            let right = &i - &y * s.transpose() * rho;
            h_inv = &left * &h_inv * &right + &s * s.transpose() * rho;
        }
        x = xn;
        g = gn;
        fx = fnew;
    }
    x
}
