//! Independent reference implementations shared by the integration tests and
//! the acceptance binary. Nothing here calls into the library's numerics.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use pomon::ModelParams;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

pub fn normal_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

/// Random symmetric positive definite matrix with eigenvalues in `[0.2, 2.2]`.
pub fn random_spd(rng: &mut ChaCha8Rng, q: usize) -> DMatrix<f64> {
    let qr = normal_mat(rng, q, q).qr();
    let u = qr.q();
    let d = DMatrix::from_diagonal(&DVector::from_fn(q, |_, _| 0.2 + 2.0 * rng.random::<f64>()));
    let s = &u * d * u.transpose();
    (&s + s.transpose()) * 0.5
}

/// Random stable model: `A` rescaled to a spectral radius drawn from `[0.1, 0.95]`.
pub fn random_stable_model(rng: &mut ChaCha8Rng, q: usize, p: usize) -> ModelParams {
    let raw = normal_mat(rng, q, q);
    let rho = raw
        .clone()
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
        .max(1e-3);
    let target = 0.1 + 0.85 * rng.random::<f64>();
    let a = raw * (target / rho);
    let c = normal_mat(rng, p, q);
    let sigma_q = 0.1 + rng.random::<f64>();
    let sigma_r = 0.1 + rng.random::<f64>();
    ModelParams::new(a, c, sigma_q, sigma_r).unwrap()
}

/// Stationary covariance by plain summation of `A^k Q A'^k`.
pub fn stationary_cov_by_series(a: &DMatrix<f64>, q_noise: &DMatrix<f64>) -> DMatrix<f64> {
    let mut term = q_noise.clone();
    let mut sum = q_noise.clone();
    for _ in 0..20_000 {
        term = a * &term * a.transpose();
        sum += &term;
        if term.norm() < 1e-18 * sum.norm() {
            break;
        }
    }
    sum
}

/// Textbook measurement-update / time-update Kalman filter.
/// Returns the one-step predictions `(x_{t+1|t}, P_{t+1|t})` after every observation.
pub fn classic_kalman(
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    q_noise: &DMatrix<f64>,
    r_noise: &DMatrix<f64>,
    x0: &DVector<f64>,
    p0: &DMatrix<f64>,
    ys: &[DVector<f64>],
) -> Vec<(DVector<f64>, DMatrix<f64>)> {
    let n = a.nrows();
    let mut x = x0.clone();
    let mut p = p0.clone();
    let mut out = Vec::with_capacity(ys.len());
    for y in ys {
        let s = c * &p * c.transpose() + r_noise;
        let k = &p * c.transpose() * s.try_inverse().expect("innovation covariance is invertible");
        let x_f = &x + &k * (y - c * &x);
        let p_f = (DMatrix::identity(n, n) - &k * c) * &p;
        x = a * x_f;
        p = a * p_f * a.transpose() + q_noise;
        p = (&p + p.transpose()) * 0.5;
        out.push((x.clone(), p.clone()));
    }
    out
}

/// `G' C_Z' (C_Z P C_Z' + σ_r² I)⁻¹ C_Z G` with an explicit inverse.
pub fn dense_omega(
    rows: &[usize],
    g: &DMatrix<f64>,
    p_pred: &DMatrix<f64>,
    c: &DMatrix<f64>,
    sigma_r: f64,
) -> DMatrix<f64> {
    let cz = DMatrix::from_fn(rows.len(), c.ncols(), |i, j| c[(rows[i], j)]);
    let v = &cz * p_pred * cz.transpose() + DMatrix::identity(rows.len(), rows.len()) * sigma_r * sigma_r;
    let czg = &cz * g;
    czg.transpose() * v.try_inverse().unwrap() * czg
}

/// Largest `f' Ω f` found on the boundary `(f - f̂)' Σ⁻¹ (f - f̂) = r²` by
/// random directions followed by a shrinking-step local search.
pub fn boundary_brute_force(
    f_hat: &DVector<f64>,
    sigma: &DMatrix<f64>,
    omega: &DMatrix<f64>,
    radius2: f64,
    samples: usize,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let q = f_hat.len();
    let l = sigma.clone().cholesky().expect("Σ is positive definite").l();
    let r = radius2.sqrt();
    let score = |u: &DVector<f64>| {
        let f = f_hat + &l * (u * (r / u.norm()));
        (f.transpose() * omega * &f)[(0, 0)]
    };
    let mut best_u = normal_vec(rng, q);
    let mut best = score(&best_u);
    for _ in 0..samples {
        let u = normal_vec(rng, q);
        let s = score(&u);
        if s > best {
            best = s;
            best_u = u;
        }
    }
    best_u /= best_u.norm();
    let mut step = 0.1;
    while step > 1e-9 {
        let mut improved = false;
        for i in 0..q {
            for sign in [-1.0, 1.0] {
                let mut u = best_u.clone();
                u[i] += sign * step;
                let s = score(&u);
                if s > best {
                    best = s;
                    best_u = &u / u.norm();
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    best
}

/// All `m`-subsets of `0..p` in lexicographic order.
pub fn combinations(p: usize, m: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, p: usize, m: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == m {
            out.push(cur.clone());
            return;
        }
        for i in start..p {
            cur.push(i);
            rec(i + 1, p, m, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, p, m, &mut Vec::new(), &mut out);
    out
}
