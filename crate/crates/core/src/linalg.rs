//! Small dense linear-algebra helpers shared by the filter, detector and sampler.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

pub const LYAPUNOV_TOL: f64 = 1e-15;
pub const LYAPUNOV_MAX_ITERS: usize = 64;

/// Replace `m` by `(m + m')/2`.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Rows of `c` listed in `rows`, in that order.
pub fn select_rows(c: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), c.ncols(), |i, j| c[(rows[i], j)])
}

/// Principal submatrix `m[rows, rows]`.
pub fn principal_submatrix(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), rows.len(), |i, j| m[(rows[i], rows[j])])
}

/// Cholesky factor of a symmetric positive-definite matrix together with a
/// cheap reciprocal condition estimate `(min diag L / max diag L)^2`.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
    rcond: f64,
}

impl SpdFactor {
    /// Factor `m`; `None` when it is not numerically positive definite or
    /// its reciprocal condition estimate falls below `min_rcond`.
    pub fn new(m: &DMatrix<f64>, min_rcond: f64) -> std::result::Result<Self, f64> {
        let chol = Cholesky::new(m.clone()).ok_or(0.0)?;
        let l = chol.l_dirty();
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for i in 0..l.nrows() {
            let d = l[(i, i)].abs();
            lo = lo.min(d);
            hi = hi.max(d);
        }
        let rcond = if hi > 0.0 { (lo / hi).powi(2) } else { 0.0 };
        if !(rcond >= min_rcond) {
            return Err(rcond);
        }
        Ok(Self { chol, rcond })
    }

    pub fn rcond(&self) -> f64 {
        self.rcond
    }

    pub fn l(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    pub fn solve_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    /// `L^{-1} b`.
    pub fn whiten_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol
            .l_dirty()
            .solve_lower_triangular(b)
            .expect("cholesky factor has a nonzero diagonal")
    }

    /// `L^{-1} b`.
    pub fn whiten_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol
            .l_dirty()
            .solve_lower_triangular(b)
            .expect("cholesky factor has a nonzero diagonal")
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        let mut inv = self.chol.inverse();
        symmetrize(&mut inv);
        inv
    }
}

/// `out = a b` by plain loops; cheaper than the blocked kernel for the
/// handful-of-rows matrices updated at every step.
pub fn mul_into(out: &mut DMatrix<f64>, a: &DMatrix<f64>, b: &DMatrix<f64>) {
    let (n, k, m) = (a.nrows(), a.ncols(), b.ncols());
    debug_assert_eq!(b.nrows(), k);
    debug_assert_eq!(out.shape(), (n, m));
    let (a, b, o) = (a.as_slice(), b.as_slice(), out.as_mut_slice());
    for j in 0..m {
        let oj = &mut o[j * n..(j + 1) * n];
        oj.fill(0.0);
        for l in 0..k {
            let blj = b[j * k + l];
            if blj != 0.0 {
                for (oi, ai) in oj.iter_mut().zip(&a[l * n..(l + 1) * n]) {
                    *oi += ai * blj;
                }
            }
        }
    }
}

/// `acc += a' a`.
pub fn add_gram(acc: &mut DMatrix<f64>, a: &DMatrix<f64>) {
    let (n, q) = (a.nrows(), a.ncols());
    debug_assert_eq!(acc.shape(), (q, q));
    let s = a.as_slice();
    for j in 0..q {
        let aj = &s[j * n..(j + 1) * n];
        for i in 0..=j {
            let ai = &s[i * n..(i + 1) * n];
            let d: f64 = ai.iter().zip(aj).map(|(x, y)| x * y).sum();
            acc[(i, j)] += d;
            if i != j {
                acc[(j, i)] += d;
            }
        }
    }
}

/// `acc += a' v`.
pub fn add_tr_mul_vec(acc: &mut DVector<f64>, a: &DMatrix<f64>, v: &DVector<f64>) {
    let n = a.nrows();
    let s = a.as_slice();
    for (j, out) in acc.iter_mut().enumerate() {
        *out += s[j * n..(j + 1) * n].iter().zip(v.iter()).map(|(x, y)| x * y).sum::<f64>();
    }
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    a.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Stationary covariance `S = A S A' + Q` by the doubling iteration
/// `S <- S + A_k S A_k'`, `A_k <- A_k^2`.
pub fn lyapunov_fixed_point(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut s = q.clone();
    let mut ak = a.clone();
    for _ in 0..LYAPUNOV_MAX_ITERS {
        let increment = &ak * &s * ak.transpose();
        s += &increment;
        symmetrize(&mut s);
        ak = &ak * &ak;
        if !s.iter().all(|v| v.is_finite()) {
            break;
        }
        if increment.amax() <= LYAPUNOV_TOL * s.amax() {
            return Ok(s);
        }
    }
    Err(Error::NoConvergence {
        what: "stationary covariance iteration",
        iterations: LYAPUNOV_MAX_ITERS,
    })
}

/// Symmetric square root `U diag(sqrt(max(λ, 0))) U'` of a PSD matrix.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = m.clone().symmetric_eigen();
    let mut scaled = eig.eigenvectors.clone();
    for (j, &lambda) in eig.eigenvalues.iter().enumerate() {
        let s = lambda.max(0.0).sqrt();
        scaled.column_mut(j).scale_mut(s);
    }
    scaled * eig.eigenvectors.transpose()
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigen().eigenvalues.min()
}
