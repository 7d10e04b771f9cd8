//! Windowed GLRT for a mean shift in the latent state.
//!
//! For each candidate change point `k` (first affected step `k+1`) the
//! detector keeps
//!
//! ```text
//!   G(n,k) = Ã_{n-1} G(n-1,k) + I,      G(k+1,k) = I
//!   s(k)   = Σ_{t=k+1}^{n} G(t,k)' C_Z' V_t^{-1} r_t
//!   M(k)   = Σ_{t=k+1}^{n} G(t,k)' C_Z' V_t^{-1} C_Z G(t,k)
//! ```
//!
//! so that `f̂ = M⁻¹ s`, `Σ_f = M⁻¹` and `ℓ(n,k) = s' M⁻¹ s`. Only candidates
//! with `n - m1 < k < n - m2` are scanned.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, SpdFactor};
use crate::ssm::{ModelParams, StepOutput};

/// Information matrices with a reciprocal condition below this are skipped.
pub const INFORMATION_MIN_RCOND: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowConfig {
    /// Maximum lookback.
    pub m1: usize,
    /// Minimum lookback.
    pub m2: usize,
    /// Control limit.
    pub h: f64,
}

impl WindowConfig {
    pub fn new(m1: usize, m2: usize, h: f64) -> Result<Self> {
        if m2 >= m1 {
            return Err(Error::InvalidInput(format!(
                "window requires m2 < m1, got m1 = {m1}, m2 = {m2}"
            )));
        }
        if m1 < m2 + 2 {
            return Err(Error::InvalidInput(format!(
                "window m1 = {m1}, m2 = {m2} admits no candidate change point"
            )));
        }
        if h.is_nan() {
            return Err(Error::InvalidInput("control limit is NaN".into()));
        }
        Ok(Self { m1, m2, h })
    }

    pub fn with_h(self, h: f64) -> Self {
        Self { h, ..self }
    }

    /// Whether candidate `k` may be scanned at time `n`.
    pub fn admits(&self, n: usize, k: usize) -> bool {
        k + self.m1 > n && k + self.m2 < n
    }
}

/// Per-step factors of the accumulated sums.
#[derive(Debug, Clone, PartialEq)]
pub struct StepTerm {
    /// `Ã_t`
    pub a_tilde: DMatrix<f64>,
    /// `C_Z' V_t^{-1} r_t`
    pub u: DVector<f64>,
    /// `C_Z' V_t^{-1} C_Z`
    pub w: DMatrix<f64>,
    /// `L^{-1} C_Z` with `V_t = L L'`; `w = F'F`.
    whitened_map: DMatrix<f64>,
    /// `L^{-1} r_t`; `u = F' e`.
    whitened_residual: DVector<f64>,
}

impl StepTerm {
    pub fn from_step(out: &StepOutput, params: &ModelParams) -> Self {
        let c_z = linalg::select_rows(params.c(), out.mask.indices());
        let l = &out.v_chol;
        let f = l
            .solve_lower_triangular(&c_z)
            .expect("innovation factor has a nonzero diagonal");
        let e = l
            .solve_lower_triangular(&out.residual)
            .expect("innovation factor has a nonzero diagonal");
        let u = f.tr_mul(&e);
        let w = f.tr_mul(&f);
        Self {
            a_tilde: out.a_tilde_used.clone(),
            u,
            w,
            whitened_map: f,
            whitened_residual: e,
        }
    }
}

/// Accumulators of one candidate change point.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub k: usize,
    /// `G(n,k)`
    pub g_mat: DMatrix<f64>,
    pub s_vec: DVector<f64>,
    pub m_mat: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftEstimate {
    pub f_hat: DVector<f64>,
    pub sigma_f: DMatrix<f64>,
}

/// `f̂ = M⁻¹ s`, `Σ_f = M⁻¹`; `None` when `M` is rank-deficient.
pub fn shift_from_accumulators(s_vec: &DVector<f64>, m_mat: &DMatrix<f64>) -> Option<ShiftEstimate> {
    let factor = SpdFactor::new(m_mat, INFORMATION_MIN_RCOND).ok()?;
    Some(ShiftEstimate {
        f_hat: factor.solve_vec(s_vec),
        sigma_f: factor.inverse(),
    })
}

/// `s' M⁻¹ s`; `None` when `M` is rank-deficient.
pub fn glrt_from_accumulators(s_vec: &DVector<f64>, m_mat: &DMatrix<f64>) -> Option<f64> {
    let factor = SpdFactor::new(m_mat, INFORMATION_MIN_RCOND).ok()?;
    Some(factor.whiten_vec(s_vec).norm_squared())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanResult {
    /// `T_n`, zero when no candidate is admissible.
    pub t_stat: f64,
    pub tau_hat: Option<usize>,
    pub f_hat: Option<DVector<f64>>,
    pub sigma_f: Option<DMatrix<f64>>,
    pub alarm: bool,
}

#[derive(Debug, Clone)]
pub struct Detector {
    q: usize,
    m1: usize,
    n: usize,
    candidates: VecDeque<Candidate>,
    last_a_tilde: Option<DMatrix<f64>>,
}

impl Detector {
    pub fn new(q: usize, window: &WindowConfig) -> Self {
        Self {
            q,
            m1: window.m1,
            n: 0,
            candidates: VecDeque::with_capacity(window.m1 + 1),
            last_a_tilde: None,
        }
    }

    /// Steps pushed so far.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn candidates(&self) -> impl Iterator<Item = &Candidate> {
        self.candidates.iter()
    }

    pub fn candidate(&self, k: usize) -> Option<&Candidate> {
        let first = self.candidates.front()?.k;
        self.candidates.get(k.checked_sub(first)?)
    }

    /// Add step `n = self.n() + 1`.
    pub fn push_step(&mut self, term: &StepTerm) {
        self.n += 1;
        let n = self.n;
        let q = self.q;
        if let Some(a_prev) = &self.last_a_tilde {
            let mut scratch = DMatrix::zeros(q, q);
            for cand in self.candidates.iter_mut() {
                linalg::mul_into(&mut scratch, a_prev, &cand.g_mat);
                for i in 0..q {
                    scratch[(i, i)] += 1.0;
                }
                std::mem::swap(&mut scratch, &mut cand.g_mat);
            }
        }
        self.candidates.push_back(Candidate {
            k: n - 1,
            g_mat: DMatrix::identity(q, q),
            s_vec: DVector::zeros(q),
            m_mat: DMatrix::zeros(q, q),
        });
        while self
            .candidates
            .front()
            .is_some_and(|c| c.k + self.m1 <= n)
        {
            self.candidates.pop_front();
        }
        let mut fg = DMatrix::zeros(term.whitened_map.nrows(), q);
        for cand in self.candidates.iter_mut() {
            linalg::mul_into(&mut fg, &term.whitened_map, &cand.g_mat);
            linalg::add_tr_mul_vec(&mut cand.s_vec, &fg, &term.whitened_residual);
            linalg::add_gram(&mut cand.m_mat, &fg);
        }
        self.last_a_tilde = Some(term.a_tilde.clone());
    }

    pub fn estimate_shift(&self, k: usize) -> Result<ShiftEstimate> {
        let cand = self.require(k)?;
        shift_from_accumulators(&cand.s_vec, &cand.m_mat).ok_or_else(|| self.insufficient(cand))
    }

    pub fn glrt(&self, k: usize) -> Result<f64> {
        let cand = self.require(k)?;
        glrt_from_accumulators(&cand.s_vec, &cand.m_mat).ok_or_else(|| self.insufficient(cand))
    }

    /// Maximize the GLRT over admissible candidates; ties go to the most recent `k`.
    pub fn scan(&self, window: &WindowConfig) -> ScanResult {
        let n = self.n;
        let mut best: Option<(f64, &Candidate)> = None;
        for cand in self.candidates.iter().filter(|c| window.admits(n, c.k)) {
            let Some(stat) = glrt_from_accumulators(&cand.s_vec, &cand.m_mat) else {
                continue;
            };
            if best.is_none_or(|(b, _)| stat >= b) {
                best = Some((stat, cand));
            }
        }
        match best {
            None => ScanResult {
                t_stat: 0.0,
                tau_hat: None,
                f_hat: None,
                sigma_f: None,
                alarm: 0.0 > window.h,
            },
            Some((stat, cand)) => {
                let est = shift_from_accumulators(&cand.s_vec, &cand.m_mat)
                    .expect("candidate passed the rank check");
                ScanResult {
                    t_stat: stat,
                    tau_hat: Some(cand.k),
                    f_hat: Some(est.f_hat),
                    sigma_f: Some(est.sigma_f),
                    alarm: stat > window.h,
                }
            }
        }
    }

    /// `G(n+1, k) = Ã_n G(n,k) + I`, the propagation the next step will apply.
    pub fn next_g(&self, k: usize) -> Result<DMatrix<f64>> {
        let cand = self.require(k)?;
        let mut g = match &self.last_a_tilde {
            Some(a) => a * &cand.g_mat,
            None => DMatrix::zeros(self.q, self.q),
        };
        for i in 0..self.q {
            g[(i, i)] += 1.0;
        }
        Ok(g)
    }

    fn require(&self, k: usize) -> Result<&Candidate> {
        self.candidate(k).ok_or_else(|| {
            Error::InvalidInput(format!(
                "candidate change point {k} is not in the window at n = {}",
                self.n
            ))
        })
    }

    fn insufficient(&self, cand: &Candidate) -> Error {
        let rcond = SpdFactor::new(&cand.m_mat, 0.0)
            .map(|f| f.rcond())
            .unwrap_or_else(|r| r);
        Error::Singular {
            what: "shift information matrix",
            step: self.n,
            rcond,
        }
    }
}
