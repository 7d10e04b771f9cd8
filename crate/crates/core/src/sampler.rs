//! Upper-confidence-region subset selection.
//!
//! Given the current shift estimate `f̂` with covariance `Σ_f`, each candidate
//! subset `Z` is scored by the largest projected non-centrality
//! `f' Ω_Z f` over the boundary of the confidence ellipsoid
//! `(f - f̂)' Σ_f⁻¹ (f - f̂) = χ²_{1-α}(q)`, where
//! `Ω_Z = G' C_Z' V⁻¹ C_Z G` and `V = C_Z P C_Z' + σ_r² I`.
//!
//! The boundary maximization is solved by simultaneous diagonalization:
//! with `Σ_f = B B'` and `B' Ω B = D' Λ D`, the substitution
//! `f = f̂ + B D' f̃` reduces the problem to `‖f̃‖² = χ²` and
//! `(Λ + λI) f̃ = -x`, `x = Λ D B⁻¹ f̂`, whose multiplier is the root of the
//! secular equation `Σ xᵢ² / (λᵢ + λ)² = χ²` lying below `-max λᵢ`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, SpdFactor};
use crate::ssm::{ModelParams, ObservationMask};
use crate::stats;

/// Relative tolerance on the ellipsoid boundary constraint.
pub const BOUNDARY_TOL: f64 = 1e-6;
/// Eigenvalues of `B' Ω B` above `-OMEGA_PSD_TOL · max(1, |λ|max)` are clipped to zero.
pub const OMEGA_PSD_TOL: f64 = 1e-10;
const SECULAR_MAX_ITERS: usize = 300;

/// Segment-wise linear confidence level `α_n = min(max((T_n - d)/l, 0) + α_min, α_max)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaSchedule {
    pub d: f64,
    pub l: f64,
    pub alpha_min: f64,
    pub alpha_max: f64,
}

impl AlphaSchedule {
    pub fn new(d: f64, l: f64, alpha_min: f64, alpha_max: f64) -> Result<Self> {
        let s = Self {
            d,
            l,
            alpha_min,
            alpha_max,
        };
        s.validate()?;
        Ok(s)
    }

    /// `d = 15, l = 6.67, α ∈ [0.1, 0.85]`, the schedule used for the p = 10 study.
    pub fn reference() -> Self {
        Self {
            d: 15.0,
            l: 6.67,
            alpha_min: 0.1,
            alpha_max: 0.85,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.l > 0.0 && self.d.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "alpha schedule needs finite d and l > 0, got d = {}, l = {}",
                self.d, self.l
            )));
        }
        if !(0.0 < self.alpha_min && self.alpha_min <= self.alpha_max && self.alpha_max < 1.0) {
            return Err(Error::InvalidInput(format!(
                "alpha schedule needs 0 < alpha_min <= alpha_max < 1, got [{}, {}]",
                self.alpha_min, self.alpha_max
            )));
        }
        Ok(())
    }
}

pub fn adaptive_alpha(t_stat: f64, schedule: &AlphaSchedule) -> f64 {
    (((t_stat - schedule.d) / schedule.l).max(0.0) + schedule.alpha_min).min(schedule.alpha_max)
}

/// Constant level or adaptive schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AlphaRule {
    Constant(f64),
    Schedule(AlphaSchedule),
}

impl AlphaRule {
    pub fn alpha(&self, t_stat: f64) -> f64 {
        match self {
            AlphaRule::Constant(a) => *a,
            AlphaRule::Schedule(s) => adaptive_alpha(t_stat, s),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            AlphaRule::Constant(a) if !(*a > 0.0 && *a < 1.0) => Err(Error::InvalidInput(
                format!("constant alpha must lie in (0,1), got {a}"),
            )),
            AlphaRule::Constant(_) => Ok(()),
            AlphaRule::Schedule(s) => s.validate(),
        }
    }
}

/// Estimates feeding one sampling decision at time `n`.
#[derive(Debug, Clone, Copy)]
pub struct UcrInputs<'a> {
    /// `f̂(n, τ̂)`
    pub f_hat: &'a DVector<f64>,
    /// `Σ_f(n, τ̂)`
    pub sigma_f: &'a DMatrix<f64>,
    /// `G(n+1, τ̂)`
    pub g_next: &'a DMatrix<f64>,
    /// `P_{n+1|n}`
    pub p_pred: &'a DMatrix<f64>,
    pub params: &'a ModelParams,
    pub alpha: f64,
}

impl UcrInputs<'_> {
    /// `χ²_{1-α}(q)`.
    pub fn radius2(&self) -> Result<f64> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidInput(format!(
                "alpha must lie strictly inside (0,1), got {}",
                self.alpha
            )));
        }
        stats::chi2_quantile(1.0 - self.alpha, self.params.q())
    }

    fn sigma_factor(&self) -> Result<SpdFactor> {
        SpdFactor::new(self.sigma_f, 0.0).map_err(|rcond| Error::Singular {
            what: "shift covariance",
            step: 0,
            rcond,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplingDecision {
    pub mask: ObservationMask,
    /// `f*' Ω_Z f*`
    pub score: f64,
    pub f_star: DVector<f64>,
    pub alpha_used: f64,
}

/// Boundary maximizer of `f' Ω f`.
#[derive(Debug, Clone, PartialEq)]
pub struct EllipsoidMax {
    pub f_star: DVector<f64>,
    pub score: f64,
    /// Lagrange multiplier `λ` of the secular equation.
    pub lagrange: f64,
}

fn innovation_factor(v: &DMatrix<f64>) -> Result<SpdFactor> {
    SpdFactor::new(v, crate::ssm::INNOVATION_MIN_RCOND).map_err(|rcond| Error::Singular {
        what: "predicted innovation covariance",
        step: 0,
        rcond,
    })
}

/// `Ω_Z = G' C_Z' V⁻¹ C_Z G` with `V = C_Z P C_Z' + σ_r² I`.
pub fn omega(
    mask: &ObservationMask,
    g_next: &DMatrix<f64>,
    p_pred: &DMatrix<f64>,
    params: &ModelParams,
) -> Result<DMatrix<f64>> {
    let c_z = linalg::select_rows(params.c(), mask.indices());
    let mut v = &c_z * p_pred * c_z.transpose();
    for i in 0..mask.len() {
        v[(i, i)] += params.sigma_r().powi(2);
    }
    linalg::symmetrize(&mut v);
    let factor = innovation_factor(&v)?;
    let w = factor.whiten_mat(&(&c_z * g_next));
    let mut om = w.tr_mul(&w);
    linalg::symmetrize(&mut om);
    Ok(om)
}

/// Root of the secular equation in eigen-coordinates.
#[derive(Debug, Clone)]
struct Secular {
    /// `μ = -λ`
    mu: f64,
    /// `f̃` in eigen-coordinates.
    coords: Vec<f64>,
}

/// Solve `Σ xᵢ²/(μ - λᵢ)² = c` for `μ ≥ max λᵢ` and return `f̃ᵢ = xᵢ/(μ - λᵢ)`.
///
/// When the components of `x` along the top eigenvalue vanish and the
/// remaining sum cannot reach `c`, the multiplier sits at `μ = max λᵢ` and the
/// missing norm is placed on the top eigendirection.
fn solve_secular(lambdas: &[f64], x: &[f64], c: f64) -> Result<Secular> {
    let n = lambdas.len();
    if c <= 0.0 || n == 0 {
        return Ok(Secular {
            mu: f64::INFINITY,
            coords: vec![0.0; n],
        });
    }
    let lam_max = lambdas.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scale = lam_max.abs().max(1.0);
    let tie = 1e-12 * scale;
    let top: Vec<usize> = (0..n).filter(|&i| lambdas[i] >= lam_max - tie).collect();
    let is_top = |i: usize| lambdas[i] >= lam_max - tie;

    let phi_rest = |mu: f64| -> f64 {
        (0..n)
            .filter(|&i| !is_top(i))
            .map(|i| (x[i] / (mu - lambdas[i])).powi(2))
            .sum()
    };
    let top_norm2: f64 = top.iter().map(|&i| x[i] * x[i]).sum();
    let rest_at_max = phi_rest(lam_max);

    // Gap μ - λ_max that the top group would need; tiny gaps are below the
    // floating-point resolution around λ_max and are treated as the hard case.
    let hard = rest_at_max < c && top_norm2.sqrt() / (c - rest_at_max).sqrt() < 1e-12 * scale;
    if hard {
        let mut coords = vec![0.0; n];
        for i in (0..n).filter(|&i| !is_top(i)) {
            coords[i] = x[i] / (lam_max - lambdas[i]);
        }
        let missing = (c - rest_at_max).max(0.0).sqrt();
        if top_norm2 > 0.0 {
            let norm = top_norm2.sqrt();
            for &i in &top {
                coords[i] = missing * x[i] / norm;
            }
        } else {
            coords[top[0]] = missing;
        }
        return Ok(Secular {
            mu: lam_max,
            coords,
        });
    }

    let phi = |mu: f64| -> f64 {
        (0..n)
            .map(|i| (x[i] / (mu - lambdas[i])).powi(2))
            .sum()
    };
    let x_norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut lo = lam_max;
    let mut hi = lam_max + x_norm / c.sqrt();
    // φ(hi) ≤ c by construction; widen slightly against rounding.
    while phi(hi) > c {
        hi = lam_max + 2.0 * (hi - lam_max);
    }
    let mut iters = 0;
    while iters < SECULAR_MAX_ITERS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if phi(mid) > c {
            lo = mid;
        } else {
            hi = mid;
        }
        iters += 1;
    }
    if iters == SECULAR_MAX_ITERS {
        return Err(Error::NoConvergence {
            what: "secular equation bisection",
            iterations: iters,
        });
    }
    let mu = 0.5 * (lo + hi);
    let coords: Vec<f64> = (0..n).map(|i| x[i] / (mu - lambdas[i])).collect();
    let norm2: f64 = coords.iter().map(|v| v * v).sum();
    if (norm2 - c).abs() > BOUNDARY_TOL * c {
        return Err(Error::NoConvergence {
            what: "secular equation (boundary constraint not met)",
            iterations: iters,
        });
    }
    Ok(Secular { mu, coords })
}

fn clip_spectrum(lambdas: &mut [f64]) -> Result<()> {
    let scale = lambdas.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    for l in lambdas.iter_mut() {
        if *l < 0.0 {
            if *l < -OMEGA_PSD_TOL * scale {
                return Err(Error::InvalidInput(format!(
                    "projected information matrix is not PSD (eigenvalue {l})"
                )));
            }
            *l = 0.0;
        }
    }
    Ok(())
}

/// Maximize `f' Ω f` over the boundary of the confidence ellipsoid by full
/// `q x q` simultaneous diagonalization.
pub fn solve_ellipsoid_max(inputs: &UcrInputs<'_>, omega_z: &DMatrix<f64>) -> Result<EllipsoidMax> {
    let q = inputs.params.q();
    let radius2 = inputs.radius2()?;
    let factor = inputs.sigma_factor()?;
    let b = factor.l();
    let mut bob = b.tr_mul(omega_z) * &b;
    linalg::symmetrize(&mut bob);
    let eig = bob.symmetric_eigen();
    let mut lambdas: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    clip_spectrum(&mut lambdas)?;
    // H = B D' with the eigenvectors as columns of D'.
    let h = &b * &eig.eigenvectors;
    // H⁻¹ f̂ = D B⁻¹ f̂
    let a = factor.whiten_vec(inputs.f_hat);
    let hinv_f = eig.eigenvectors.tr_mul(&a);
    let x: Vec<f64> = (0..q).map(|i| lambdas[i] * hinv_f[i]).collect();
    let sol = solve_secular(&lambdas, &x, radius2)?;
    let f_tilde = DVector::from_vec(sol.coords);
    let f_star = &h * f_tilde + inputs.f_hat;
    let score = (f_star.transpose() * omega_z * &f_star)[(0, 0)];
    Ok(EllipsoidMax {
        f_star,
        score,
        lagrange: -sol.mu,
    })
}

/// Quantities shared by every subset scored within one decision.
///
/// `Ω_Z` has rank at most `|Z|`, so its nonzero spectrum in whitened
/// coordinates is that of the small Gram matrix `W W'` with
/// `W = L_V⁻¹ C_Z G B`; zero eigenvalues carry `xᵢ = 0` and drop out of the
/// secular equation.
struct UcrContext<'a> {
    inputs: UcrInputs<'a>,
    radius2: f64,
    b: DMatrix<f64>,
    /// `C P C'`
    cpc: DMatrix<f64>,
    /// `C G B`
    cgb: DMatrix<f64>,
    /// `C G f̂`
    cgf: DVector<f64>,
}

struct MaskSolution {
    score: f64,
    w: DMatrix<f64>,
    eigvecs: DMatrix<f64>,
    lambdas: Vec<f64>,
    coords: Vec<f64>,
}

impl<'a> UcrContext<'a> {
    fn new(inputs: UcrInputs<'a>) -> Result<Self> {
        let params = inputs.params;
        let radius2 = inputs.radius2()?;
        let b = inputs.sigma_factor()?.l();
        let c = params.c();
        let cg = c * inputs.g_next;
        let cpc = c * inputs.p_pred * c.transpose();
        Ok(Self {
            radius2,
            cgb: &cg * &b,
            cgf: &cg * inputs.f_hat,
            cpc,
            b,
            inputs,
        })
    }

    fn solve(&self, idx: &[usize]) -> Result<MaskSolution> {
        let m = idx.len();
        let mut v = linalg::principal_submatrix(&self.cpc, idx);
        for i in 0..m {
            v[(i, i)] += self.inputs.params.sigma_r().powi(2);
        }
        linalg::symmetrize(&mut v);
        let factor = innovation_factor(&v)?;
        let w = factor.whiten_mat(&linalg::select_rows(&self.cgb, idx));
        let wa = factor.whiten_vec(&DVector::from_iterator(m, idx.iter().map(|&i| self.cgf[i])));
        let mut gram = &w * w.transpose();
        linalg::symmetrize(&mut gram);
        let eig = gram.symmetric_eigen();
        let mut lambdas: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        clip_spectrum(&mut lambdas)?;
        let proj = eig.eigenvectors.tr_mul(&wa);
        let x: Vec<f64> = (0..m).map(|j| lambdas[j].sqrt() * proj[j]).collect();

        let lam_max = lambdas.iter().copied().fold(0.0, f64::max);
        let (score, coords) = if lam_max <= 0.0 {
            // Ω_Z = 0: every boundary point scores zero.
            (0.0, vec![0.0; m])
        } else {
            let sol = solve_secular(&lambdas, &x, self.radius2)?;
            let coords = sol.coords;
            (self.score_of(&wa, &eig.eigenvectors, &lambdas, &coords), coords)
        };
        Ok(MaskSolution {
            score,
            w,
            eigvecs: eig.eigenvectors,
            lambdas,
            coords,
        })
    }

    /// `‖W a + Σ_j f̃_j √λ_j u_j‖²`
    fn score_of(&self, wa: &DVector<f64>, u: &DMatrix<f64>, lambdas: &[f64], coords: &[f64]) -> f64 {
        let mut z = wa.clone();
        for j in 0..lambdas.len() {
            z += u.column(j) * (coords[j] * lambdas[j].sqrt());
        }
        z.norm_squared()
    }

    /// `f* = f̂ + B W' Σ_j (f̃_j/√λ_j) u_j`; for `Ω_Z = 0` the boundary point
    /// along the first whitened axis.
    fn f_star(&self, sol: &MaskSolution) -> DVector<f64> {
        let q = self.inputs.params.q();
        let mut dir = DVector::zeros(q);
        let mut any = false;
        for j in 0..sol.lambdas.len() {
            if sol.lambdas[j] > 0.0 && sol.coords[j] != 0.0 {
                let uj = sol.eigvecs.column(j);
                dir += sol.w.tr_mul(&uj) * (sol.coords[j] / sol.lambdas[j].sqrt());
                any = true;
            }
        }
        if !any && sol.score == 0.0 {
            dir[0] = self.radius2.sqrt();
        }
        &self.b * dir + self.inputs.f_hat
    }

    fn decide(&self, idx: Vec<usize>, sol: &MaskSolution) -> Result<SamplingDecision> {
        let p = self.inputs.params.p();
        Ok(SamplingDecision {
            f_star: self.f_star(sol),
            mask: ObservationMask::new(idx, p)?,
            score: sol.score,
            alpha_used: self.inputs.alpha,
        })
    }

    fn solve_tagged(&self, idx: &[usize]) -> Result<MaskSolution> {
        self.solve(idx).map_err(|e| Error::Sampling {
            mask: idx.to_vec(),
            source: Box::new(e),
        })
    }
}

/// Lexicographic enumeration of the `m`-subsets of `0..p`.
pub fn combinations(p: usize, m: usize) -> impl Iterator<Item = Vec<usize>> {
    let mut next: Option<Vec<usize>> = (m <= p).then(|| (0..m).collect());
    std::iter::from_fn(move || {
        let current = next.take()?;
        let mut succ = current.clone();
        let mut i = m;
        while i > 0 {
            i -= 1;
            if succ[i] < p - m + i {
                succ[i] += 1;
                for j in (i + 1)..m {
                    succ[j] = succ[j - 1] + 1;
                }
                next = Some(succ);
                break;
            }
        }
        Some(current)
    })
}

/// Highest-scoring item; ties keep the earliest one.
pub fn argmax_by_score<T, I, F>(items: I, mut score: F) -> Result<Option<(T, f64)>>
where
    I: IntoIterator<Item = T>,
    F: FnMut(&T) -> Result<f64>,
{
    let mut best: Option<(T, f64)> = None;
    for item in items {
        let s = score(&item)?;
        if best.as_ref().is_none_or(|(_, b)| s > *b) {
            best = Some((item, s));
        }
    }
    Ok(best)
}

fn check_m(m: usize, p: usize) -> Result<()> {
    if m == 0 || m > p {
        return Err(Error::InvalidInput(format!(
            "subset size m = {m} must satisfy 1 <= m <= p = {p}"
        )));
    }
    Ok(())
}

/// Score all `C(p, m)` subsets; ties go to the lexicographically smallest.
pub fn select_exhaustive(inputs: &UcrInputs<'_>, m: usize) -> Result<SamplingDecision> {
    let p = inputs.params.p();
    check_m(m, p)?;
    let ctx = UcrContext::new(*inputs)?;
    let mut best: Option<(Vec<usize>, MaskSolution)> = None;
    for idx in combinations(p, m) {
        let sol = ctx.solve_tagged(&idx)?;
        if best.as_ref().is_none_or(|(_, b)| sol.score > b.score) {
            best = Some((idx, sol));
        }
    }
    let (idx, sol) = best.expect("at least one subset");
    ctx.decide(idx, &sol)
}

/// Grow the subset one index at a time, each round adding the index whose
/// enlarged subset scores highest (ties to the smallest index).
pub fn select_greedy(inputs: &UcrInputs<'_>, m: usize) -> Result<SamplingDecision> {
    let p = inputs.params.p();
    check_m(m, p)?;
    let ctx = UcrContext::new(*inputs)?;
    let mut chosen: Vec<usize> = Vec::with_capacity(m);
    let mut last: Option<MaskSolution> = None;
    for _ in 0..m {
        let mut round: Option<(usize, MaskSolution)> = None;
        for k in (0..p).filter(|k| !chosen.contains(k)) {
            let mut idx = chosen.clone();
            idx.push(k);
            idx.sort_unstable();
            let sol = ctx.solve_tagged(&idx)?;
            if round.as_ref().is_none_or(|(_, b)| sol.score > b.score) {
                round = Some((k, sol));
            }
        }
        let (k, sol) = round.expect("complement is non-empty while |Z| < m <= p");
        chosen.push(k);
        chosen.sort_unstable();
        last = Some(sol);
    }
    ctx.decide(chosen, &last.expect("m >= 1"))
}

/// Uniformly random `m`-subset.
pub fn select_random<R: Rng + ?Sized>(p: usize, m: usize, rng: &mut R) -> Result<ObservationMask> {
    check_m(m, p)?;
    let idx = rand::seq::index::sample(rng, p, m).into_vec();
    ObservationMask::new(idx, p)
}
