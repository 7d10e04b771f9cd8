//! Linear Gaussian state-space model, stream simulation and the
//! partially-observable Kalman predictor.
//!
//! The latent state evolves as `X_t = A X_{t-1} + f·1[t ≥ τ] + w_t` and each
//! full observation is `Y_t = C X_t + v_t`, with `w_t ~ N(0, σ_q² I)` and
//! `v_t ~ N(0, σ_r² I)`. At every step only the rows of `Y_t` listed in an
//! [`ObservationMask`] reach the filter.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{self, SpdFactor};
use crate::rng;

/// Innovation covariances with a reciprocal condition below this are singular.
pub const INNOVATION_MIN_RCOND: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    a: DMatrix<f64>,
    c: DMatrix<f64>,
    sigma_q: f64,
    sigma_r: f64,
}

impl ModelParams {
    /// Validates shapes, noise levels and stability (spectral radius of `A` < 1).
    ///
    /// Zero noise levels are accepted so that deterministic streams can be
    /// simulated; filtering such a model fails as soon as an innovation
    /// covariance is singular.
    pub fn new(a: DMatrix<f64>, c: DMatrix<f64>, sigma_q: f64, sigma_r: f64) -> Result<Self> {
        let q = a.nrows();
        if q == 0 || a.ncols() != q {
            return Err(Error::InvalidModel(format!(
                "A must be a non-empty square matrix, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if c.nrows() == 0 || c.ncols() != q {
            return Err(Error::InvalidModel(format!(
                "C must be p x {q}, got {}x{}",
                c.nrows(),
                c.ncols()
            )));
        }
        if a.iter().chain(c.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidModel("A and C must be finite".into()));
        }
        for (name, s) in [("sigma_q", sigma_q), ("sigma_r", sigma_r)] {
            if !(s.is_finite() && s >= 0.0) {
                return Err(Error::InvalidModel(format!(
                    "{name} must be a finite non-negative number, got {s}"
                )));
            }
        }
        let rho = linalg::spectral_radius(&a);
        if !(rho < 1.0) {
            return Err(Error::InvalidModel(format!(
                "A is not stable: spectral radius {rho} >= 1"
            )));
        }
        Ok(Self {
            a,
            c,
            sigma_q,
            sigma_r,
        })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn sigma_q(&self) -> f64 {
        self.sigma_q
    }

    pub fn sigma_r(&self) -> f64 {
        self.sigma_r
    }

    /// Number of observed variables.
    pub fn p(&self) -> usize {
        self.c.nrows()
    }

    /// Latent state dimension.
    pub fn q(&self) -> usize {
        self.a.nrows()
    }

    pub fn state_noise_cov(&self) -> DMatrix<f64> {
        DMatrix::identity(self.q(), self.q()) * self.sigma_q.powi(2)
    }

    /// Stationary state covariance, the fixed point of `S = A S A' + Q`.
    pub fn stationary_cov(&self) -> Result<DMatrix<f64>> {
        linalg::lyapunov_fixed_point(&self.a, &self.state_noise_cov())
    }

    pub fn with_noise(&self, sigma_q: f64, sigma_r: f64) -> Result<Self> {
        Self::new(self.a.clone(), self.c.clone(), sigma_q, sigma_r)
    }
}

/// A mean shift `f` entering the state recursion from step `tau` onwards.
/// `tau = None` is the in-control regime.
#[derive(Debug, Clone, PartialEq)]
pub struct ChangeSpec {
    pub tau: Option<usize>,
    pub shift: DVector<f64>,
}

impl ChangeSpec {
    pub fn in_control(q: usize) -> Self {
        Self {
            tau: None,
            shift: DVector::zeros(q),
        }
    }

    pub fn new(tau: usize, shift: DVector<f64>) -> Result<Self> {
        if shift.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("shift vector must be finite".into()));
        }
        Ok(Self {
            tau: Some(tau),
            shift,
        })
    }

    /// Shift of `magnitude` along a single state coordinate.
    pub fn single(q: usize, coordinate: usize, magnitude: f64, tau: usize) -> Result<Self> {
        if coordinate >= q {
            return Err(Error::InvalidInput(format!(
                "shift coordinate {coordinate} out of range for q = {q}"
            )));
        }
        let mut shift = DVector::zeros(q);
        shift[coordinate] = magnitude;
        Self::new(tau, shift)
    }

    pub fn is_active(&self, t: usize) -> bool {
        matches!(self.tau, Some(tau) if t >= tau)
    }
}

/// The sorted set of observed variable indices (0-based) at one step.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ObservationMask(Vec<usize>);

impl ObservationMask {
    pub fn new(mut indices: Vec<usize>, p: usize) -> Result<Self> {
        indices.sort_unstable();
        if indices.is_empty() {
            return Err(Error::InvalidInput("observation mask is empty".into()));
        }
        if indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidInput(format!(
                "observation mask has duplicate indices: {indices:?}"
            )));
        }
        if let Some(&last) = indices.last() {
            if last >= p {
                return Err(Error::InvalidInput(format!(
                    "observation index {last} out of range for p = {p}"
                )));
            }
        }
        Ok(Self(indices))
    }

    pub fn full(p: usize) -> Self {
        Self((0..p).collect())
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.0.binary_search(&i).is_ok()
    }

    /// Entries of a full observation selected by this mask.
    pub fn pick(&self, y: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.0.len(), self.0.iter().map(|&i| y[i]))
    }

    /// 1-based indices, as used in external records.
    pub fn one_based(&self) -> Vec<usize> {
        self.0.iter().map(|i| i + 1).collect()
    }
}

/// Simulated full-observation stream with its hidden states.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedStream {
    pub states: Vec<DVector<f64>>,
    pub observations: Vec<DVector<f64>>,
}

/// Step-by-step generator behind [`simulate_stream`].
///
/// The state before the first emitted step is drawn from the stationary
/// distribution `N(0, Σ_X)`; each call to [`StreamSimulator::step`] draws `q`
/// state-noise normals followed by `p` observation-noise normals.
#[derive(Debug, Clone)]
pub struct StreamSimulator {
    params: ModelParams,
    rng: ChaCha8Rng,
    state: DVector<f64>,
}

impl StreamSimulator {
    pub fn new(params: &ModelParams, rng: ChaCha8Rng) -> Result<Self> {
        let mut rng = rng;
        let root = linalg::psd_sqrt(&params.stationary_cov()?);
        let z = standard_normal(&mut rng, params.q());
        let state = root * z;
        Ok(Self {
            params: params.clone(),
            rng,
            state,
        })
    }

    pub fn from_seed(params: &ModelParams, seed: u64) -> Result<Self> {
        Self::new(params, rng::rng_for(seed, rng::STREAM_NOISE, 0))
    }

    /// Advance one step, optionally adding a mean shift to the state.
    /// Returns `(X_t, Y_t)`.
    pub fn step(&mut self, shift: Option<&DVector<f64>>) -> (DVector<f64>, DVector<f64>) {
        let params = &self.params;
        let w = standard_normal(&mut self.rng, params.q()) * params.sigma_q;
        let mut next = &params.a * &self.state + w;
        if let Some(f) = shift {
            next += f;
        }
        self.state = next;
        let v = standard_normal(&mut self.rng, params.p()) * params.sigma_r;
        let y = &params.c * &self.state + v;
        (self.state.clone(), y)
    }
}

fn standard_normal(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Simulate `horizon` full observations `Y_0, …, Y_{horizon-1}`; the shift is
/// applied to every step `t ≥ τ`.
pub fn simulate_stream(
    params: &ModelParams,
    change: &ChangeSpec,
    horizon: usize,
    seed: u64,
) -> Result<SimulatedStream> {
    if horizon == 0 {
        return Err(Error::InvalidInput("horizon must be at least 1".into()));
    }
    if change.shift.len() != params.q() {
        return Err(Error::InvalidInput(format!(
            "shift has length {}, expected q = {}",
            change.shift.len(),
            params.q()
        )));
    }
    let mut sim = StreamSimulator::from_seed(params, seed)?;
    let mut states = Vec::with_capacity(horizon);
    let mut observations = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let shift = change.is_active(t).then_some(&change.shift);
        let (x, y) = sim.step(shift);
        states.push(x);
        observations.push(y);
    }
    Ok(SimulatedStream {
        states,
        observations,
    })
}

/// One-step-ahead predictor state.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    /// `X̂_{t+1|t}`
    pub x_pred: DVector<f64>,
    /// `P_{t+1|t}`
    pub p_pred: DMatrix<f64>,
    /// `Ã_t` of the last processed step (`A` before any step).
    pub a_tilde: DMatrix<f64>,
    /// `K_t` of the last processed step (`q x 0` before any step).
    pub k_gain: DMatrix<f64>,
    /// Steps processed.
    pub t: usize,
}

/// Everything the detector and sampler need from one filter step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    /// `r_t = Y_Z - C_Z X̂_{t|t-1}`
    pub residual: DVector<f64>,
    /// `V_t = C_Z P_{t|t-1} C_Z' + σ_r² I`
    pub v_mat: DMatrix<f64>,
    /// Lower Cholesky factor of `V_t`.
    pub v_chol: DMatrix<f64>,
    pub mask: ObservationMask,
    pub a_tilde_used: DMatrix<f64>,
}

/// Initial predictor: zero mean, stationary covariance.
pub fn filter_init(params: &ModelParams) -> Result<FilterState> {
    let q = params.q();
    Ok(FilterState {
        x_pred: DVector::zeros(q),
        p_pred: params.stationary_cov()?,
        a_tilde: params.a.clone(),
        k_gain: DMatrix::zeros(q, 0),
        t: 0,
    })
}

/// Process the partial observation `y_obs` of the rows in `mask`.
pub fn filter_step(
    state: &FilterState,
    params: &ModelParams,
    mask: &ObservationMask,
    y_obs: &DVector<f64>,
) -> Result<(FilterState, StepOutput)> {
    let m = mask.len();
    if y_obs.len() != m {
        return Err(Error::InvalidInput(format!(
            "observation has length {}, mask has {m} entries",
            y_obs.len()
        )));
    }
    if mask.indices().last().is_some_and(|&i| i >= params.p()) {
        return Err(Error::InvalidInput(format!(
            "mask {:?} out of range for p = {}",
            mask.indices(),
            params.p()
        )));
    }
    let step = state.t + 1;
    let q = params.q();
    let c_z = linalg::select_rows(&params.c, mask.indices());
    let cp = &c_z * &state.p_pred;
    let mut v = &cp * c_z.transpose();
    for i in 0..m {
        v[(i, i)] += params.sigma_r.powi(2);
    }
    linalg::symmetrize(&mut v);
    let factor = SpdFactor::new(&v, INNOVATION_MIN_RCOND).map_err(|rcond| Error::Singular {
        what: "innovation covariance",
        step,
        rcond,
    })?;

    // K = P C_Z' V^{-1} = (V^{-1} C_Z P)'
    let k_gain = factor.solve_mat(&cp).transpose();
    let ak = &params.a * &k_gain;
    let a_tilde = &params.a - &ak * &c_z;
    let x_next = &a_tilde * &state.x_pred + &ak * y_obs;
    // Joseph form: the A K R K' A' term keeps this equal to the textbook predictor.
    let mut p_next = &a_tilde * &state.p_pred * a_tilde.transpose()
        + (&ak * ak.transpose()) * params.sigma_r.powi(2);
    for i in 0..q {
        p_next[(i, i)] += params.sigma_q.powi(2);
    }
    linalg::symmetrize(&mut p_next);
    let residual = y_obs - &c_z * &state.x_pred;

    let out = StepOutput {
        residual,
        v_chol: factor.l(),
        v_mat: v,
        mask: mask.clone(),
        a_tilde_used: a_tilde.clone(),
    };
    let next = FilterState {
        x_pred: x_next,
        p_pred: p_next,
        a_tilde,
        k_gain,
        t: step,
    };
    Ok((next, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn scalar(a: f64, c: f64, sq: f64, sr: f64) -> ModelParams {
        ModelParams::new(
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, c),
            sq,
            sr,
        )
        .unwrap()
    }

    #[test]
    fn rejects_unstable_and_misshaped_models() {
        let a = DMatrix::from_element(1, 1, 1.0);
        let c = DMatrix::from_element(1, 1, 1.0);
        assert!(matches!(
            ModelParams::new(a, c.clone(), 0.1, 0.1),
            Err(Error::InvalidModel(_))
        ));
        let a = DMatrix::zeros(2, 2);
        assert!(ModelParams::new(a.clone(), c.clone(), 0.1, 0.1).is_err());
        assert!(ModelParams::new(a, DMatrix::zeros(3, 2), -0.1, 0.1).is_err());
    }

    #[test]
    fn noiseless_zero_dynamics_stream_is_zero() {
        let params = ModelParams::new(
            DMatrix::identity(2, 2) * 0.5,
            DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]),
            0.0,
            0.0,
        )
        .unwrap();
        let s = simulate_stream(&params, &ChangeSpec::in_control(2), 20, 3).unwrap();
        assert!(s.observations.iter().all(|y| y.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn memoryless_unit_shift() {
        let params = scalar(0.0, 1.0, 0.0, 0.0);
        let change = ChangeSpec::new(0, DVector::from_element(1, 1.0)).unwrap();
        let s = simulate_stream(&params, &change, 5, 0).unwrap();
        for (x, y) in s.states.iter().zip(&s.observations) {
            assert_eq!(x[0], 1.0);
            assert_eq!(y[0], 1.0);
        }
    }

    #[test]
    fn zero_horizon_rejected() {
        let params = scalar(0.5, 1.0, 0.1, 0.1);
        assert!(simulate_stream(&params, &ChangeSpec::in_control(1), 0, 0).is_err());
    }

    #[test]
    fn identical_seeds_give_identical_streams() {
        let params = scalar(0.5, 1.0, 0.1, 0.1);
        let a = simulate_stream(&params, &ChangeSpec::in_control(1), 50, 9).unwrap();
        let b = simulate_stream(&params, &ChangeSpec::in_control(1), 50, 9).unwrap();
        let c = simulate_stream(&params, &ChangeSpec::in_control(1), 50, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn init_uses_stationary_covariance() {
        let init = filter_init(&scalar(0.5, 1.0, 0.1, 0.1)).unwrap();
        assert_abs_diff_eq!(init.p_pred[(0, 0)], 0.01 / 0.75, epsilon = 1e-12);
        assert_eq!(init.x_pred[0], 0.0);
        assert_eq!(init.t, 0);

        let params = ModelParams::new(
            DMatrix::zeros(2, 2),
            DMatrix::identity(2, 2),
            0.3,
            0.1,
        )
        .unwrap();
        let init = filter_init(&params).unwrap();
        assert_abs_diff_eq!(init.p_pred, params.state_noise_cov(), epsilon = 1e-15);
    }

    #[test]
    fn scalar_step_matches_hand_evaluation() {
        let params = scalar(0.5, 1.0, 0.1, 0.1);
        let state = FilterState {
            x_pred: DVector::zeros(1),
            p_pred: DMatrix::from_element(1, 1, 1.0),
            a_tilde: params.a().clone(),
            k_gain: DMatrix::zeros(1, 0),
            t: 0,
        };
        let mask = ObservationMask::full(1);
        let (next, out) =
            filter_step(&state, &params, &mask, &DVector::from_element(1, 1.0)).unwrap();
        let k = 1.0 / 1.01;
        assert_abs_diff_eq!(next.k_gain[(0, 0)], k, epsilon = 1e-15);
        assert_abs_diff_eq!(next.a_tilde[(0, 0)], 0.5 * (1.0 - k), epsilon = 1e-15);
        assert_abs_diff_eq!(next.x_pred[0], 0.5 * k, epsilon = 1e-15);
        assert_abs_diff_eq!(out.residual[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(out.v_mat[(0, 0)], 1.01, epsilon = 1e-15);
        // a² (P - P²/(P + R)) + Q
        assert_abs_diff_eq!(next.p_pred[(0, 0)], 0.25 * 0.01 / 1.01 + 0.01, epsilon = 1e-15);
    }

    #[test]
    fn zero_innovation_step_propagates_mean() {
        let params = ModelParams::new(
            DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.0, 0.3]),
            DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]),
            0.1,
            0.2,
        )
        .unwrap();
        let mut state = filter_init(&params).unwrap();
        state.x_pred = DVector::from_vec(vec![0.4, -0.7]);
        let mask = ObservationMask::new(vec![2, 0], 3).unwrap();
        let c_z = linalg::select_rows(params.c(), mask.indices());
        let y = &c_z * &state.x_pred;
        let (next, out) = filter_step(&state, &params, &mask, &y).unwrap();
        assert!(out.residual.amax() < 1e-15);
        assert!((next.x_pred - params.a() * &state.x_pred).amax() < 1e-14);
    }

    #[test]
    fn singular_innovation_reports_step() {
        let params = scalar(0.0, 1.0, 0.0, 0.0);
        let state = filter_init(&params).unwrap();
        let err = filter_step(
            &state,
            &params,
            &ObservationMask::full(1),
            &DVector::zeros(1),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Singular { step: 1, .. }));
    }

    #[test]
    fn mask_validation() {
        assert!(ObservationMask::new(vec![], 3).is_err());
        assert!(ObservationMask::new(vec![1, 1], 3).is_err());
        assert!(ObservationMask::new(vec![3], 3).is_err());
        let m = ObservationMask::new(vec![2, 0], 3).unwrap();
        assert_eq!(m.indices(), &[0, 2]);
        assert_eq!(m.one_based(), vec![1, 3]);
    }
}
