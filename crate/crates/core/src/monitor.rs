//! The online monitoring loop.
//!
//! Each step filters the observed subset, pushes the step into the detector,
//! scans for a change and chooses the next subset. The first `n0` steps form a
//! warm-up: subsets are drawn at random and no alarm can be raised. Monitoring
//! time `n` counts the steps after the warm-up, starting at 1.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::detector::{Detector, ScanResult, StepTerm, WindowConfig};
use crate::error::{Error, Result};
use crate::sampler::{self, AlphaRule, UcrInputs};
use crate::ssm::{filter_init, filter_step, FilterState, ModelParams, ObservationMask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    /// Score every subset.
    Aucrss,
    /// Build the subset greedily.
    EAucrss,
    /// Uniformly random subsets.
    Random,
}

impl Policy {
    pub const ALL: [Policy; 3] = [Policy::Aucrss, Policy::EAucrss, Policy::Random];

    pub fn name(&self) -> &'static str {
        match self {
            Policy::Aucrss => "aucrss",
            Policy::EAucrss => "e_aucrss",
            Policy::Random => "random",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "aucrss" | "exhaustive" => Ok(Policy::Aucrss),
            "e_aucrss" | "greedy" => Ok(Policy::EAucrss),
            "random" | "r_aucrss" => Ok(Policy::Random),
            other => Err(Error::InvalidInput(format!(
                "unknown policy `{other}` (expected aucrss, e_aucrss or random)"
            ))),
        }
    }
}

pub const DEFAULT_WARMUP: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonitorConfig {
    pub window: WindowConfig,
    pub policy: Policy,
    pub alpha: AlphaRule,
    /// Observed variables per step.
    pub m: usize,
    /// Warm-up length.
    pub n0: usize,
}

impl MonitorConfig {
    pub fn validate(&self, params: &ModelParams) -> Result<()> {
        if self.m == 0 || self.m > params.p() {
            return Err(Error::InvalidInput(format!(
                "m = {} must satisfy 1 <= m <= p = {}",
                self.m,
                params.p()
            )));
        }
        WindowConfig::new(self.window.m1, self.window.m2, self.window.h)?;
        self.alpha.validate()
    }

    /// Non-fatal configuration issues.
    pub fn warnings(&self, params: &ModelParams) -> Vec<String> {
        let mut out = Vec::new();
        if self.m * (self.window.m2 + 1) < params.q() {
            out.push(format!(
                "m * (m2 + 1) = {} < q = {}: the most recent candidates cannot identify the shift and will be skipped",
                self.m * (self.window.m2 + 1),
                params.q()
            ));
        }
        out
    }

    pub fn with_h(self, h: f64) -> Self {
        Self {
            window: self.window.with_h(h),
            ..self
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    /// Steps processed including the warm-up.
    pub step: usize,
    /// Monitoring time, `None` during the warm-up.
    pub time: Option<usize>,
    /// Subset observed at this step.
    pub mask: ObservationMask,
    pub scan: Option<ScanResult>,
    pub alarm: bool,
}

impl StepReport {
    pub fn t_stat(&self) -> f64 {
        self.scan.as_ref().map_or(0.0, |s| s.t_stat)
    }
}

#[derive(Debug, Clone)]
pub struct Monitor {
    params: ModelParams,
    config: MonitorConfig,
    filter: FilterState,
    detector: Detector,
    rng: ChaCha8Rng,
    next_mask: ObservationMask,
    steps: usize,
}

impl Monitor {
    /// `rng` drives the random subsets of the warm-up and of the random policy.
    pub fn new(params: &ModelParams, config: MonitorConfig, rng: ChaCha8Rng) -> Result<Self> {
        config.validate(params)?;
        let mut rng = rng;
        let next_mask = sampler::select_random(params.p(), config.m, &mut rng)?;
        Ok(Self {
            filter: filter_init(params)?,
            detector: Detector::new(params.q(), &config.window),
            params: params.clone(),
            config,
            rng,
            next_mask,
            steps: 0,
        })
    }

    pub fn config(&self) -> &MonitorConfig {
        &self.config
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn filter(&self) -> &FilterState {
        &self.filter
    }

    pub fn detector(&self) -> &Detector {
        &self.detector
    }

    /// Subset to observe at the next step.
    pub fn next_mask(&self) -> &ObservationMask {
        &self.next_mask
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Feed the full observation vector; only the entries of [`Self::next_mask`] are used.
    pub fn observe_full(&mut self, y: &DVector<f64>) -> Result<StepReport> {
        let y_obs = self.next_mask.pick(y);
        self.observe(&y_obs)
    }

    /// Feed the observed entries (ordered as [`Self::next_mask`]).
    pub fn observe(&mut self, y_obs: &DVector<f64>) -> Result<StepReport> {
        let mask = self.next_mask.clone();
        let (filter, out) = filter_step(&self.filter, &self.params, &mask, y_obs)?;
        self.filter = filter;
        self.detector.push_step(&StepTerm::from_step(&out, &self.params));
        self.steps += 1;
        let step = self.steps;
        let n0 = self.config.n0;
        let time = (step > n0).then(|| step - n0);
        let adaptive = self.config.policy != Policy::Random;

        let scan = (time.is_some() || (adaptive && step == n0))
            .then(|| self.detector.scan(&self.config.window));
        let alarm = time.is_some() && scan.as_ref().is_some_and(|s| s.alarm);

        if !alarm {
            self.next_mask = self.choose_next(scan.as_ref(), step)?;
        }
        Ok(StepReport {
            step,
            time,
            mask,
            scan,
            alarm,
        })
    }

    fn choose_next(&mut self, scan: Option<&ScanResult>, step: usize) -> Result<ObservationMask> {
        let p = self.params.p();
        let m = self.config.m;
        let adaptive = match self.config.policy {
            Policy::Random => None,
            policy if step >= self.config.n0 => Some(policy),
            _ => None,
        };
        let estimate = scan.and_then(|s| Some((s, s.tau_hat?, s.f_hat.as_ref()?, s.sigma_f.as_ref()?)));
        match (adaptive, estimate) {
            (Some(policy), Some((scan, tau_hat, f_hat, sigma_f))) => {
                let g_next = self.detector.next_g(tau_hat)?;
                let inputs = UcrInputs {
                    f_hat,
                    sigma_f,
                    g_next: &g_next,
                    p_pred: &self.filter.p_pred,
                    params: &self.params,
                    alpha: self.config.alpha.alpha(scan.t_stat),
                };
                let decision = match policy {
                    Policy::Aucrss => sampler::select_exhaustive(&inputs, m)?,
                    _ => sampler::select_greedy(&inputs, m)?,
                };
                Ok(decision.mask)
            }
            _ => sampler::select_random(p, m, &mut self.rng),
        }
    }
}
