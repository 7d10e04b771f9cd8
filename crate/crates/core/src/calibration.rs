//! Run lengths, delay estimation and control-limit calibration.
//!
//! A replication is simulated once and its statistic path is kept. Sampling
//! decisions do not depend on the control limit, so the alarm time for any `h`
//! is the first monitoring step whose statistic exceeds `h`. Calibration reuses
//! the same replications (common random numbers) for every trial limit and
//! extends a path only when a larger limit needs more steps.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::monitor::{Monitor, MonitorConfig};
use crate::rng::{rng_for, STREAM_NOISE, STREAM_SAMPLER};
use crate::ssm::{ChangeSpec, ModelParams, StreamSimulator};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunLengthSample {
    /// Monitoring step of the first alarm, `None` when censored.
    pub alarm_time: Option<usize>,
    pub replication: u64,
}

/// One resumable replication.
#[derive(Debug, Clone)]
pub struct Replication {
    sim: StreamSimulator,
    monitor: Monitor,
    change: ChangeSpec,
    /// Running maximum of the statistic over monitoring steps 1..=len.
    running_max: Vec<f64>,
    path: Vec<f64>,
    replication: u64,
}

impl Replication {
    pub fn new(
        params: &ModelParams,
        config: &MonitorConfig,
        change: &ChangeSpec,
        seed: u64,
        replication: u64,
    ) -> Result<Self> {
        if change.shift.len() != params.q() {
            return Err(Error::InvalidInput(format!(
                "shift has length {}, expected q = {}",
                change.shift.len(),
                params.q()
            )));
        }
        let sim = StreamSimulator::new(params, rng_for(seed, STREAM_NOISE, replication))?;
        let monitor = Monitor::new(
            params,
            config.with_h(f64::INFINITY),
            rng_for(seed, STREAM_SAMPLER, replication),
        )?;
        Ok(Self {
            sim,
            monitor,
            change: change.clone(),
            running_max: Vec::new(),
            path: Vec::new(),
            replication,
        })
    }

    pub fn replication(&self) -> u64 {
        self.replication
    }

    /// Statistic path over the monitoring steps simulated so far.
    pub fn path(&self) -> &[f64] {
        &self.path
    }

    pub fn monitor(&self) -> &Monitor {
        &self.monitor
    }

    /// Simulate one more step.
    pub fn advance(&mut self) -> Result<()> {
        let next_time = (self.monitor.steps() + 1).checked_sub(self.monitor.config().n0);
        let active = next_time.is_some_and(|n| n >= 1 && self.change.is_active(n));
        let (_, y) = self.sim.step(active.then_some(&self.change.shift));
        let report = self.monitor.observe_full(&y)?;
        if report.time.is_some() {
            let t = report.t_stat();
            let prev = self.running_max.last().copied().unwrap_or(f64::NEG_INFINITY);
            self.running_max.push(prev.max(t));
            self.path.push(t);
        }
        Ok(())
    }

    /// First monitoring step with statistic above `h`, looking no further than `cap`.
    pub fn alarm_time(&mut self, h: f64, cap: usize) -> Result<Option<usize>> {
        let known = self.running_max.partition_point(|&v| v <= h);
        if known < self.running_max.len() {
            return Ok((known < cap).then_some(known + 1));
        }
        while self.path.len() < cap {
            self.advance()?;
            if self.path.last().is_some_and(|&t| t > h) {
                return Ok(Some(self.path.len()));
            }
        }
        Ok(None)
    }
}

/// Single run from a fresh replication.
pub fn run_once(
    params: &ModelParams,
    change: &ChangeSpec,
    config: &MonitorConfig,
    seed: u64,
    replication: u64,
    horizon_cap: usize,
) -> Result<RunLengthSample> {
    let mut rep = Replication::new(params, config, change, seed, replication)?;
    let alarm_time = rep.alarm_time(config.window.h, horizon_cap)?;
    Ok(RunLengthSample {
        alarm_time,
        replication,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AddEstimate {
    pub add: f64,
    pub sdd: f64,
    /// Runs kept after conditioning on no alarm before `tau`.
    pub n_used: usize,
    pub n_censored: usize,
    pub censored_fraction: f64,
}

/// Average detection delay `E[N - tau | N >= tau]`. Censored runs count at `horizon_cap`.
/// `tau = None` gives the average in-control run length.
pub fn estimate_add(
    samples: &[RunLengthSample],
    tau: Option<usize>,
    horizon_cap: usize,
) -> Result<AddEstimate> {
    let tau = tau.unwrap_or(0);
    let mut delays = Vec::with_capacity(samples.len());
    let mut censored = 0;
    for s in samples {
        let n = s.alarm_time.unwrap_or(horizon_cap);
        if n < tau {
            continue;
        }
        if s.alarm_time.is_none() {
            censored += 1;
        }
        delays.push((n - tau) as f64);
    }
    if delays.len() == censored {
        return Err(Error::AllCensored);
    }
    Ok(AddEstimate {
        add: stats::mean(&delays),
        sdd: stats::std_dev(&delays),
        n_used: delays.len(),
        n_censored: censored,
        censored_fraction: censored as f64 / delays.len() as f64,
    })
}

pub const MIN_CALIBRATION_REPLICATIONS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationSpec {
    pub target_add_ic: f64,
    /// Relative tolerance on the achieved in-control ADD.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    pub h_lo: f64,
    pub h_hi: f64,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    /// Doublings of the bracket width allowed when it does not straddle the target.
    #[serde(default = "default_max_expansions")]
    pub max_expansions: usize,
    pub replications: usize,
    pub horizon_cap: usize,
    pub seed: u64,
}

fn default_tolerance() -> f64 {
    0.01
}
fn default_max_iterations() -> usize {
    60
}
fn default_max_expansions() -> usize {
    4
}

impl CalibrationSpec {
    pub fn new(target_add_ic: f64, h_lo: f64, h_hi: f64, replications: usize, seed: u64) -> Self {
        Self {
            target_add_ic,
            tolerance: default_tolerance(),
            h_lo,
            h_hi,
            max_iterations: default_max_iterations(),
            max_expansions: default_max_expansions(),
            replications,
            horizon_cap: (10.0 * target_add_ic).ceil() as usize,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if !(self.target_add_ic > 0.0 && self.target_add_ic.is_finite()) {
            return bad(format!("target ADD must be positive, got {}", self.target_add_ic));
        }
        if !(self.tolerance > 0.0) {
            return bad(format!("tolerance must be positive, got {}", self.tolerance));
        }
        if !(self.h_lo.is_finite() && self.h_hi.is_finite() && self.h_lo < self.h_hi) {
            return bad(format!("need finite h_lo < h_hi, got [{}, {}]", self.h_lo, self.h_hi));
        }
        if self.replications < MIN_CALIBRATION_REPLICATIONS {
            return bad(format!(
                "calibration needs at least {MIN_CALIBRATION_REPLICATIONS} replications, got {}",
                self.replications
            ));
        }
        if (self.horizon_cap as f64) < 5.0 * self.target_add_ic {
            return bad(format!(
                "horizon cap {} is below 5 x target ADD {}",
                self.horizon_cap, self.target_add_ic
            ));
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub h: f64,
    pub achieved_add_ic: f64,
    pub sdd: f64,
    pub censored_fraction: f64,
    pub target_add_ic: f64,
    pub iterations: usize,
    pub replications: usize,
    pub seed: u64,
}

/// In-control replications shared across trial limits.
pub struct InControlPool {
    reps: Vec<Replication>,
    horizon_cap: usize,
}

impl InControlPool {
    pub fn new(
        params: &ModelParams,
        config: &MonitorConfig,
        replications: usize,
        seed: u64,
        horizon_cap: usize,
    ) -> Result<Self> {
        let change = ChangeSpec::in_control(params.q());
        let reps = (0..replications as u64)
            .map(|r| Replication::new(params, config, &change, seed, r))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { reps, horizon_cap })
    }

    pub fn samples(&mut self, h: f64) -> Result<Vec<RunLengthSample>> {
        let cap = self.horizon_cap;
        self.reps
            .par_iter_mut()
            .map(|rep| {
                Ok(RunLengthSample {
                    alarm_time: rep.alarm_time(h, cap)?,
                    replication: rep.replication(),
                })
            })
            .collect()
    }

    pub fn add_ic(&mut self, h: f64) -> Result<AddEstimate> {
        let samples = self.samples(h)?;
        estimate_add(&samples, None, self.horizon_cap)
    }
}

/// Bisect on `h` until the in-control ADD is within the relative tolerance of the target.
pub fn calibrate_h(
    spec: &CalibrationSpec,
    params: &ModelParams,
    config: &MonitorConfig,
) -> Result<CalibrationReport> {
    spec.validate()?;
    config.validate(params)?;
    let mut pool = InControlPool::new(
        params,
        config,
        spec.replications,
        spec.seed,
        spec.horizon_cap,
    )?;
    let target = spec.target_add_ic;
    let within = |e: &AddEstimate| (e.add - target).abs() <= spec.tolerance * target;
    let report = |h: f64, e: AddEstimate, iterations: usize| CalibrationReport {
        h,
        achieved_add_ic: e.add,
        sdd: e.sdd,
        censored_fraction: e.censored_fraction,
        target_add_ic: target,
        iterations,
        replications: spec.replications,
        seed: spec.seed,
    };

    let (mut lo, mut hi) = (spec.h_lo, spec.h_hi);
    let mut expansions = 0;
    let mut at_lo = pool.add_ic(lo)?;
    let mut at_hi: Option<AddEstimate> = None;
    while at_lo.add > target && !within(&at_lo) && expansions < spec.max_expansions {
        let width = hi - lo;
        hi = lo;
        at_hi = Some(at_lo);
        lo -= width;
        at_lo = pool.add_ic(lo)?;
        expansions += 1;
    }
    if within(&at_lo) {
        return Ok(report(lo, at_lo, 0));
    }
    if at_lo.add > target {
        let add_hi = match at_hi {
            Some(e) => e.add,
            None => pool.add_ic(hi)?.add,
        };
        return Err(Error::Bracket {
            h_lo: lo,
            h_hi: hi,
            target,
            add_lo: at_lo.add,
            add_hi,
        });
    }

    // The upper end is only evaluated once the search has climbed close to it:
    // a large limit forces every path out to the horizon cap.
    let mut phase_lo = lo;
    let mut best = (lo, at_lo);
    let mut iterations = 0;
    loop {
        if at_hi.is_none() && hi - lo <= (hi - phase_lo) / 8.0 {
            let e = pool.add_ic(hi)?;
            if within(&e) {
                return Ok(report(hi, e, iterations));
            }
            if e.add >= target {
                at_hi = Some(e);
            } else if expansions < spec.max_expansions {
                let width = hi - phase_lo;
                lo = hi;
                hi += width;
                phase_lo = lo;
                expansions += 1;
                continue;
            } else {
                return Err(Error::Bracket {
                    h_lo: phase_lo,
                    h_hi: hi,
                    target,
                    add_lo: at_lo.add,
                    add_hi: e.add,
                });
            }
        }
        if iterations == spec.max_iterations {
            return Err(Error::CalibrationIterations {
                iterations,
                best_h: best.0,
                best_add: best.1.add,
            });
        }
        let mid = 0.5 * (lo + hi);
        let at_mid = pool.add_ic(mid)?;
        iterations += 1;
        if (at_mid.add - target).abs() < (best.1.add - target).abs() {
            best = (mid, at_mid);
        }
        if within(&at_mid) {
            return Ok(report(mid, at_mid, iterations));
        }
        if at_mid.add < target {
            lo = mid;
        } else {
            hi = mid;
            at_hi = Some(at_mid);
        }
    }
}
