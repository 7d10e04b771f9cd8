//! JSON run configuration.
//!
//! Every section except `model` is optional. Unknown keys are rejected, and
//! errors name the offending JSON path.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::calibration::CalibrationSpec;
use crate::detector::WindowConfig;
use crate::error::{Error, Result};
use crate::harness::{self, Normalization, Scenario};
use crate::monitor::{MonitorConfig, Policy, DEFAULT_WARMUP};
use crate::rng::{derive_seed, STREAM_CALIBRATION};
use crate::sampler::{AlphaRule, AlphaSchedule};
use crate::ssm::ModelParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub model: ModelSection,
    #[serde(default)]
    pub window: WindowSection,
    #[serde(default)]
    pub policy: PolicySection,
    #[serde(default)]
    pub sampling: SamplingSection,
    #[serde(default)]
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub calibration: Option<CalibrationSection>,
    #[serde(default)]
    pub io: IoSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// `paper-p10` or `paper-p30`; excludes `A` and `C`.
    #[serde(default)]
    pub builtin: Option<String>,
    #[serde(default, rename = "A")]
    pub a: Option<Vec<Vec<f64>>>,
    #[serde(default, rename = "C")]
    pub c: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub sigma_q: Option<f64>,
    #[serde(default)]
    pub sigma_r: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowSection {
    pub m1: usize,
    pub m2: usize,
    /// Control limit; calibrated when absent.
    #[serde(default)]
    pub h: Option<f64>,
}

impl Default for WindowSection {
    fn default() -> Self {
        Self { m1: 50, m2: 5, h: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySection {
    pub name: Policy,
    #[serde(default = "reference_alpha")]
    pub alpha: AlphaRule,
}

fn reference_alpha() -> AlphaRule {
    AlphaRule::Schedule(AlphaSchedule::reference())
}

impl Default for PolicySection {
    fn default() -> Self {
        Self {
            name: Policy::EAucrss,
            alpha: reference_alpha(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingSection {
    pub m: usize,
    #[serde(default = "default_n0")]
    pub n0: usize,
}

fn default_n0() -> usize {
    DEFAULT_WARMUP
}

impl Default for SamplingSection {
    fn default() -> Self {
        Self {
            m: 2,
            n0: DEFAULT_WARMUP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub name: Option<String>,
    /// Shift magnitudes; 0 is the in-control cell.
    pub grid: Vec<f64>,
    /// Policies compared by `benchmark`; defaults to `policy.name`.
    pub policies: Option<Vec<Policy>>,
    pub replications: usize,
    pub horizon_cap: usize,
    pub seed: u64,
    /// Change time in monitoring steps.
    pub tau: usize,
    /// Shift direction in state space; defaults to the first state.
    pub direction: Option<Vec<f64>>,
    /// Length of streams written by `simulate`.
    pub horizon: usize,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            name: None,
            grid: vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0],
            policies: None,
            replications: 1000,
            horizon_cap: 2000,
            seed: 0,
            tau: 0,
            direction: None,
            horizon: 500,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationSection {
    #[serde(default = "default_target")]
    pub target_add_ic: f64,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    pub h_lo: f64,
    pub h_hi: f64,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_max_expansions")]
    pub max_expansions: usize,
    /// Defaults to `experiment.replications`.
    #[serde(default)]
    pub replications: Option<usize>,
    /// Defaults to `experiment.horizon_cap`.
    #[serde(default)]
    pub horizon_cap: Option<usize>,
    /// Defaults to a seed derived from `experiment.seed`.
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_target() -> f64 {
    200.0
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

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationName {
    #[default]
    None,
    Zscore,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IoSection {
    pub output_dir: Option<PathBuf>,
    pub input_csv: Option<PathBuf>,
    pub reference_csv: Option<PathBuf>,
    pub normalization: NormalizationName,
}

fn config_err(path: &str, message: impl Into<String>) -> Error {
    Error::Config {
        path: path.to_string(),
        message: message.into(),
    }
}

fn matrix(rows: &[Vec<f64>], path: &str) -> Result<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || ncols == 0 {
        return Err(config_err(path, "matrix must be non-empty"));
    }
    for (i, r) in rows.iter().enumerate() {
        if r.len() != ncols {
            return Err(config_err(
                &format!("{path}[{i}]"),
                format!("row has {} entries, expected {ncols}", r.len()),
            ));
        }
        if let Some(j) = r.iter().position(|v| !v.is_finite()) {
            return Err(config_err(&format!("{path}[{i}][{j}]"), "entry must be finite"));
        }
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(rows.len(), ncols, &flat))
}

impl Config {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Config = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            config_err(&path, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    /// Check dimensions and ranges without running anything.
    pub fn validate(&self) -> Result<()> {
        let model = self.model()?;
        let (p, q) = (model.p(), model.q());
        if self.sampling.m == 0 || self.sampling.m > p {
            return Err(config_err(
                "sampling.m",
                format!("m = {} must satisfy 1 <= m <= p = {p}", self.sampling.m),
            ));
        }
        WindowConfig::new(self.window.m1, self.window.m2, self.window.h.unwrap_or(f64::INFINITY))
            .map_err(|e| config_err("window", e.to_string()))?;
        self.policy
            .alpha
            .validate()
            .map_err(|e| config_err("policy.alpha", e.to_string()))?;
        if let Some(dir) = &self.experiment.direction {
            if dir.len() != q {
                return Err(config_err(
                    "experiment.direction",
                    format!("has {} entries, expected q = {q}", dir.len()),
                ));
            }
            if dir.iter().all(|v| *v == 0.0) || dir.iter().any(|v| !v.is_finite()) {
                return Err(config_err("experiment.direction", "must be finite and nonzero"));
            }
        }
        if let Some(i) = self.experiment.grid.iter().position(|f| !f.is_finite()) {
            return Err(config_err(&format!("experiment.grid[{i}]"), "must be finite"));
        }
        if self.experiment.replications == 0 {
            return Err(config_err("experiment.replications", "must be positive"));
        }
        if self.experiment.horizon_cap == 0 {
            return Err(config_err("experiment.horizon_cap", "must be positive"));
        }
        if let Some(policies) = &self.experiment.policies {
            if policies.is_empty() {
                return Err(config_err("experiment.policies", "must not be empty"));
            }
        }
        if self.calibration.is_some() {
            self.calibration_spec()?
                .expect("section present")
                .validate()
                .map_err(|e| config_err("calibration", e.to_string()))?;
        }
        if self.io.normalization == NormalizationName::Zscore && self.io.reference_csv.is_none() {
            return Err(config_err("io.reference_csv", "required when normalization is zscore"));
        }
        Ok(())
    }

    pub fn model(&self) -> Result<ModelParams> {
        let m = &self.model;
        let base = match (&m.builtin, &m.a, &m.c) {
            (Some(name), None, None) => {
                harness::builtin_model(name).map_err(|e| config_err("model.builtin", e.to_string()))?
            }
            (Some(_), _, _) => {
                return Err(config_err("model", "give either `builtin` or `A` and `C`, not both"))
            }
            (None, Some(a), Some(c)) => {
                let a = matrix(a, "model.A")?;
                let c = matrix(c, "model.C")?;
                if a.nrows() != a.ncols() {
                    return Err(config_err(
                        "model.A",
                        format!("must be square, got {}x{}", a.nrows(), a.ncols()),
                    ));
                }
                if c.ncols() != a.nrows() {
                    return Err(config_err(
                        "model.C",
                        format!("has {} columns, expected q = {}", c.ncols(), a.nrows()),
                    ));
                }
                let sq = m.sigma_q.ok_or_else(|| config_err("model.sigma_q", "missing"))?;
                let sr = m.sigma_r.ok_or_else(|| config_err("model.sigma_r", "missing"))?;
                return ModelParams::new(a, c, sq, sr).map_err(|e| config_err("model", e.to_string()));
            }
            (None, None, _) => return Err(config_err("model.A", "missing")),
            (None, Some(_), None) => return Err(config_err("model.C", "missing")),
        };
        let sq = m.sigma_q.unwrap_or(base.sigma_q());
        let sr = m.sigma_r.unwrap_or(base.sigma_r());
        base.with_noise(sq, sr).map_err(|e| config_err("model", e.to_string()))
    }

    pub fn monitor_config(&self) -> Result<MonitorConfig> {
        Ok(MonitorConfig {
            window: WindowConfig::new(
                self.window.m1,
                self.window.m2,
                self.window.h.unwrap_or(f64::INFINITY),
            )
            .map_err(|e| config_err("window", e.to_string()))?,
            policy: self.policy.name,
            alpha: self.policy.alpha,
            m: self.sampling.m,
            n0: self.sampling.n0,
        })
    }

    pub fn calibration_spec(&self) -> Result<Option<CalibrationSpec>> {
        let Some(c) = &self.calibration else {
            return Ok(None);
        };
        Ok(Some(CalibrationSpec {
            target_add_ic: c.target_add_ic,
            tolerance: c.tolerance,
            h_lo: c.h_lo,
            h_hi: c.h_hi,
            max_iterations: c.max_iterations,
            max_expansions: c.max_expansions,
            replications: c.replications.unwrap_or(self.experiment.replications),
            horizon_cap: c.horizon_cap.unwrap_or(self.experiment.horizon_cap),
            seed: c
                .seed
                .unwrap_or_else(|| derive_seed(self.experiment.seed, STREAM_CALIBRATION, 0)),
        }))
    }

    pub fn direction(&self, q: usize) -> DVector<f64> {
        match &self.experiment.direction {
            Some(d) => {
                let v = DVector::from_column_slice(d);
                let norm = v.norm();
                v / norm
            }
            None => {
                let mut v = DVector::zeros(q);
                v[0] = 1.0;
                v
            }
        }
    }

    pub fn scenario(&self) -> Result<Scenario> {
        let model = self.model()?;
        let name = self
            .experiment
            .name
            .clone()
            .or_else(|| self.model.builtin.clone())
            .unwrap_or_else(|| "custom".to_string());
        let scenario = Scenario {
            name,
            direction: self.direction(model.q()),
            monitor: self.monitor_config()?,
            policies: self
                .experiment
                .policies
                .clone()
                .unwrap_or_else(|| vec![self.policy.name]),
            grid: self.experiment.grid.clone(),
            tau: self.experiment.tau,
            replications: self.experiment.replications,
            horizon_cap: self.experiment.horizon_cap,
            seed: self.experiment.seed,
            calibration: if self.window.h.is_some() {
                None
            } else {
                self.calibration_spec()?
            },
            model,
        };
        scenario.validate().map_err(|e| config_err("experiment", e.to_string()))?;
        Ok(scenario)
    }

    pub fn normalization(&self) -> Normalization {
        match (&self.io.normalization, &self.io.reference_csv) {
            (NormalizationName::Zscore, Some(r)) => Normalization::ZscoreFrom(r.clone()),
            _ => Normalization::None,
        }
    }
}
