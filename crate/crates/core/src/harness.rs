//! Experiment scenarios, result tables, CSV ingestion and replay.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{calibrate_h, estimate_add, CalibrationSpec, Replication, RunLengthSample};
use crate::error::{Error, Result};
use crate::monitor::{Monitor, MonitorConfig, Policy, DEFAULT_WARMUP};
use crate::rng::{derive_seed, rng_for, STREAM_CALIBRATION, STREAM_MODEL, STREAM_SAMPLER};
use crate::sampler::AlphaRule;
use crate::ssm::{ChangeSpec, ModelParams};
use crate::detector::WindowConfig;
use crate::linalg;
use crate::stats;

pub const BUILTIN_SCENARIOS: [&str; 2] = ["paper-p10", "paper-p30"];

/// Noise s.d. of the built-in models: state and observation noise variance 0.1.
pub const PAPER_NOISE_SD: f64 = 0.316_227_766_016_837_94;

/// The p = 10, q = 7 benchmark model with `Q = R = 0.1 I`.
pub fn paper_p10_model() -> ModelParams {
    let mut a = DMatrix::from_diagonal_element(7, 7, 0.6);
    a[(1, 4)] = 0.1;
    a[(2, 5)] = 0.15;
    a[(4, 1)] = 0.15;
    a[(5, 2)] = 0.1;
    #[rustfmt::skip]
    let c = DMatrix::from_row_slice(10, 7, &[
        1.0, 0.0, 0.0, 0.3, 0.0, 0.0, 0.0,
        0.0, 1.0, 0.0, 0.0, 2.0, 0.0, 0.0,
        0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0,
        0.0, 0.0, 0.1, 1.0, 0.0, 0.0, 0.0,
        0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.5,
        0.0, 0.2, 0.0, 0.0, 0.0, 1.0, 0.0,
        0.0, 0.0, 0.0, 0.0, 0.0, 1.2, 1.0,
        0.0, 0.5, 0.0, 1.0, 0.0, 0.0, 0.0,
        0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.7,
        0.0, 0.0, 0.2, 0.0, 0.0, 1.0, 0.0,
    ]);
    ModelParams::new(a, c, PAPER_NOISE_SD, PAPER_NOISE_SD).expect("built-in model is valid")
}

pub const PAPER_P30_SEED: u64 = 30;

/// A generated p = 30, q = 15 model.
///
/// `A` is a sparse symmetric matrix with unit diagonal and one random coupling
/// per row, rescaled to spectral radius 0.6. `C` has ones on its leading
/// diagonal (rows beyond q read state `i - q`) plus one extra random entry per row.
pub fn paper_p30_model() -> ModelParams {
    let (p, q) = (30, 15);
    let mut rng = rng_for(PAPER_P30_SEED, STREAM_MODEL, 0);
    let mut s = DMatrix::<f64>::identity(q, q);
    for i in 0..q {
        let j = rng.random_range(0..q);
        if j != i {
            let v = rng.random_range(0.1..0.4);
            s[(i, j)] = v;
            s[(j, i)] = v;
        }
    }
    let a = &s * (0.6 / linalg::spectral_radius(&s));
    let mut c = DMatrix::<f64>::zeros(p, q);
    for i in 0..p {
        let base = i % q;
        c[(i, base)] = 1.0;
        let mut j = rng.random_range(0..q - 1);
        if j >= base {
            j += 1;
        }
        c[(i, j)] = rng.random_range(0.2..1.5);
    }
    ModelParams::new(a, c, PAPER_NOISE_SD, PAPER_NOISE_SD).expect("generated model is valid")
}

pub fn builtin_model(name: &str) -> Result<ModelParams> {
    match name {
        "paper-p10" => Ok(paper_p10_model()),
        "paper-p30" => Ok(paper_p30_model()),
        other => Err(Error::InvalidInput(format!(
            "unknown built-in model `{other}` (expected one of {BUILTIN_SCENARIOS:?})"
        ))),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub model: ModelParams,
    /// Shared monitor settings; `policy` is overridden per row.
    pub monitor: MonitorConfig,
    pub policies: Vec<Policy>,
    /// Shift magnitudes. Zero means in control.
    pub grid: Vec<f64>,
    /// Unit direction of the shift in state space.
    pub direction: DVector<f64>,
    /// Change time in monitoring steps.
    pub tau: usize,
    pub replications: usize,
    pub horizon_cap: usize,
    pub seed: u64,
    /// When present, `h` is calibrated per policy before running the grid.
    pub calibration: Option<CalibrationSpec>,
}

impl Scenario {
    /// Built-in scenario with m = 2, E-AUCRSS, the reference α schedule and
    /// the policy-comparison shift grid along the first state.
    pub fn builtin(name: &str) -> Result<Self> {
        let model = builtin_model(name)?;
        let q = model.q();
        let mut direction = DVector::zeros(q);
        direction[0] = 1.0;
        let seed = 2024;
        Ok(Self {
            name: name.to_string(),
            monitor: MonitorConfig {
                window: WindowConfig::new(50, 5, f64::INFINITY)?,
                policy: Policy::EAucrss,
                alpha: AlphaRule::Schedule(crate::sampler::AlphaSchedule::reference()),
                m: if q > 7 { 5 } else { 2 },
                n0: DEFAULT_WARMUP,
            },
            model,
            policies: vec![Policy::EAucrss, Policy::Random],
            grid: vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0],
            direction,
            tau: 0,
            replications: 1000,
            horizon_cap: 2000,
            seed,
            calibration: Some(CalibrationSpec {
                horizon_cap: 2000,
                ..CalibrationSpec::new(200.0, 5.0, 40.0, 1000, derive_seed(seed, STREAM_CALIBRATION, 0))
            }),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.direction.len() != self.model.q() {
            return Err(Error::InvalidInput(format!(
                "shift direction has length {}, expected q = {}",
                self.direction.len(),
                self.model.q()
            )));
        }
        if self.grid.iter().any(|f| !f.is_finite()) {
            return Err(Error::InvalidInput("shift grid must be finite".into()));
        }
        if self.policies.is_empty() {
            return Err(Error::InvalidInput("no policies selected".into()));
        }
        if self.replications == 0 || self.horizon_cap == 0 {
            return Err(Error::InvalidInput(
                "replications and horizon_cap must be positive".into(),
            ));
        }
        if self.calibration.is_none() && self.monitor.window.h == f64::INFINITY {
            return Err(Error::InvalidInput(
                "control limit h is missing and no calibration is configured".into(),
            ));
        }
        if let Some(spec) = &self.calibration {
            spec.validate()?;
        }
        self.monitor.validate(&self.model)
    }

    pub fn change_for(&self, magnitude: f64) -> Result<ChangeSpec> {
        if magnitude == 0.0 {
            Ok(ChangeSpec::in_control(self.model.q()))
        } else {
            ChangeSpec::new(self.tau, &self.direction * magnitude)
        }
    }

    /// Run lengths of one grid cell under control limit `h`.
    pub fn run_cell(&self, policy: Policy, magnitude: f64, h: f64) -> Result<Vec<RunLengthSample>> {
        let config = MonitorConfig { policy, ..self.monitor };
        let change = self.change_for(magnitude)?;
        (0..self.replications as u64)
            .into_par_iter()
            .map(|r| {
                let mut rep = Replication::new(&self.model, &config, &change, self.seed, r)?;
                Ok(RunLengthSample {
                    alarm_time: rep.alarm_time(h, self.horizon_cap)?,
                    replication: r,
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub scenario: String,
    pub policy: Policy,
    pub f: f64,
    pub add: Option<f64>,
    pub sdd: Option<f64>,
    pub n_reps: usize,
    pub censored: Option<f64>,
    pub h: Option<f64>,
    /// `ok`, or `failed: <reason>`.
    pub status: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

impl ResultTable {
    pub fn get(&self, policy: Policy, f: f64) -> Option<&ResultRow> {
        self.rows.iter().find(|r| r.policy == policy && r.f == f)
    }
}

/// Calibrate (if configured) and run every (policy, shift) cell.
/// A failing cell is recorded with its reason and the sweep continues.
pub fn run_scenario(scenario: &Scenario) -> Result<ResultTable> {
    scenario.validate()?;
    let mut table = ResultTable::default();
    for &policy in &scenario.policies {
        let h = match &scenario.calibration {
            Some(spec) => {
                let config = MonitorConfig { policy, ..scenario.monitor };
                calibrate_h(spec, &scenario.model, &config).map(|r| r.h)
            }
            None => Ok(scenario.monitor.window.h),
        };
        for &f in &scenario.grid {
            let mut row = ResultRow {
                scenario: scenario.name.clone(),
                policy,
                f,
                add: None,
                sdd: None,
                n_reps: scenario.replications,
                censored: None,
                h: h.as_ref().ok().copied(),
                status: "ok".into(),
            };
            let cell = h.as_ref().map_err(|e| e.to_string()).and_then(|&h| {
                let samples = scenario.run_cell(policy, f, h).map_err(|e| e.to_string())?;
                let tau = (f != 0.0).then_some(scenario.tau);
                estimate_add(&samples, tau, scenario.horizon_cap).map_err(|e| e.to_string())
            });
            match cell {
                Ok(est) => {
                    row.add = Some(est.add);
                    row.sdd = Some(est.sdd);
                    row.censored = Some(est.censored_fraction);
                }
                Err(reason) => row.status = format!("failed: {reason}"),
            }
            table.rows.push(row);
        }
    }
    Ok(table)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(file))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::io(path, std::io::Error::other(format!("{other:?}"))),
    }
}

/// Write `results.csv` and one `plot_<scenario>.csv` per scenario into `dir`.
pub fn emit_outputs(table: &ResultTable, dir: &Path) -> Result<Vec<PathBuf>> {
    if table.rows.is_empty() {
        return Err(Error::InvalidInput("result table is empty".into()));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();

    let path = dir.join("results.csv");
    let mut w = csv_writer(&path)?;
    let header = ["scenario", "policy", "f", "ADD", "SDD", "n_reps", "censored", "h", "status"];
    w.write_record(header).map_err(|e| csv_err(&path, e))?;
    for r in &table.rows {
        w.write_record([
            r.scenario.clone(),
            r.policy.to_string(),
            r.f.to_string(),
            fmt_opt(r.add),
            fmt_opt(r.sdd),
            r.n_reps.to_string(),
            fmt_opt(r.censored),
            fmt_opt(r.h),
            r.status.clone(),
        ])
        .map_err(|e| csv_err(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    written.push(path);

    let mut scenarios: Vec<&str> = Vec::new();
    for r in &table.rows {
        if !scenarios.contains(&r.scenario.as_str()) {
            scenarios.push(&r.scenario);
        }
    }
    for name in scenarios {
        let rows: Vec<&ResultRow> = table.rows.iter().filter(|r| r.scenario == name).collect();
        let mut policies: Vec<Policy> = Vec::new();
        let mut shifts: Vec<f64> = Vec::new();
        for r in &rows {
            if !policies.contains(&r.policy) {
                policies.push(r.policy);
            }
            if !shifts.contains(&r.f) {
                shifts.push(r.f);
            }
        }
        let path = dir.join(format!("plot_{name}.csv"));
        let mut w = csv_writer(&path)?;
        let mut header = vec!["f".to_string()];
        header.extend(policies.iter().map(|p| format!("ADD_{p}")));
        w.write_record(&header).map_err(|e| csv_err(&path, e))?;
        for f in shifts {
            let mut rec = vec![f.to_string()];
            for p in &policies {
                let add = rows.iter().find(|r| r.policy == *p && r.f == f).and_then(|r| r.add);
                rec.push(fmt_opt(add));
            }
            w.write_record(&rec).map_err(|e| csv_err(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

/// Write observation rows as CSV with a `y1,…,yp` header.
pub fn write_stream_csv(rows: &[DVector<f64>], path: &Path) -> Result<()> {
    let p = rows.first().map_or(0, |r| r.len());
    let mut w = csv_writer(path)?;
    let header: Vec<String> = (1..=p).map(|j| format!("y{j}")).collect();
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record(r.iter().map(|v| v.to_string()))
            .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub enum Normalization {
    None,
    /// Z-score each column with the mean and sample s.d. of the reference file.
    ZscoreFrom(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordedStream {
    /// T × p observations after normalization.
    pub data: DMatrix<f64>,
    pub means: Option<DVector<f64>>,
    pub sds: Option<DVector<f64>>,
    pub source: String,
}

impl RecordedStream {
    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.nrows() == 0
    }

    pub fn width(&self) -> usize {
        self.data.ncols()
    }

    pub fn row(&self, t: usize) -> DVector<f64> {
        self.data.row(t).transpose()
    }
}

/// Read a rectangular numeric CSV. A first row with no numeric cell is a header.
pub fn read_numeric_csv(path: &Path, expected_p: Option<usize>) -> Result<DMatrix<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(bytes.as_slice());
    let located = |row: usize, column: usize, message: String| Error::Csv {
        path: path.to_path_buf(),
        row,
        column,
        message,
    };
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = expected_p;
    for (i, rec) in reader.records().enumerate() {
        let line = i + 1;
        let rec = rec.map_err(|e| located(line, 0, e.to_string()))?;
        if i == 0 && rec.iter().all(|c| c.parse::<f64>().is_err()) {
            if let Some(p) = width {
                if rec.len() != p {
                    return Err(located(line, 0, format!("header has {} columns, expected p = {p}", rec.len())));
                }
            }
            width = Some(rec.len());
            continue;
        }
        let w = *width.get_or_insert(rec.len());
        if rec.len() != w {
            let what = if expected_p == Some(w) { "expected p" } else { "expected" };
            return Err(located(line, rec.len().min(w) + 1, format!("row has {} columns, {what} = {w}", rec.len())));
        }
        let mut row = Vec::with_capacity(w);
        for (j, cell) in rec.iter().enumerate() {
            let v: f64 = cell
                .parse()
                .map_err(|_| located(line, j + 1, format!("non-numeric cell `{cell}`")))?;
            if !v.is_finite() {
                return Err(located(line, j + 1, format!("non-finite cell `{cell}`")));
            }
            row.push(v);
        }
        rows.push(row);
    }
    let p = width.unwrap_or(0);
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(rows.len(), p, &flat))
}

pub fn ingest_csv(path: &Path, normalization: &Normalization, expected_p: Option<usize>) -> Result<RecordedStream> {
    let mut data = read_numeric_csv(path, expected_p)?;
    let source = path.display().to_string();
    let Normalization::ZscoreFrom(reference) = normalization else {
        return Ok(RecordedStream { data, means: None, sds: None, source });
    };
    let refdata = read_numeric_csv(reference, Some(data.ncols()))?;
    if refdata.nrows() < 2 {
        return Err(Error::InvalidInput(format!(
            "reference file {} needs at least two rows",
            reference.display()
        )));
    }
    let p = data.ncols();
    let mut means = DVector::zeros(p);
    let mut sds = DVector::zeros(p);
    for j in 0..p {
        let col: Vec<f64> = refdata.column(j).iter().copied().collect();
        means[j] = stats::mean(&col);
        sds[j] = stats::std_dev(&col);
        if !(sds[j] > 0.0) {
            return Err(Error::Csv {
                path: reference.clone(),
                row: 0,
                column: j + 1,
                message: "reference column has zero standard deviation".into(),
            });
        }
    }
    for j in 0..p {
        for t in 0..data.nrows() {
            data[(t, j)] = (data[(t, j)] - means[j]) / sds[j];
        }
    }
    Ok(RecordedStream { data, means: Some(means), sds: Some(sds), source })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayStep {
    /// 1-based row of the stream.
    pub step: usize,
    /// Monitoring time, absent during the warm-up.
    pub time: Option<usize>,
    /// Observed columns, 1-based.
    pub mask: Vec<usize>,
    pub t_stat: f64,
    /// Candidate change point as a 1-based stream row: the change starts after it.
    pub tau_hat: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub source: String,
    pub h: f64,
    pub steps: Vec<ReplayStep>,
    /// Monitoring time of the alarm.
    pub alarm_time: Option<usize>,
    /// Stream row of the alarm.
    pub alarm_step: Option<usize>,
    pub tau_hat: Option<usize>,
    pub f_hat: Option<Vec<f64>>,
}

/// Monitor a recorded stream, revealing only the selected columns at each step.
pub fn replay_monitor(
    stream: &RecordedStream,
    model: &ModelParams,
    config: &MonitorConfig,
    seed: u64,
) -> Result<RunRecord> {
    if stream.width() != model.p() {
        return Err(Error::InvalidInput(format!(
            "stream has {} columns, model expects p = {}",
            stream.width(),
            model.p()
        )));
    }
    let min_len = config.n0 + config.window.m2 + 2;
    if stream.len() < min_len {
        return Err(Error::InvalidInput(format!(
            "stream has {} rows, needs at least n0 + m2 + 2 = {min_len}",
            stream.len()
        )));
    }
    let mut monitor = Monitor::new(model, *config, rng_for(seed, STREAM_SAMPLER, 0))?;
    let mut record = RunRecord {
        source: stream.source.clone(),
        h: config.window.h,
        steps: Vec::with_capacity(stream.len()),
        alarm_time: None,
        alarm_step: None,
        tau_hat: None,
        f_hat: None,
    };
    for t in 0..stream.len() {
        let report = monitor.observe_full(&stream.row(t))?;
        let tau_hat = report.scan.as_ref().and_then(|s| s.tau_hat);
        record.steps.push(ReplayStep {
            step: report.step,
            time: report.time,
            mask: report.mask.one_based(),
            t_stat: report.t_stat(),
            tau_hat,
        });
        if report.alarm {
            record.alarm_time = report.time;
            record.alarm_step = Some(report.step);
            record.tau_hat = tau_hat;
            record.f_hat = report
                .scan
                .as_ref()
                .and_then(|s| s.f_hat.as_ref())
                .map(|f| f.iter().copied().collect());
            break;
        }
    }
    Ok(record)
}
