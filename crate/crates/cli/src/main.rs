use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pomon::config::Config;
use pomon::harness::{self, Normalization};
use pomon::{calibrate_h, simulate_stream, ChangeSpec, Error, ErrorClass, Policy, Result};

#[derive(Parser, Debug)]
#[command(name = "pomon", version, about = "Change detection with partial observations")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// JSON configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `experiment.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (default: `io.output_dir`, else the current directory).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for Monte-Carlo loops.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a simulated full-observation stream to `stream.csv`.
    Simulate {
        #[arg(long)]
        horizon: Option<usize>,
        /// First row (0-based) carrying the shift.
        #[arg(long)]
        tau: Option<usize>,
        /// Shift magnitude along `experiment.direction`.
        #[arg(long)]
        shift: Option<f64>,
        #[arg(long)]
        sigma_q: Option<f64>,
        #[arg(long)]
        sigma_r: Option<f64>,
    },
    /// Search the control limit and write `calibration.json`.
    Calibrate,
    /// Run the shift grid and write `results.csv` and `plot_<scenario>.csv`.
    Benchmark {
        /// Comma-separated subset of aucrss, e_aucrss, random.
        #[arg(long, value_delimiter = ',')]
        policies: Option<Vec<String>>,
    },
    /// Monitor a recorded CSV stream and write `run_record.json`.
    Replay {
        /// Defaults to `io.input_csv`.
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let message = e.to_string();
            eprintln!("error: {message}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                let cause = s.to_string();
                if !message.contains(&cause) {
                    eprintln!("  caused by: {cause}");
                }
                source = s.source();
            }
            ExitCode::from(match e.class() {
                ErrorClass::Config => 2,
                ErrorClass::Numerical => 3,
                ErrorClass::Io => 4,
            })
        }
    }
}

fn load_config(global: &Global) -> Result<Config> {
    let path = global.config.as_ref().ok_or_else(|| Error::Config {
        path: "--config".into(),
        message: "a configuration file is required".into(),
    })?;
    let mut cfg = Config::load(path)?;
    if let Some(seed) = global.seed {
        cfg.experiment.seed = seed;
    }
    Ok(cfg)
}

fn out_dir(global: &Global, cfg: &Config) -> Result<PathBuf> {
    let dir = global
        .out
        .clone()
        .or_else(|| cfg.io.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir).map_err(|e| Error::Io { path: dir.clone(), source: e })?;
    Ok(dir)
}

fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable report");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.global.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
    }
    let cfg = load_config(&cli.global)?;
    for w in cfg.monitor_config()?.warnings(&cfg.model()?) {
        eprintln!("warning: {w}");
    }
    match cli.command {
        Command::Simulate {
            horizon,
            tau,
            shift,
            sigma_q,
            sigma_r,
        } => {
            let mut model = cfg.model()?;
            if sigma_q.is_some() || sigma_r.is_some() {
                model = model.with_noise(
                    sigma_q.unwrap_or(model.sigma_q()),
                    sigma_r.unwrap_or(model.sigma_r()),
                )?;
            }
            let change = match shift {
                Some(f) if f != 0.0 => ChangeSpec::new(
                    tau.unwrap_or(cfg.experiment.tau),
                    cfg.direction(model.q()) * f,
                )?,
                _ => ChangeSpec::in_control(model.q()),
            };
            let horizon = horizon.unwrap_or(cfg.experiment.horizon);
            let stream = simulate_stream(&model, &change, horizon, cfg.experiment.seed)?;
            let path = out_dir(&cli.global, &cfg)?.join("stream.csv");
            harness::write_stream_csv(&stream.observations, &path)?;
            println!("wrote {} rows x {} columns to {}", horizon, model.p(), path.display());
        }
        Command::Calibrate => {
            let model = cfg.model()?;
            let monitor = cfg.monitor_config()?;
            let spec = cfg.calibration_spec()?.ok_or_else(|| Error::Config {
                path: "calibration".into(),
                message: "section required for calibrate".into(),
            })?;
            let report = calibrate_h(&spec, &model, &monitor)?;
            let path = out_dir(&cli.global, &cfg)?.join("calibration.json");
            write_json(&report, &path)?;
            println!("h = {}", report.h);
            println!(
                "ADD_IC = {} (SDD {}, censored {}, {} iterations, {} replications)",
                report.achieved_add_ic,
                report.sdd,
                report.censored_fraction,
                report.iterations,
                report.replications
            );
        }
        Command::Benchmark { policies } => {
            let mut scenario = cfg.scenario()?;
            if let Some(names) = policies {
                scenario.policies = names
                    .iter()
                    .map(|n| n.parse::<Policy>())
                    .collect::<Result<Vec<_>>>()?;
            }
            let table = harness::run_scenario(&scenario)?;
            let files = harness::emit_outputs(&table, &out_dir(&cli.global, &cfg)?)?;
            println!("{:<10} {:<9} {:>8} {:>10} {:>10} {:>9}", "scenario", "policy", "f", "ADD", "SDD", "h");
            for r in &table.rows {
                let num = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
                println!(
                    "{:<10} {:<9} {:>8} {:>10} {:>10} {:>9} {}",
                    r.scenario,
                    r.policy.name(),
                    r.f,
                    num(r.add),
                    num(r.sdd),
                    num(r.h),
                    if r.status == "ok" { "" } else { &r.status }
                );
            }
            for f in files {
                println!("wrote {}", f.display());
            }
        }
        Command::Replay { input } => {
            let model = cfg.model()?;
            let monitor = cfg.monitor_config()?;
            if cfg.window.h.is_none() {
                return Err(Error::Config {
                    path: "window.h".into(),
                    message: "replay needs a control limit".into(),
                });
            }
            let input = input.or_else(|| cfg.io.input_csv.clone()).ok_or_else(|| Error::Config {
                path: "io.input_csv".into(),
                message: "no input stream given (use --input)".into(),
            })?;
            let normalization: Normalization = cfg.normalization();
            let stream = harness::ingest_csv(&input, &normalization, Some(model.p()))?;
            let record = harness::replay_monitor(&stream, &model, &monitor, cfg.experiment.seed)?;
            let path = out_dir(&cli.global, &cfg)?.join("run_record.json");
            write_json(&record, &path)?;
            match record.alarm_time {
                Some(n) => println!(
                    "alarm at monitoring step {n} (row {}), change estimated after row {}",
                    record.alarm_step.unwrap_or(0),
                    record.tau_hat.map_or("-".into(), |k| k.to_string())
                ),
                None => println!("no alarm in {} rows", stream.len()),
            }
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}
