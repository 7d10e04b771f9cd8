//! Sequential change detection for autocorrelated multivariate streams when
//! only a few variables can be observed at each step.
//!
//! The building blocks are
//!
//! * [`ssm`]: the state-space model, stream simulation and a Kalman predictor
//!   that accepts a different observed subset at every step;
//! * [`detector`]: a windowed generalized likelihood ratio scan for a mean
//!   shift in the latent state;
//! * [`sampler`]: upper-confidence-region subset selection (exhaustive,
//!   greedy and random);
//! * [`monitor`]: the online loop tying the three together;
//! * [`calibration`]: Monte-Carlo run lengths and control-limit search;
//! * [`harness`]: experiment scenarios, result tables and CSV replay.

pub mod calibration;
pub mod config;
pub mod detector;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod monitor;
pub mod rng;
pub mod sampler;
pub mod ssm;
pub mod stats;

pub use calibration::{
    calibrate_h, estimate_add, run_once, AddEstimate, CalibrationReport, CalibrationSpec,
    RunLengthSample,
};
pub use detector::{Detector, ScanResult, StepTerm, WindowConfig};
pub use error::{Error, ErrorClass, Result};
pub use monitor::{Monitor, MonitorConfig, Policy};
pub use sampler::{AlphaRule, AlphaSchedule, SamplingDecision, UcrInputs};
pub use ssm::{
    filter_init, filter_step, simulate_stream, ChangeSpec, FilterState, ModelParams,
    ObservationMask, StepOutput,
};
