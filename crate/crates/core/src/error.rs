use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed manifest {path}: {source}")]
    Manifest { path: PathBuf, source: serde_json::Error },
    #[error("malformed CSV {path}: {msg}")]
    Csv { path: PathBuf, msg: String },
    #[error("trial {trial}: sampling-rate field `{field}` absent")]
    MissingRate { trial: u32, field: &'static str },
    #[error("{stream}: invalid sampling rate {rate}")]
    BadRate { stream: &'static str, rate: f64 },
    #[error("trial {trial}: expected 14 EMG channels, found {found}")]
    ChannelCount { trial: u32, found: usize },
    #[error("trial {trial}: event timestamps out of order (vr onset <= robust onset <= end)")]
    EventOrder { trial: u32 },
    #[error("trial {trial}: perturbation onset {delay:.3} s after VR onset exceeds 0.8 s")]
    OnsetWindow { trial: u32, delay: f64 },
    #[error("trial {trial}: duration {duration:.3} s exceeds the 3 s window")]
    TrialTooLong { trial: u32, duration: f64 },
    #[error("{stream}: timestamps not strictly increasing at sample {index}")]
    TimestampOrder { stream: &'static str, index: usize },
    #[error("{0}: fewer than 2 samples")]
    StreamTooShort(&'static str),
    #[error("{stream}: covers [{first}, {last}] s but [{need_from}, {need_to}] s is required")]
    Coverage { stream: &'static str, first: f64, last: f64, need_from: f64, need_to: f64 },
    #[error("trial {trial}: shape mismatch ({what})")]
    Shape { trial: u32, what: &'static str },
    #[error("unknown direction label `{0}`")]
    UnknownDirection(String),
    #[error("unknown group label `{0}`")]
    UnknownGroup(String),
    #[error("subject {subject} session {session}: expected {expected} trials, found {found}")]
    TrialCount { subject: String, session: u32, expected: usize, found: usize },
    #[error("plate CSV {path}: expected plate ids 0 and 1")]
    PlateIds { path: PathBuf },
}

#[derive(Debug, Error, PartialEq)]
pub enum ResampleError {
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("timestamps not strictly increasing at sample {0}")]
    NonMonotonic(usize),
    #[error("sample and timestamp counts differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("invalid rate {0}")]
    BadRate(f64),
}

#[derive(Debug, Error, PartialEq)]
pub enum DspError {
    #[error("empty signal")]
    Empty,
    #[error("sampling rate {rate} Hz too low for {cutoff} Hz (Nyquist)")]
    Nyquist { rate: f64, cutoff: f64 },
    #[error("signal of {len} samples too short for edge padding of {pad}")]
    TooShort { len: usize, pad: usize },
    #[error("invalid filter spec: {0}")]
    Spec(String),
    #[error("channel {channel}: {source}")]
    Channel { channel: usize, source: Box<DspError> },
}

#[derive(Debug, Error, PartialEq)]
pub enum BinningError {
    #[error("window [{start}, {end}) contains no samples")]
    EmptyWindow { start: f64, end: f64 },
    #[error("muscle {0} is zero everywhere (dead electrode?)")]
    DeadChannel(String),
    #[error("no valid trials for bin {bin} direction {direction}")]
    EmptyCell { bin: String, direction: String },
    #[error("direction {0} missing")]
    MissingDirection(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
}

#[derive(Debug, Error, PartialEq)]
pub enum SynergyError {
    #[error("synergy count {n} outside 1..={max}")]
    BadRank { n: usize, max: usize },
    #[error("matrix has a negative entry at ({0}, {1})")]
    Negative(usize, usize),
    #[error("matrix is identically zero")]
    AllZero,
    #[error("shape mismatch: {0}")]
    Shape(String),
}

#[derive(Debug, Error, PartialEq)]
pub enum BalanceError {
    #[error("no sample exceeds the vertical-load threshold")]
    AllInvalid,
    #[error("need at least 2 valid samples, got {0}")]
    TooFewValid(usize),
    #[error("time grids differ between plates")]
    GridMismatch,
    #[error("both plates unloaded at sample {0}")]
    BothInvalid(usize),
    #[error("input length mismatch")]
    Length,
}

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("force ({0:.3}, {1:.3}) N is outside the cable cone")]
    InfeasibleForce(f64, f64),
    #[error("required tension {0:.3} N exceeds the cap {1:.3} N")]
    TensionCap(f64, f64),
    #[error("degenerate cable geometry: {0}")]
    Geometry(String),
    #[error("non-finite body state")]
    NonFinite,
    #[error("time step {0} s exceeds 2 ms")]
    StepTooLarge(f64),
    #[error("degenerate point set for boundary")]
    DegenerateBoundary,
    #[error("negative hit radius {0}")]
    NegativeRadius(f64),
    #[error("invalid scenario: {0}")]
    Spec(String),
}

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("empty sample")]
    Empty,
    #[error("sample too small: need >= {need}, got {got}")]
    TooSmall { need: usize, got: usize },
    #[error("both samples have zero variance")]
    ZeroVariance,
    #[error("exact null distribution limited to n1 + n2 <= {max}, got {got}")]
    ExactTooLarge { max: usize, got: usize },
    #[error("non-finite observation")]
    NonFinite,
}

/// A failed pipeline stage, naming the trial when one is at fault.
#[derive(Debug, Error, PartialEq)]
#[error("stage {stage} failed{}: {message}", trial_suffix(.subject, .trial))]
pub struct PipelineError {
    pub stage: &'static str,
    pub subject: Option<String>,
    pub trial: Option<u32>,
    pub message: String,
}

fn trial_suffix(subject: &Option<String>, trial: &Option<u32>) -> String {
    match (subject, trial) {
        (Some(s), Some(t)) => format!(" (subject {s}, trial {t})"),
        (Some(s), None) => format!(" (subject {s})"),
        (None, Some(t)) => format!(" (trial {t})"),
        (None, None) => String::new(),
    }
}

impl PipelineError {
    pub fn stage(stage: &'static str, message: impl ToString) -> Self {
        PipelineError { stage, subject: None, trial: None, message: message.to_string() }
    }

    pub fn at(stage: &'static str, subject: &str, trial: u32, message: impl ToString) -> Self {
        PipelineError { stage, subject: Some(subject.to_string()), trial: Some(trial), message: message.to_string() }
    }
}
