//! Timestamped execution traces and per-run reports shared by both engines.

use crate::expr::Environment;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepKind {
    Init,
    Intra,
    Switch,
}

impl StepKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            StepKind::Init => "init",
            StepKind::Intra => "intra",
            StepKind::Switch => "switch",
        }
    }
}

impl std::str::FromStr for StepKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "init" => Ok(StepKind::Init),
            "intra" => Ok(StepKind::Intra),
            "switch" => Ok(StepKind::Switch),
            other => Err(format!("unknown step kind `{other}`")),
        }
    }
}

/// Angular bookkeeping for one flow variable at one sample, kept so traces can
/// be audited against the reconstruction identity
/// `value = entry + range * sin(theta)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameSnapshot {
    pub var: usize, // index into Trace::variables
    pub entry: f64,
    pub range: f64,
    pub theta: f64,
    pub normalized: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub time: f64,
    pub location: String,
    pub kind: StepKind,
    /// Values aligned with `Trace::variables`.
    pub values: Vec<f64>,
    /// Present for angular-engine traces, empty for time-domain ones.
    pub frames: Vec<FrameSnapshot>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwitchEvent {
    pub time: f64,
    pub source: String,
    pub target: String,
    pub pre: Environment,
    pub post: Environment,
}

/// Ordered samples plus the discrete switch events. Sample times are
/// non-decreasing; a switch produces two rows at the same instant (the
/// converged pre-switch sample and the post-reset one).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub variables: Vec<String>,
    pub samples: Vec<Sample>,
    pub switches: Vec<SwitchEvent>,
}

impl Trace {
    pub fn new(variables: Vec<String>) -> Self {
        Self { variables, samples: Vec::new(), switches: Vec::new() }
    }

    pub fn var_index(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v == name)
    }

    pub fn start_time(&self) -> Option<f64> {
        self.samples.first().map(|s| s.time)
    }

    pub fn end_time(&self) -> Option<f64> {
        self.samples.last().map(|s| s.time)
    }

    pub fn push(&mut self, sample: Sample) {
        debug_assert!(
            self.samples.last().is_none_or(|prev| sample.time >= prev.time),
            "sample times must be non-decreasing"
        );
        self.samples.push(sample);
    }
}

/// Per-run accounting: step counts, wall time, final state and any
/// diagnostics accumulated along the way.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunReport {
    pub intra_steps: u64,
    pub switch_count: u64,
    pub wall_time: f64,
    pub final_time: f64,
    pub final_location: String,
    pub final_env: Environment,
    pub diagnostics: Vec<String>,
}
