//! Accuracy and efficiency metrics for comparing traces: resampling onto a
//! uniform grid, Pearson correlation, step ratios and switch-time deltas.

use crate::trace::{RunReport, Trace};

/// Correlation is undefined (not zero) when either resampled series has no
/// variance or fewer than two points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Correlation {
    Defined(f64),
    Undefined,
}

impl Correlation {
    pub fn value(self) -> Option<f64> {
        match self {
            Correlation::Defined(v) => Some(v),
            Correlation::Undefined => None,
        }
    }
}

impl std::fmt::Display for Correlation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Correlation::Defined(v) => write!(f, "{v:.9}"),
            Correlation::Undefined => f.write_str("undefined"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("variable `{0}` not present in trace")]
    UnknownVariable(String),
    #[error("trace has no samples")]
    EmptyTrace,
    #[error("grid step must be positive")]
    BadGrid,
}

/// Sample a trace variable at the given times by linear interpolation.
///
/// Across a switch discontinuity (two samples at the same instant) the value
/// at the instant itself is the pre-switch one and the post-switch value
/// applies immediately after, i.e. the series is right-continuous past the
/// jump with the jump point pinned to the incoming branch.
pub fn resample(trace: &Trace, variable: &str, times: &[f64]) -> Result<Vec<f64>, MetricsError> {
    let idx = trace
        .var_index(variable)
        .ok_or_else(|| MetricsError::UnknownVariable(variable.to_string()))?;
    let samples = &trace.samples;
    if samples.is_empty() {
        return Err(MetricsError::EmptyTrace);
    }
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        let i = samples.partition_point(|s| s.time < t);
        let v = if i < samples.len() && samples[i].time == t {
            samples[i].values[idx] // first row at t = pre-switch value
        } else if i == 0 {
            samples[0].values[idx]
        } else if i == samples.len() {
            samples[i - 1].values[idx]
        } else {
            let a = &samples[i - 1]; // last row before t = post-switch value
            let b = &samples[i];
            let w = (t - a.time) / (b.time - a.time);
            a.values[idx] * (1.0 - w) + b.values[idx] * w
        };
        out.push(v);
    }
    Ok(out)
}

/// Pearson correlation of two traces' variable, both resampled onto the
/// uniform grid covering their common time span.
pub fn correlate(
    a: &Trace,
    b: &Trace,
    variable: &str,
    grid_dt: f64,
) -> Result<Correlation, MetricsError> {
    if grid_dt <= 0.0 || grid_dt.is_nan() {
        return Err(MetricsError::BadGrid);
    }
    let (Some(a0), Some(a1)) = (a.start_time(), a.end_time()) else {
        return Err(MetricsError::EmptyTrace);
    };
    let (Some(b0), Some(b1)) = (b.start_time(), b.end_time()) else {
        return Err(MetricsError::EmptyTrace);
    };
    let start = a0.max(b0);
    let end = a1.min(b1);
    let n = ((end - start) / grid_dt).floor() as usize;
    let times: Vec<f64> = (0..=n).map(|k| start + k as f64 * grid_dt).collect();
    let xs = resample(a, variable, &times)?;
    let ys = resample(b, variable, &times)?;
    Ok(pearson(&xs, &ys))
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> Correlation {
    let n = xs.len().min(ys.len());
    if n < 2 {
        return Correlation::Undefined;
    }
    let nf = n as f64;
    let mean_x = xs[..n].iter().sum::<f64>() / nf;
    let mean_y = ys[..n].iter().sum::<f64>() / nf;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for i in 0..n {
        let dx = xs[i] - mean_x;
        let dy = ys[i] - mean_y;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Correlation::Undefined;
    }
    Correlation::Defined(sxy / (sxx.sqrt() * syy.sqrt()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonResult {
    /// Correlation per compared output variable.
    pub correlations: Vec<(String, Correlation)>,
    /// intra_steps of run A over intra_steps of run B.
    pub step_ratio: f64,
    /// Pairwise switch-time differences (A minus B) for the switches both
    /// runs observed.
    pub switch_time_deltas: Vec<f64>,
}

/// Aggregate the accuracy / efficiency columns for a pair of runs.
pub fn compare(
    report_a: &RunReport,
    report_b: &RunReport,
    trace_a: &Trace,
    trace_b: &Trace,
    variables: &[&str],
    grid_dt: f64,
) -> Result<ComparisonResult, MetricsError> {
    let mut correlations = Vec::with_capacity(variables.len());
    for v in variables {
        correlations.push((v.to_string(), correlate(trace_a, trace_b, v, grid_dt)?));
    }
    let step_ratio = if report_b.intra_steps == 0 {
        f64::INFINITY
    } else {
        report_a.intra_steps as f64 / report_b.intra_steps as f64
    };
    let switch_time_deltas = trace_a
        .switches
        .iter()
        .zip(trace_b.switches.iter())
        .map(|(a, b)| a.time - b.time)
        .collect();
    Ok(ComparisonResult { correlations, step_ratio, switch_time_deltas })
}
