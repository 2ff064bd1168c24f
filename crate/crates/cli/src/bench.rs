//! Benchmark harness: the three built-in systems over the standard parameter
//! grid, scored against a high-resolution reference trace.

use std::f64::consts::PI;

use fasim_core::metrics::{compare, correlate, Correlation};
use fasim_core::refsim::{simulate_reference, RefConfig};
use fasim_core::sim::{simulate, SimConfig};
use fasim_core::trace::{RunReport, Trace};
use fasim_core::translate::convert_to_fa;

use crate::builtins::{load_builtin, NAMES};
use crate::csv_io::SummaryRow;

pub const MAX_ANGLES: [(f64, &str); 4] =
    [(PI / 10.0, "pi/10"), (PI / 50.0, "pi/50"), (PI / 100.0, "pi/100"), (PI / 150.0, "pi/150")];
pub const ERR_TOLS: [f64; 3] = [1e-6, 1e-4, 1e-2];
pub const REF_DTS: [f64; 3] = [0.1, 0.01, 0.001];
pub const REFERENCE_DT: f64 = 1e-4;
pub const GRID_DT: f64 = 0.01;

fn min_correlation(
    trace: &Trace,
    reference: &Trace,
    outputs: &[String],
) -> Result<Option<f64>, String> {
    let mut worst: Option<f64> = None;
    for var in outputs {
        match correlate(trace, reference, var, GRID_DT).map_err(|e| e.to_string())? {
            Correlation::Defined(c) => {
                worst = Some(worst.map_or(c, |w: f64| w.min(c)));
            }
            Correlation::Undefined => return Ok(None),
        }
    }
    Ok(worst)
}

fn first_switch_delta(trace: &Trace, reference: &Trace) -> Option<f64> {
    match (trace.switches.first(), reference.switches.first()) {
        (Some(a), Some(b)) => Some(a.time - b.time),
        _ => None,
    }
}

/// Run the full grid. Returns one summary row per (benchmark, engine, cell).
pub fn run_bench() -> Result<Vec<SummaryRow>, String> {
    let mut rows = Vec::new();
    for name in NAMES {
        let model = load_builtin(name).map_err(|e| e.to_string())?;
        let t_max = model.defaults.t_max.unwrap_or(10.0);
        let outputs = model.defaults.outputs.clone();
        let fa = convert_to_fa(model.ha.clone()).map_err(|e| e.to_string())?;

        let ref_cfg = RefConfig { dt: REFERENCE_DT, t_max, ..Default::default() };
        let (ref_trace, _) = simulate_reference(&model.ha, &ref_cfg).map_err(|e| e.to_string())?;

        let base_cfg = RefConfig { dt: 0.001, t_max, ..Default::default() };
        let (_, base_report) =
            simulate_reference(&model.ha, &base_cfg).map_err(|e| e.to_string())?;
        let base_steps = base_report.intra_steps;

        let mut push = |engine: &str,
                        step_param: String,
                        err_tol: String,
                        trace: &Trace,
                        report: &RunReport|
         -> Result<(), String> {
            rows.push(SummaryRow {
                benchmark: name.to_string(),
                engine: engine.to_string(),
                step_param,
                err_tol,
                intra_steps: report.intra_steps,
                switches: report.switch_count,
                wall_s: report.wall_time,
                correlation: min_correlation(trace, &ref_trace, &outputs)?,
                first_switch_delta: first_switch_delta(trace, &ref_trace),
                step_ratio: Some(report.intra_steps as f64 / base_steps as f64),
            });
            Ok(())
        };

        for (max_angle, angle_label) in MAX_ANGLES {
            for err in ERR_TOLS {
                let cfg = SimConfig { t_max, max_angle, error_bound: err, ..Default::default() };
                let (trace, report) = simulate(&fa, &cfg).map_err(|e| e.to_string())?;
                push("fa", angle_label.to_string(), format!("{err:.0e}"), &trace, &report)?;
            }
        }
        for dt in REF_DTS {
            let cfg = RefConfig { dt, t_max, ..Default::default() };
            let (trace, report) = simulate_reference(&model.ha, &cfg).map_err(|e| e.to_string())?;
            push("ref", format!("{dt}"), String::from("-"), &trace, &report)?;
        }
    }
    Ok(rows)
}

/// One FA run against the reference, with traces returned for emission.
pub struct CompareOutcome {
    pub fa_trace: Trace,
    pub fa_report: RunReport,
    pub ref_trace: Trace,
    pub ref_report: RunReport,
    pub result: fasim_core::metrics::ComparisonResult,
}

pub fn run_compare(
    model: &crate::model_format::ParsedModel,
    mut sim_cfg: SimConfig,
    mut ref_cfg: RefConfig,
    grid_dt: f64,
) -> Result<CompareOutcome, String> {
    if let Some(t) = model.defaults.t_max {
        if sim_cfg.t_max == 0.0 {
            sim_cfg.t_max = t;
        }
        if ref_cfg.t_max == 0.0 {
            ref_cfg.t_max = t;
        }
    }
    let fa = convert_to_fa(model.ha.clone()).map_err(|e| e.to_string())?;
    let (fa_trace, fa_report) = simulate(&fa, &sim_cfg).map_err(|e| e.to_string())?;
    let (ref_trace, ref_report) =
        simulate_reference(&model.ha, &ref_cfg).map_err(|e| e.to_string())?;
    let outputs: Vec<&str> = if model.defaults.outputs.is_empty() {
        model.ha.variables.iter().map(|v| v.as_str()).collect()
    } else {
        model.defaults.outputs.iter().map(|v| v.as_str()).collect()
    };
    let result = compare(&fa_report, &ref_report, &fa_trace, &ref_trace, &outputs, grid_dt)
        .map_err(|e| e.to_string())?;
    Ok(CompareOutcome { fa_trace, fa_report, ref_trace, ref_report, result })
}
