//! Trace and summary CSV emission.
//!
//! Trace schema: `time,location,step_kind,<var1>,<var2>,...` with one row per
//! sample; a switch produces two rows at the same time (pre and post). Values
//! are written with 17 significant digits so a read-back reproduces them
//! bit-exactly.

use std::io::{self, BufRead, Write};
use std::path::Path;

use fasim_core::trace::{Sample, StepKind, Trace};

fn fmt_value(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_trace<W: Write>(trace: &Trace, mut out: W) -> io::Result<()> {
    write!(out, "time,location,step_kind")?;
    for v in &trace.variables {
        write!(out, ",{v}")?;
    }
    writeln!(out)?;
    for s in &trace.samples {
        write!(out, "{},{},{}", fmt_value(s.time), s.location, s.kind.as_str())?;
        for v in &s.values {
            write!(out, ",{}", fmt_value(*v))?;
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn write_trace_file(trace: &Trace, path: &Path) -> io::Result<()> {
    let file = std::fs::File::create(path)?;
    write_trace(trace, io::BufWriter::new(file))
}

#[derive(Debug, thiserror::Error)]
pub enum TraceReadError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {0}: {1}")]
    Format(usize, String),
}

pub fn read_trace<R: BufRead>(input: R) -> Result<Trace, TraceReadError> {
    let mut lines = input.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| TraceReadError::Format(1, "empty file".into()))?;
    let header = header?;
    let mut cols = header.split(',');
    for expected in ["time", "location", "step_kind"] {
        if cols.next() != Some(expected) {
            return Err(TraceReadError::Format(1, format!("expected `{expected}` column")));
        }
    }
    let variables: Vec<String> = cols.map(|c| c.to_string()).collect();
    let mut trace = Trace::new(variables);
    for (idx, line) in lines {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let n = idx + 1;
        let mut fields = line.split(',');
        let bad = |what: &str| TraceReadError::Format(n, what.to_string());
        let time: f64 = fields
            .next()
            .ok_or_else(|| bad("missing time"))?
            .parse()
            .map_err(|_| bad("bad time"))?;
        let location = fields.next().ok_or_else(|| bad("missing location"))?.to_string();
        let kind: StepKind = fields
            .next()
            .ok_or_else(|| bad("missing step_kind"))?
            .parse()
            .map_err(|e: String| TraceReadError::Format(n, e))?;
        let mut values = Vec::with_capacity(trace.variables.len());
        for f in fields {
            values.push(f.parse().map_err(|_| bad("bad value"))?);
        }
        if values.len() != trace.variables.len() {
            return Err(bad("wrong number of value columns"));
        }
        trace.push(Sample { time, location, kind, values, frames: vec![] });
    }
    Ok(trace)
}

pub fn read_trace_file(path: &Path) -> Result<Trace, TraceReadError> {
    let file = std::fs::File::open(path)?;
    read_trace(io::BufReader::new(file))
}

/// One row of the benchmark summary.
#[derive(Debug, Clone)]
pub struct SummaryRow {
    pub benchmark: String,
    pub engine: String,
    /// Max angle for the angular engine, dt for the time-domain ones.
    pub step_param: String,
    pub err_tol: String,
    pub intra_steps: u64,
    pub switches: u64,
    pub wall_s: f64,
    /// Minimum correlation over the designated outputs vs the reference.
    pub correlation: Option<f64>,
    pub first_switch_delta: Option<f64>,
    /// Steps relative to the dt = 0.001 fixed-step run.
    pub step_ratio: Option<f64>,
}

pub fn write_summary_csv<W: Write>(rows: &[SummaryRow], mut out: W) -> io::Result<()> {
    writeln!(
        out,
        "benchmark,engine,step_param,err_tol,intra_steps,switches,wall_s,correlation,first_switch_delta,step_ratio"
    )?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{:.6},{},{},{}",
            r.benchmark,
            r.engine,
            r.step_param,
            r.err_tol,
            r.intra_steps,
            r.switches,
            r.wall_s,
            r.correlation.map_or(String::from("undefined"), |c| format!("{c:.9}")),
            r.first_switch_delta.map_or(String::new(), |d| format!("{d:.3e}")),
            r.step_ratio.map_or(String::new(), |s| format!("{s:.6}")),
        )?;
    }
    Ok(())
}

pub fn format_summary_table(rows: &[SummaryRow]) -> String {
    let mut out = String::new();
    let header = format!(
        "{:<16} {:<7} {:>10} {:>8} {:>9} {:>8} {:>10} {:>13} {:>13} {:>10}\n",
        "benchmark",
        "engine",
        "step",
        "err",
        "steps",
        "switches",
        "wall (s)",
        "correlation",
        "d(switch1)",
        "steps/ref"
    );
    out.push_str(&header);
    out.push_str(&"-".repeat(header.len() - 1));
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{:<16} {:<7} {:>10} {:>8} {:>9} {:>8} {:>10.6} {:>13} {:>13} {:>10}\n",
            r.benchmark,
            r.engine,
            r.step_param,
            r.err_tol,
            r.intra_steps,
            r.switches,
            r.wall_s,
            r.correlation.map_or(String::from("undefined"), |c| format!("{c:.9}")),
            r.first_switch_delta.map_or(String::from("-"), |d| format!("{d:.3e}")),
            r.step_ratio.map_or(String::from("-"), |s| format!("{s:.4}")),
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use fasim_core::trace::{Sample, StepKind};

    #[test]
    fn trace_roundtrip_is_bit_exact() {
        let mut t = Trace::new(vec!["x".into(), "y".into()]);
        let values = [
            (0.0, [std::f64::consts::PI / 2.0, 1.0 / 3.0]),
            (9.271859338881362, [2.497893, -0.49999999999999994]),
            (14.292566037964458, [3.000053180265366, -0.99]),
        ];
        for (i, (time, vs)) in values.iter().enumerate() {
            t.push(Sample {
                time: *time,
                location: "L1".into(),
                kind: if i == 0 { StepKind::Init } else { StepKind::Intra },
                values: vs.to_vec(),
                frames: vec![],
            });
        }
        let mut buf = Vec::new();
        write_trace(&t, &mut buf).unwrap();
        let back = read_trace(std::io::BufReader::new(buf.as_slice())).unwrap();
        assert_eq!(back.variables, t.variables);
        assert_eq!(back.samples.len(), t.samples.len());
        for (a, b) in t.samples.iter().zip(back.samples.iter()) {
            assert_eq!(a.time.to_bits(), b.time.to_bits());
            for (x, y) in a.values.iter().zip(b.values.iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
            assert_eq!(a.kind, b.kind);
            assert_eq!(a.location, b.location);
        }
    }
}
