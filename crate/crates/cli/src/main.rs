use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use fasim_core::refsim::{simulate_naive, simulate_reference, RefConfig};
use fasim_core::sim::{simulate, SimConfig};
use fasim_core::trace::RunReport;
use fasim_core::translate::{convert_to_fa, location_frame, GuardSpec};

use fasim_cli::bench::{run_bench, run_compare, GRID_DT, REFERENCE_DT};
use fasim_cli::csv_io::{format_summary_table, write_summary_csv, write_trace_file};
use fasim_cli::load_model;

#[derive(Parser)]
#[command(
    name = "fasim",
    version,
    about = "Hybrid automaton simulation by angular stepping, with a time-domain reference integrator"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Engine {
    /// Angular-stepping engine with exact level-crossing convergence.
    Fa,
    /// Fixed-step RK4 with bisection-refined crossings.
    Ref,
    /// Fixed-step RK4 with grid-only guard checks.
    Naive,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one engine on a model and write the trace CSV.
    Simulate {
        /// Model file path or builtin name (steering-wheel, robot, water-heating).
        model: String,
        #[arg(long, value_enum, default_value = "fa")]
        engine: Engine,
        /// Max per-step angle in radians (fa engine).
        #[arg(long, default_value_t = std::f64::consts::PI / 10.0)]
        max_angle: f64,
        /// Error bound for step-size control (fa engine).
        #[arg(long, default_value_t = 1e-6)]
        err: f64,
        /// Fixed time step (ref/naive engines).
        #[arg(long, default_value_t = 1e-4)]
        dt: f64,
        /// Simulation horizon in seconds (defaults to the model's config).
        #[arg(long)]
        tmax: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output CSV path (defaults to `<model>-<engine>.csv` in the output dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the angular engine and the reference, write both traces and a summary.
    Compare {
        model: String,
        #[arg(long, default_value_t = std::f64::consts::PI / 10.0)]
        max_angle: f64,
        #[arg(long, default_value_t = 1e-6)]
        err: f64,
        #[arg(long, default_value_t = REFERENCE_DT)]
        dt: f64,
        #[arg(long)]
        tmax: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Resampling grid for the correlation.
        #[arg(long, default_value_t = GRID_DT)]
        grid: f64,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Run all built-in benchmarks over the standard parameter grid.
    Bench {
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Show the frequency-automaton translation of a model.
    Translate {
        model: String,
        /// Print normalization parameters and guard target angles.
        #[arg(long)]
        dump: bool,
    },
}

fn out_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os("FASIM_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn report_line(report: &RunReport) -> String {
    format!(
        "steps: {} intra + {} switches, wall {:.6} s, final t = {:.6} in `{}`",
        report.intra_steps,
        report.switch_count,
        report.wall_time,
        report.final_time,
        report.final_location
    )
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<(), String> {
    match cli.cmd {
        Cmd::Simulate { model, engine, max_angle, err, dt, tmax, seed, out } => {
            let parsed = load_model(&model)?;
            let t_max = tmax.or(parsed.defaults.t_max).unwrap_or(10.0);
            let (trace, report) = match engine {
                Engine::Fa => {
                    let fa = convert_to_fa(parsed.ha.clone()).map_err(|e| e.to_string())?;
                    let cfg = SimConfig {
                        t_max,
                        max_angle,
                        error_bound: err,
                        rng_seed: seed,
                        ..Default::default()
                    };
                    simulate(&fa, &cfg).map_err(|e| e.to_string())?
                }
                Engine::Ref => {
                    let cfg = RefConfig { dt, t_max, ..Default::default() };
                    simulate_reference(&parsed.ha, &cfg).map_err(|e| e.to_string())?
                }
                Engine::Naive => {
                    let cfg = RefConfig { dt, t_max, ..Default::default() };
                    simulate_naive(&parsed.ha, &cfg).map_err(|e| e.to_string())?
                }
            };
            let engine_name = match engine {
                Engine::Fa => "fa",
                Engine::Ref => "ref",
                Engine::Naive => "naive",
            };
            let path = out.unwrap_or_else(|| {
                out_dir(None).join(format!("{}-{engine_name}.csv", parsed.name))
            });
            write_trace_file(&trace, &path).map_err(|e| e.to_string())?;
            println!("{}", report_line(&report));
            for d in &report.diagnostics {
                println!("note: {d}");
            }
            println!("trace written to {}", path.display());
            Ok(())
        }
        Cmd::Compare { model, max_angle, err, dt, tmax, seed, grid, out_dir: dir } => {
            let parsed = load_model(&model)?;
            let t_max = tmax.or(parsed.defaults.t_max).unwrap_or(10.0);
            let sim_cfg = SimConfig {
                t_max,
                max_angle,
                error_bound: err,
                rng_seed: seed,
                ..Default::default()
            };
            let ref_cfg = RefConfig { dt, t_max, ..Default::default() };
            let outcome = run_compare(&parsed, sim_cfg, ref_cfg, grid)?;
            let dir = out_dir(dir);
            std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
            let fa_path = dir.join(format!("{}-fa.csv", parsed.name));
            let ref_path = dir.join(format!("{}-ref.csv", parsed.name));
            write_trace_file(&outcome.fa_trace, &fa_path).map_err(|e| e.to_string())?;
            write_trace_file(&outcome.ref_trace, &ref_path).map_err(|e| e.to_string())?;
            let mut summary = String::new();
            summary.push_str(&format!("fa:  {}\n", report_line(&outcome.fa_report)));
            summary.push_str(&format!("ref: {}\n", report_line(&outcome.ref_report)));
            for (var, corr) in &outcome.result.correlations {
                summary.push_str(&format!("correlation[{var}] = {corr}\n"));
            }
            summary.push_str(&format!("step ratio fa/ref = {:.6}\n", outcome.result.step_ratio));
            for (i, d) in outcome.result.switch_time_deltas.iter().enumerate() {
                summary.push_str(&format!("switch {} time delta = {d:.3e} s\n", i + 1));
            }
            print!("{summary}");
            let summary_path = dir.join(format!("{}-compare.txt", parsed.name));
            std::fs::write(&summary_path, &summary).map_err(|e| e.to_string())?;
            println!(
                "traces written to {} and {}, summary to {}",
                fa_path.display(),
                ref_path.display(),
                summary_path.display()
            );
            Ok(())
        }
        Cmd::Bench { out_dir: dir } => {
            let rows = run_bench()?;
            print!("{}", format_summary_table(&rows));
            let dir = out_dir(dir);
            std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
            let path = dir.join("bench-summary.csv");
            let file = std::fs::File::create(&path).map_err(|e| e.to_string())?;
            write_summary_csv(&rows, std::io::BufWriter::new(file)).map_err(|e| e.to_string())?;
            println!("summary written to {}", path.display());
            Ok(())
        }
        Cmd::Translate { model, dump } => {
            let parsed = load_model(&model)?;
            let fa = convert_to_fa(parsed.ha.clone()).map_err(|e| e.to_string())?;
            println!(
                "{}: {} locations, {} edges, {} variables",
                parsed.name,
                fa.ha.locations.len(),
                fa.ha.edges.len(),
                fa.ha.variables.len()
            );
            if dump {
                dump_tables(&fa)?;
            }
            Ok(())
        }
    }
}

fn dump_tables(fa: &fasim_core::FrequencyAutomaton) -> Result<(), String> {
    let init = fa.ha.initial_condition().ok_or("model has no initial condition")?;
    let init_loc = fa.ha.location_index(&init.location).ok_or("initial location missing")?;

    println!("\nnormalization at the initial entry (location `{}`):", init.location);
    let frame = location_frame(fa, init_loc, &init.env).map_err(|e| e.to_string())?;
    println!("  {:<10} {:>14} {:>14}", "variable", "entry", "range");
    for (var, p) in &frame.params {
        println!("  {:<10} {:>14.6} {:>14.6}", var, p.entry_value, p.max_range);
    }
    if frame.targets.is_empty() {
        println!("  (no statically invertible guard targets out of `{}`)", init.location);
    } else {
        println!("\nguard targets out of `{}`:", init.location);
        for t in &frame.targets {
            let edge = &fa.ha.edges[t.edge];
            let angles: Vec<String> =
                t.candidate_angles.iter().map(|a| format!("{a:.6}")).collect();
            println!(
                "  {} -> {} [{}]: var {} {} {:.6}, normalized {:.6}, angles [{}]",
                edge.source,
                edge.target,
                t.comparison,
                t.variable,
                t.relation,
                t.target_value,
                t.normalized_target,
                angles.join(", ")
            );
        }
    }

    println!("\nper-edge guard translation:");
    for (idx, edge) in fa.ha.edges.iter().enumerate() {
        for (ci, spec) in fa.edge_guards[idx].iter().enumerate() {
            let desc = match spec {
                GuardSpec::Invertible { variable, shape, bound, relation } => {
                    let shape = match shape {
                        fasim_core::translate::GuardShape::Identity => String::new(),
                        fasim_core::translate::GuardShape::Sin => "sin ".into(),
                        fasim_core::translate::GuardShape::Cos => "cos ".into(),
                    };
                    format!(
                        "invertible: {shape}{variable} {relation} {bound} (instantiated per entry)"
                    )
                }
                GuardSpec::Residual => "residual-tracked at runtime".to_string(),
            };
            println!("  {} -> {} [{ci}]: {desc}", edge.source, edge.target);
        }
    }
    Ok(())
}
