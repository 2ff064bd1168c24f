//! Time-domain reference integrator: classic fixed-step RK4 over the flows,
//! with optional bisection refinement of guard crossings. The naive variant
//! (no refinement) checks guards only at grid points and reproduces the
//! missed-crossing failure mode of coarse time-domain simulation.

use std::time::Instant;

use crate::expr::{Environment, EvalError};
use crate::model::{apply_reset, evaluate_guard, HybridAutomaton, Relation};
use crate::trace::{RunReport, Sample, StepKind, SwitchEvent, Trace};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrossingRefinement {
    /// Guards observed only at grid points; switches happen late or not at
    /// all when the satisfying window is narrower than the step.
    None,
    /// Sign-change bracketing plus bisection to `bisection_tol` before the
    /// reset is applied.
    Bisection,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefConfig {
    pub dt: f64,
    pub t_max: f64,
    pub eq_tol: f64,
    pub crossing_refinement: CrossingRefinement,
    /// Width of the time bracket at which bisection stops.
    pub bisection_tol: f64,
    pub max_steps: u64,
}

impl Default for RefConfig {
    fn default() -> Self {
        Self {
            dt: 1e-4,
            t_max: 10.0,
            eq_tol: 1e-6,
            crossing_refinement: CrossingRefinement::Bisection,
            bisection_tol: 1e-9,
            max_steps: 100_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RefError {
    #[error("dt must be positive")]
    BadConfig,
    #[error("automaton has no initial condition")]
    NoInitialCondition,
    #[error("unknown location `{0}`")]
    UnknownLocation(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// High-resolution reference run (bisection refinement as configured).
pub fn simulate_reference(
    ha: &HybridAutomaton,
    cfg: &RefConfig,
) -> Result<(Trace, RunReport), RefError> {
    run(ha, cfg)
}

/// Grid-only guard checking; a thin wrapper kept separate because tests and
/// the CLI talk about the two engines by name.
pub fn simulate_naive(
    ha: &HybridAutomaton,
    cfg: &RefConfig,
) -> Result<(Trace, RunReport), RefError> {
    let cfg = RefConfig { crossing_refinement: CrossingRefinement::None, ..cfg.clone() };
    run(ha, &cfg)
}

fn run(ha: &HybridAutomaton, cfg: &RefConfig) -> Result<(Trace, RunReport), RefError> {
    if cfg.dt.is_nan() || cfg.dt <= 0.0 || cfg.t_max.is_nan() || cfg.t_max <= 0.0 {
        return Err(RefError::BadConfig);
    }
    let started = Instant::now();
    let init = ha.initial_condition().ok_or(RefError::NoInitialCondition)?;
    let mut location = ha
        .location_index(&init.location)
        .ok_or_else(|| RefError::UnknownLocation(init.location.clone()))?;
    let mut env = init.env.clone();
    recompute_updates(ha, location, &mut env)?;
    let mut time = 0.0_f64;

    let mut trace = Trace::new(ha.variables.clone());
    let mut report = RunReport::default();
    let eps = cfg.dt * 1e-9;

    record(ha, &mut trace, time, location, &env, StepKind::Init);

    loop {
        if time >= cfg.t_max - eps {
            break;
        }
        if report.intra_steps + report.switch_count >= cfg.max_steps {
            report.diagnostics.push(format!("max_steps reached at t = {time}"));
            break;
        }

        // switches are instantaneous: resolve any enabled guard before
        // advancing the clock (this also chains across locations)
        if let Some(edge_idx) = first_enabled(ha, location, &env, cfg.eq_tol)? {
            let edge = &ha.edges[edge_idx];
            let pre = env.clone();
            let mut post = apply_reset(edge, &env)?;
            let target = ha
                .location_index(&edge.target)
                .ok_or_else(|| RefError::UnknownLocation(edge.target.clone()))?;
            recompute_updates(ha, target, &mut post)?;
            location = target;
            env = post;
            trace.switches.push(SwitchEvent {
                time,
                source: edge.source.clone(),
                target: edge.target.clone(),
                pre,
                post: env.clone(),
            });
            report.switch_count += 1;
            record(ha, &mut trace, time, location, &env, StepKind::Switch);
            continue;
        }

        let h = cfg.dt.min(cfg.t_max - time);
        let next = rk4_step(ha, location, &env, h)?;

        if cfg.crossing_refinement == CrossingRefinement::Bisection {
            if let Some((tau, env_at)) = find_crossing(ha, location, &env, &next, h, cfg)? {
                time += tau;
                env = env_at;
                report.intra_steps += 1;
                record(ha, &mut trace, time, location, &env, StepKind::Intra);
                continue;
            }
        }

        time += h;
        env = next;
        report.intra_steps += 1;
        record(ha, &mut trace, time, location, &env, StepKind::Intra);
    }

    report.wall_time = started.elapsed().as_secs_f64();
    report.final_time = time;
    report.final_location = ha.locations[location].id.clone();
    report.final_env = env;
    Ok((trace, report))
}

fn record(
    ha: &HybridAutomaton,
    trace: &mut Trace,
    time: f64,
    location: usize,
    env: &Environment,
    kind: StepKind,
) {
    let values = ha.variables.iter().map(|v| env.get(v).unwrap_or(f64::NAN)).collect();
    trace.push(Sample {
        time,
        location: ha.locations[location].id.clone(),
        kind,
        values,
        frames: vec![],
    });
}

fn first_enabled(
    ha: &HybridAutomaton,
    location: usize,
    env: &Environment,
    eq_tol: f64,
) -> Result<Option<usize>, EvalError> {
    let loc_id = &ha.locations[location].id;
    for (idx, edge) in ha.outgoing(loc_id) {
        if evaluate_guard(&edge.guard, env, eq_tol)? {
            return Ok(Some(idx));
        }
    }
    Ok(None)
}

fn recompute_updates(
    ha: &HybridAutomaton,
    location: usize,
    env: &mut Environment,
) -> Result<(), EvalError> {
    for (var, expr) in &ha.locations[location].updates {
        let v = expr.evaluate(env)?;
        env.set(var, v);
    }
    Ok(())
}

/// One classic RK4 step of the location's flow system. Flows read only flow
/// variables (validated), so stage environments need no update recomputation.
fn rk4_step(
    ha: &HybridAutomaton,
    location: usize,
    env: &Environment,
    h: f64,
) -> Result<Environment, EvalError> {
    let loc = &ha.locations[location];
    let rates = |e: &Environment| -> Result<Vec<f64>, EvalError> {
        loc.flows.iter().map(|(_, expr)| expr.evaluate(e)).collect()
    };
    let staged = |base: &Environment, k: &[f64], scale: f64| -> Environment {
        let mut e = base.clone();
        for ((var, _), ki) in loc.flows.iter().zip(k) {
            e.set(var, base.get(var).unwrap() + scale * ki);
        }
        e
    };

    let k1 = rates(env)?;
    let k2 = rates(&staged(env, &k1, h / 2.0))?;
    let k3 = rates(&staged(env, &k2, h / 2.0))?;
    let k4 = rates(&staged(env, &k3, h))?;

    let mut out = env.clone();
    for (i, (var, _)) in loc.flows.iter().enumerate() {
        let delta = h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        out.set(var, env.get(var).unwrap() + delta);
    }
    recompute_updates(ha, location, &mut out)?;
    Ok(out)
}

/// Detect a guard crossing inside the step [t, t+h] and refine it.
///
/// Two triggers per edge: the predicate becomes enabled at the endpoint
/// (bracketed boolean bisection), or an equality comparison's residual
/// changes sign mid-step (residual bisection, since the satisfying window can
/// be narrower than the step).
fn find_crossing(
    ha: &HybridAutomaton,
    location: usize,
    env: &Environment,
    next: &Environment,
    h: f64,
    cfg: &RefConfig,
) -> Result<Option<(f64, Environment)>, RefError> {
    let loc_id = &ha.locations[location].id;
    let state_at = |tau: f64| -> Result<Environment, EvalError> {
        if tau <= 0.0 {
            Ok(env.clone())
        } else {
            rk4_step(ha, location, env, tau)
        }
    };

    let mut earliest: Option<f64> = None;
    for (_, edge) in ha.outgoing(loc_id) {
        if evaluate_guard(&edge.guard, next, cfg.eq_tol)? {
            let mut lo = 0.0_f64;
            let mut hi = h;
            while hi - lo > cfg.bisection_tol {
                let mid = 0.5 * (lo + hi);
                if evaluate_guard(&edge.guard, &state_at(mid)?, cfg.eq_tol)? {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            earliest = Some(earliest.map_or(hi, |e: f64| e.min(hi)));
            continue;
        }
        for comp in &edge.guard.comparisons {
            if comp.relation != Relation::Eq {
                continue;
            }
            let r0 = comp.residual(env)?;
            let r1 = comp.residual(next)?;
            if r0 * r1 < 0.0 {
                // the trajectory jumped across the equality window
                let mut lo = 0.0_f64;
                let mut hi = h;
                let mut r_lo = r0;
                let mut tau = None;
                while hi - lo > cfg.bisection_tol {
                    let mid = 0.5 * (lo + hi);
                    let r_mid = comp.residual(&state_at(mid)?)?;
                    if r_mid.abs() <= cfg.eq_tol * 0.5 {
                        tau = Some(mid);
                        break;
                    }
                    if r_lo * r_mid <= 0.0 {
                        hi = mid;
                    } else {
                        lo = mid;
                        r_lo = r_mid;
                    }
                }
                let tau = tau.unwrap_or(hi);
                if evaluate_guard(&edge.guard, &state_at(tau)?, cfg.eq_tol)? {
                    earliest = Some(earliest.map_or(tau, |e: f64| e.min(tau)));
                }
            }
        }
    }

    match earliest {
        Some(tau) => Ok(Some((tau, state_at(tau)?))),
        None => Ok(None),
    }
}
