//! Frequency-automaton execution engine.
//!
//! The main loop records the state, switches location whenever an outgoing
//! guard is enabled (without advancing the clock), and otherwise takes an
//! intra-location step whose size is the minimum over all outgoing guards'
//! convergence steps and all variables' angular caps. Each flow variable moves
//! on the unit circle with angular velocity `d(theta)/dt = xn_dot / cos(theta)`
//! and is reconstructed through `x = entry + range * sin(theta)`, so a step
//! aimed at a guard's target angle lands exactly on the level crossing.

use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::expr::{Environment, EvalError};
use crate::model::{apply_reset, evaluate_guard, Relation};
use crate::trace::{FrameSnapshot, RunReport, Sample, StepKind, SwitchEvent, Trace};
use crate::translate::{variable_normalization, FrequencyAutomaton, GuardTarget, TAU};

use std::f64::consts::{FRAC_PI_2, PI};

/// Below this |cos(theta)| the angular-velocity relation is singular.
const COS_SINGULAR: f64 = 1e-9;
/// A variable this close to a pole gets a fresh normalization frame before
/// the next step (the pole is the edge of what the frame can represent).
/// 0.02 rad from the pole leaves a normalized-value margin of 2e-4, twice the
/// aim margin below, so aimed landings fall inside the band even with their
/// integration error.
const COS_REFRESH: f64 = 2e-2;
/// Steps aim no closer to a pole than this angular distance (normalized-value
/// margin 1e-4). Landing on the pole itself would let the value clamp absorb
/// time error invisibly (both halves of the error estimate clamp to the same
/// extremum); stopping inside the refresh band re-anchors the frame and the
/// remaining approach happens against an interior target.
const POLE_STOP: f64 = 1.414e-2;

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    /// Simulation horizon in seconds.
    pub t_max: f64,
    /// Upper bound on the per-step angular advance of any variable (radians).
    pub max_angle: f64,
    /// Error bound for the step-halving loop (normalized units).
    pub error_bound: f64,
    /// Tolerance for equality guards and boundary enablement.
    pub eq_tol: f64,
    /// Seed for the choice among simultaneously enabled edges.
    pub rng_seed: u64,
    /// Safety cap on total steps (intra + switch).
    pub max_steps: u64,
    /// Smallest admissible time step; anything below reports StepUnderflow.
    pub min_dt: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            t_max: 10.0,
            max_angle: PI / 10.0,
            error_bound: 1e-6,
            eq_tol: 1e-6,
            rng_seed: 0,
            max_steps: 10_000_000,
            min_dt: 1e-12,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let ok = self.t_max > 0.0
            && self.max_angle > 0.0
            && self.max_angle < PI
            && self.error_bound > 0.0
            && self.eq_tol >= 0.0
            && self.min_dt > 0.0;
        if ok {
            Ok(())
        } else {
            Err(SimError::BadConfig)
        }
    }
}

/// Angular frame of one flow variable: the anchor of the reconstruction
/// identity `value = entry + range * sin(theta)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarFrame {
    pub entry: f64,
    pub range: f64,
    /// Current angle in [0, 2*pi).
    pub theta: f64,
    /// sin(theta), the normalized value.
    pub normalized: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub time: f64,
    /// Index into `fa.ha.locations`.
    pub location: usize,
    pub env: Environment,
    /// One frame per flow variable of the current location, in flow order.
    pub frames: Vec<(String, VarFrame)>,
    /// Instantiated guard targets for the current frames.
    pub targets: Vec<GuardTarget>,
}

impl SimState {
    pub fn frame(&self, var: &str) -> Option<&VarFrame> {
        self.frames.iter().find(|(v, _)| v == var).map(|(_, f)| f)
    }

    fn frame_mut(&mut self, var: &str) -> Option<&mut VarFrame> {
        self.frames.iter_mut().find(|(v, _)| v == var).map(|(_, f)| f)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("invalid simulation configuration")]
    BadConfig,
    #[error("automaton has no initial condition")]
    NoInitialCondition,
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(
        "step size underflow at t = {time} in `{location}` (computed dt = {dt:e}; state {env:?})"
    )]
    StepUnderflow { time: f64, location: String, dt: f64, env: Environment },
    #[error("cos(theta) singular for `{variable}` at theta = {theta}")]
    CosineSingularity { variable: String, theta: f64 },
    #[error("invariant of `{location}` violated at t = {time}")]
    InvariantViolated { location: String, time: f64 },
    #[error("step precondition violated: {0}")]
    Precondition(&'static str),
}

/// Outcome of a per-guard step-size computation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaResult {
    pub dt: f64,
    /// Signed angular advance chosen for the guard's variable.
    pub dtheta: f64,
    /// True when the step lands on the target angle rather than being capped.
    pub targeted: bool,
}

/// Edges enabled in `state`, in declaration order.
pub fn enabled_edges(
    fa: &FrequencyAutomaton,
    state: &SimState,
    eq_tol: f64,
) -> Result<Vec<usize>, EvalError> {
    let loc_id = &fa.ha.locations[state.location].id;
    let mut out = Vec::new();
    for (idx, edge) in fa.ha.outgoing(loc_id) {
        if evaluate_guard(&edge.guard, &state.env, eq_tol)? {
            out.push(idx);
        }
    }
    Ok(out)
}

/// First enabled edge; simultaneously enabled edges are resolved by a seeded
/// random draw so runs stay reproducible.
pub fn guard_enabled<R: Rng>(
    fa: &FrequencyAutomaton,
    state: &SimState,
    eq_tol: f64,
    rng: &mut R,
) -> Result<Option<usize>, EvalError> {
    let enabled = enabled_edges(fa, state, eq_tol)?;
    Ok(match enabled.len() {
        0 => None,
        1 => Some(enabled[0]),
        n => Some(enabled[rng.gen_range(0..n)]),
    })
}

struct Engine<'a> {
    fa: &'a FrequencyAutomaton,
    cfg: &'a SimConfig,
    /// Constant-folded flow slopes per location, parallel to each location's
    /// flow list; `Some` enables the exact constant-slope step.
    const_slopes: Vec<Vec<Option<f64>>>,
}

impl<'a> Engine<'a> {
    fn new(fa: &'a FrequencyAutomaton, cfg: &'a SimConfig) -> Self {
        let const_slopes = fa
            .ha
            .locations
            .iter()
            .map(|loc| loc.flows.iter().map(|(_, e)| e.constant_value()).collect())
            .collect();
        Self { fa, cfg, const_slopes }
    }

    fn slope(&self, location: usize, flow_idx: usize) -> Option<f64> {
        self.const_slopes[location][flow_idx]
    }

    /// Enter a location: recompute updates from the (post-reset) environment
    /// and instantiate fresh frames with theta = 0, normalized = 0.
    fn enter_location(
        &self,
        location: usize,
        mut env: Environment,
        time: f64,
    ) -> Result<SimState, SimError> {
        let loc = &self.fa.ha.locations[location];
        for (var, expr) in &loc.updates {
            let v = expr.evaluate(&env)?;
            env.set(var, v);
        }
        let mut frames = Vec::with_capacity(loc.flows.len());
        let mut targets = Vec::new();
        for (var, _) in &loc.flows {
            let (params, mut t) = variable_normalization(self.fa, location, var, &env)?;
            frames.push((
                var.clone(),
                VarFrame {
                    entry: params.entry_value,
                    range: params.max_range,
                    theta: 0.0,
                    normalized: 0.0,
                },
            ));
            targets.append(&mut t);
        }
        Ok(SimState { time, location, env, frames, targets })
    }

    /// Re-anchor one variable's frame at its current value. Used when a
    /// variable reaches the pole of its frame (sin(theta) extremal): the old
    /// frame cannot represent values beyond `entry + range`, so a new frame is
    /// opened there. The reconstruction identity keeps holding, now against
    /// the refreshed anchor.
    fn refresh_frame(&self, state: &mut SimState, var: &str) -> Result<(), SimError> {
        let (params, new_targets) =
            variable_normalization(self.fa, state.location, var, &state.env)?;
        if let Some(frame) = state.frame_mut(var) {
            *frame = VarFrame {
                entry: params.entry_value,
                range: params.max_range,
                theta: 0.0,
                normalized: 0.0,
            };
        }
        state.targets.retain(|t| t.variable != var);
        state.targets.extend(new_targets);
        Ok(())
    }

    fn refresh_saturated(&self, state: &mut SimState) -> Result<Vec<String>, SimError> {
        let saturated: Vec<String> = state
            .frames
            .iter()
            .filter(|(_, f)| f.theta.cos().abs() < COS_REFRESH)
            .map(|(v, _)| v.clone())
            .collect();
        for var in &saturated {
            self.refresh_frame(state, var)?;
        }
        Ok(saturated)
    }

    /// Advance every flow variable by `dt` and recompute update variables.
    /// Pure with respect to the input state.
    ///
    /// Constant-slope variables take the exact step (no integration error).
    /// State-dependent flows use the rate re-evaluated at the step midpoint:
    /// a half-step probe positions the system, and its derivatives drive the
    /// full step (midpoint rule in normalized-value space).
    fn advance_all(&self, state: &SimState, dt: f64) -> Result<SimState, SimError> {
        let loc = &self.fa.ha.locations[state.location];
        let mut next = state.clone();
        next.time = state.time + dt;

        // simultaneous derivatives at the step start
        let mut rates = Vec::with_capacity(loc.flows.len());
        for (_, expr) in &loc.flows {
            rates.push(expr.evaluate(&state.env)?);
        }

        let any_nonconst = (0..loc.flows.len()).any(|i| self.slope(state.location, i).is_none());

        // midpoint probe, only when some flow is state-dependent. Flows read
        // flow variables only, so the probe env needs no update recomputation.
        let mid_rates = if any_nonconst {
            let mut mid_env = state.env.clone();
            for (idx, (var, _)) in loc.flows.iter().enumerate() {
                if rates[idx] == 0.0 {
                    continue;
                }
                let frame = state.frame(var).expect("frame exists");
                let half = advance_value(frame, rates[idx] / frame.range, dt / 2.0);
                mid_env.set(var, half.entry + half.range * half.normalized);
            }
            let mut r = Vec::with_capacity(loc.flows.len());
            for (_, expr) in &loc.flows {
                r.push(expr.evaluate(&mid_env)?);
            }
            r
        } else {
            rates.clone()
        };

        for (idx, (var, _)) in loc.flows.iter().enumerate() {
            let rate =
                if self.slope(state.location, idx).is_some() { rates[idx] } else { mid_rates[idx] };
            if rate == 0.0 && rates[idx] == 0.0 {
                continue;
            }
            let frame = *state.frame(var).expect("frame exists for flow variable");
            let new_frame = advance_value(&frame, rate / frame.range, dt);
            let value = new_frame.entry + new_frame.range * new_frame.normalized;
            next.env.set(var, value);
            *next.frame_mut(var).unwrap() = new_frame;
        }

        for (var, expr) in &loc.updates {
            let v = expr.evaluate(&next.env)?;
            next.env.set(var, v);
        }
        Ok(next)
    }

    /// Step-size error control: shrink `dt` until the estimated integration
    /// error of the step, measured on the normalized values of `vars` (all
    /// flow variables when empty), is within the error bound per unit of
    /// simulated time.
    ///
    /// Two indicators are combined. The discrepancy between one full step and
    /// two half steps is the primary one, but far outside the asymptotic
    /// regime the two resolutions can agree while both are wrong, so the
    /// rate-curvature term |r0 - 2*r_mid + r_end| * dt / 6 (the gap between
    /// the midpoint step and a Simpson-weighted one) guards against that
    /// cancellation. A trial in which some variable hit the clamp at its
    /// frame edge is rejected outright for the same reason: both halves
    /// saturate at the same extremum and the discrepancy reads zero exactly
    /// when the step is least trustworthy.
    ///
    /// Both indicators scale like dt^3, so the first estimate gives a direct
    /// jump to the admissible size; the loop then verifies.
    fn shrink_until_accurate(
        &self,
        state: &SimState,
        mut dt: f64,
        vars: &[&str],
    ) -> Result<f64, SimError> {
        let loc = &self.fa.ha.locations[state.location];
        let rates = |s: &SimState| -> Result<Vec<f64>, SimError> {
            loc.flows.iter().map(|(_, e)| Ok(e.evaluate(&s.env)?)).collect()
        };
        let r_start = rates(state)?;
        loop {
            if dt <= self.cfg.min_dt {
                return Ok(dt);
            }
            let full = self.advance_all(state, dt)?;
            let half = self.advance_all(state, dt / 2.0)?;
            let resumed = self.advance_all(&half, dt / 2.0)?;
            let r_half = rates(&half)?;
            let r_full = rates(&full)?;
            let mut err: f64 = 0.0;
            let mut clamped = false;
            for (idx, (var, _)) in loc.flows.iter().enumerate() {
                let start = state.frames[idx].1;
                let a = full.frames[idx].1;
                let b = resumed.frames[idx].1;
                if start.normalized.abs() < 1.0
                    && (a.normalized.abs() >= 1.0 || b.normalized.abs() >= 1.0)
                {
                    clamped = true;
                }
                if vars.is_empty() || vars.contains(&var.as_str()) {
                    let doubling = (a.normalized - b.normalized).abs();
                    let curvature = (r_start[idx] - 2.0 * r_half[idx] + r_full[idx]).abs() * dt
                        / (6.0 * start.range);
                    err = err.max(doubling).max(curvature);
                }
            }
            let bound = self.cfg.error_bound * dt;
            if !clamped && err <= bound {
                return Ok(dt);
            }
            if clamped || err == 0.0 {
                dt = (dt / 2.0).max(self.cfg.min_dt);
                continue;
            }
            // err ~ C * dt^3 and bound ~ eps * dt: solve C * t^3 = eps * t
            let jump = dt * (bound / err).sqrt();
            dt = jump.clamp(dt / 16.0, dt / 2.0).max(self.cfg.min_dt);
        }
    }

    /// Per-variable cap: time to advance the angle by `max_angle`, truncated
    /// at the nearest pole in the direction of motion.
    fn probe_delta(&self, state: &SimState, flow_idx: usize) -> Result<f64, SimError> {
        let loc = &self.fa.ha.locations[state.location];
        let (var, expr) = &loc.flows[flow_idx];
        let xdot = expr.evaluate(&state.env)?;
        if xdot == 0.0 {
            return Ok(f64::INFINITY);
        }
        let frame = state.frame(var).expect("frame exists");
        let xn_dot = xdot / frame.range;
        let cos_th = frame.theta.cos();
        if cos_th.abs() < COS_SINGULAR {
            return Err(SimError::CosineSingularity { variable: var.clone(), theta: frame.theta });
        }
        let dir = (xn_dot / cos_th).signum();
        let allowed = self.cfg.max_angle.min(approach_limit(frame.theta, dir));
        let dtheta = dir * allowed;
        // time to sweep the allowed angle at the current rate (exact for
        // constant slopes, first-order otherwise)
        let dt = ((frame.theta + dtheta).sin() - frame.theta.sin()) / xn_dot;
        if self.slope(state.location, flow_idx).is_some() {
            Ok(dt)
        } else {
            self.shrink_until_accurate(state, dt, &[var.as_str()])
        }
    }

    /// Step size that converges toward one instantiated guard target, per the
    /// four-candidate angular selection.
    fn compute_delta(
        &self,
        state: &SimState,
        target: &GuardTarget,
    ) -> Result<DeltaResult, SimError> {
        let loc = &self.fa.ha.locations[state.location];
        let flow_idx = loc
            .flows
            .iter()
            .position(|(v, _)| *v == target.variable)
            .ok_or(SimError::Precondition("guard target variable has no flow"))?;
        let (var, expr) = &loc.flows[flow_idx];
        let xdot = expr.evaluate(&state.env)?;
        if xdot == 0.0 {
            // flow cannot move this variable toward the guard; another guard
            // or the horizon bounds the step
            return Ok(DeltaResult { dt: f64::INFINITY, dtheta: 0.0, targeted: false });
        }
        let frame = state.frame(var).expect("frame exists");
        let xn_dot = xdot / frame.range;
        let cos_th = frame.theta.cos();
        if cos_th.abs() < COS_SINGULAR {
            return Err(SimError::CosineSingularity { variable: var.clone(), theta: frame.theta });
        }
        let dir = (xn_dot / cos_th).signum();

        // four candidate rotations (two target angles, both senses); the
        // direction of the angular velocity picks the sense, then the nearest
        // candidate wins. A zero rotation means the boundary is already
        // reached, which the switch branch should have consumed.
        let mut nearest = f64::INFINITY;
        for angle in &target.candidate_angles {
            let mag = if dir > 0.0 {
                (angle - frame.theta).rem_euclid(TAU)
            } else {
                (frame.theta - angle).rem_euclid(TAU)
            };
            let mag = if mag < 1e-12 { TAU } else { mag };
            nearest = nearest.min(mag);
        }

        let allowed = self.cfg.max_angle.min(approach_limit(frame.theta, dir));
        let (mag, targeted) = if nearest > allowed { (allowed, false) } else { (nearest, true) };
        let dtheta = dir * mag;

        let dt = ((frame.theta + dtheta).sin() - frame.theta.sin()) / xn_dot;
        let dt = if self.slope(state.location, flow_idx).is_some() {
            dt
        } else {
            self.shrink_until_accurate(state, dt, &[var.as_str()])?
        };
        Ok(DeltaResult { dt, dtheta, targeted })
    }

    /// Minimum admissible step: horizon, per-variable caps, and per-guard
    /// convergence steps for every not-yet-satisfied comparison, followed by
    /// a final error-control pass over all variables.
    fn compute_sft(&self, state: &SimState) -> Result<f64, SimError> {
        let loc = &self.fa.ha.locations[state.location];
        let mut s = self.cfg.t_max - state.time;

        for flow_idx in 0..loc.flows.len() {
            s = s.min(self.probe_delta(state, flow_idx)?);
        }

        for (edge_idx, edge) in self.fa.ha.outgoing(&loc.id) {
            for (ci, comp) in edge.guard.comparisons.iter().enumerate() {
                if comp.holds(&state.env, self.cfg.eq_tol)? {
                    continue;
                }
                if let Some(target) =
                    state.targets.iter().find(|t| t.edge == edge_idx && t.comparison == ci)
                {
                    let d = self.compute_delta(state, target)?;
                    s = s.min(d.dt);
                }
                // residual comparisons ride on the per-variable caps and the
                // sign-change bisection in resolve_step
            }
        }

        self.shrink_until_accurate(state, s, &[])
    }

    /// Residuals of all not-yet-satisfied outgoing guard comparisons.
    fn open_residuals(&self, state: &SimState) -> Result<Vec<(Relation, f64)>, SimError> {
        let loc_id = &self.fa.ha.locations[state.location].id;
        let mut out = Vec::new();
        for (_, edge) in self.fa.ha.outgoing(loc_id) {
            for comp in &edge.guard.comparisons {
                if !comp.holds(&state.env, self.cfg.eq_tol)? {
                    out.push((comp.relation, comp.residual(&state.env)?));
                }
            }
        }
        Ok(out)
    }

    fn residuals_after(
        &self,
        state: &SimState,
        pre: &[(Relation, f64)],
        next: &SimState,
    ) -> Result<Vec<f64>, SimError> {
        let loc_id = &self.fa.ha.locations[state.location].id;
        let mut out = Vec::with_capacity(pre.len());
        let mut i = 0;
        for (_, edge) in self.fa.ha.outgoing(loc_id) {
            for comp in &edge.guard.comparisons {
                if !comp.holds(&state.env, self.cfg.eq_tol)? {
                    out.push(comp.residual(&next.env)?);
                    i += 1;
                }
            }
        }
        debug_assert_eq!(i, pre.len());
        Ok(out)
    }

    /// Take the step, shrinking it by bisection if any guard boundary was
    /// crossed beyond the error bound mid-step. This is how residual-tracked
    /// guards converge, and it also protects targeted steps of non-constant
    /// flows from landing past the boundary.
    ///
    /// Sign checks at the step endpoints alone can miss a boundary whose
    /// satisfying window is narrower than the step (the trajectory enters and
    /// leaves between two samples). A quadratic fit through the start,
    /// midpoint and end residuals flags such an interior extremum, and the
    /// step shrinks to the fitted vertex so the crossing surfaces at an
    /// endpoint of a later, shorter step.
    fn resolve_step(&self, state: &SimState, s0: f64) -> Result<(SimState, f64), SimError> {
        let pre = self.open_residuals(state)?;
        let overshoot = |post: &[f64]| -> bool {
            pre.iter().zip(post).any(|((rel, r0), r1)| match rel {
                Relation::Ge => *r0 < 0.0 && *r1 > self.cfg.error_bound,
                Relation::Le => *r0 > 0.0 && *r1 < -self.cfg.error_bound,
                Relation::Eq => r0 * r1 < 0.0 && r1.abs() > self.cfg.error_bound,
            })
        };
        let within_window = |post: &[f64]| -> bool {
            pre.iter().zip(post).any(|((_, _), r1)| r1.abs() <= self.cfg.error_bound)
        };

        let mut s = s0;
        let mut next = self.advance_all(state, s)?;
        for _ in 0..64 {
            let post = self.residuals_after(state, &pre, &next)?;
            if overshoot(&post) {
                return self.bisect_crossing(state, &pre, s, next, &overshoot, &within_window);
            }
            match self.hidden_crossing_vertex(state, &pre, &post, s)? {
                Some(vertex) => {
                    s = vertex;
                    next = self.advance_all(state, s)?;
                }
                None => return Ok((next, s)),
            }
        }
        Ok((next, s))
    }

    /// Quadratic residual fit through (0, s/2, s); returns the vertex time of
    /// the earliest comparison whose fitted interior extremum pokes through
    /// its boundary while both endpoints sit on the unsatisfied side.
    fn hidden_crossing_vertex(
        &self,
        state: &SimState,
        pre: &[(Relation, f64)],
        post: &[f64],
        s: f64,
    ) -> Result<Option<f64>, SimError> {
        if s <= 16.0 * self.cfg.min_dt || pre.is_empty() {
            return Ok(None);
        }
        let mid_state = self.advance_all(state, s / 2.0)?;
        let mid = self.residuals_after(state, pre, &mid_state)?;
        let mut earliest: Option<f64> = None;
        for (((rel, r0), rm), r1) in pre.iter().zip(&mid).zip(post) {
            let curvature = r0 - 2.0 * rm + r1;
            if curvature == 0.0 {
                continue;
            }
            // vertex of the parabola through the three points, in [0, 1]
            let u = 0.5 + (r0 - r1) / (4.0 * curvature);
            if !(0.02..=0.98).contains(&u) {
                continue;
            }
            let r_vertex = rm - (r0 - r1) * (r0 - r1) / (8.0 * curvature);
            let suspected = match rel {
                Relation::Ge => curvature < 0.0 && *r0 < 0.0 && r_vertex > 0.0,
                Relation::Le => curvature > 0.0 && *r0 > 0.0 && r_vertex < 0.0,
                Relation::Eq => r_vertex * r0 < 0.0,
            };
            if suspected {
                let t = u * s;
                earliest = Some(earliest.map_or(t, |e: f64| e.min(t)));
            }
        }
        Ok(earliest)
    }

    fn bisect_crossing(
        &self,
        state: &SimState,
        pre: &[(Relation, f64)],
        s0: f64,
        beyond: SimState,
        overshoot: &dyn Fn(&[f64]) -> bool,
        within_window: &dyn Fn(&[f64]) -> bool,
    ) -> Result<(SimState, f64), SimError> {
        let mut lo = 0.0_f64;
        let mut hi = s0;
        let mut best = beyond;
        let mut best_dt = s0;
        for _ in 0..200 {
            if hi - lo <= self.cfg.min_dt {
                break;
            }
            let mid = 0.5 * (lo + hi);
            let cand = self.advance_all(state, mid)?;
            let post = self.residuals_after(state, pre, &cand)?;
            if overshoot(&post) {
                hi = mid;
                best = cand;
                best_dt = mid;
            } else {
                if within_window(&post) {
                    return Ok((cand, mid));
                }
                lo = mid;
            }
        }
        // bracket shrank to min_dt; accept the beyond-side state, whose
        // penetration is now below the representable step size
        Ok((best, best_dt))
    }

    /// Invariant re-check after a step. Explicit invariants are evaluated
    /// directly; for derived (switching) invariants any inequality guard
    /// penetrated beyond tolerance signals the violation.
    fn check_invariant(&self, state: &SimState) -> Result<(), SimError> {
        let loc = &self.fa.ha.locations[state.location];
        let slack = self.cfg.eq_tol.max(self.cfg.error_bound);
        if let Some(inv) = &loc.invariant {
            if !evaluate_guard(inv, &state.env, slack)? {
                return Err(SimError::InvariantViolated {
                    location: loc.id.clone(),
                    time: state.time,
                });
            }
            return Ok(());
        }
        for (_, edge) in self.fa.ha.outgoing(&loc.id) {
            for comp in &edge.guard.comparisons {
                let r = comp.residual(&state.env)?;
                let penetrated = match comp.relation {
                    Relation::Ge => r > slack,
                    Relation::Le => r < -slack,
                    Relation::Eq => false,
                };
                if penetrated {
                    return Err(SimError::InvariantViolated {
                        location: loc.id.clone(),
                        time: state.time,
                    });
                }
            }
        }
        Ok(())
    }

    fn record(&self, trace: &mut Trace, state: &SimState, kind: StepKind) {
        let values =
            self.fa.ha.variables.iter().map(|v| state.env.get(v).unwrap_or(f64::NAN)).collect();
        let frames = state
            .frames
            .iter()
            .filter_map(|(var, f)| {
                trace.var_index(var).map(|idx| FrameSnapshot {
                    var: idx,
                    entry: f.entry,
                    range: f.range,
                    theta: f.theta,
                    normalized: f.normalized,
                })
            })
            .collect();
        trace.push(Sample {
            time: state.time,
            location: self.fa.ha.locations[state.location].id.clone(),
            kind,
            values,
            frames,
        });
    }
}

/// Advance one variable by stepping its normalized value and re-deriving the
/// angle on the arcsin branch reached in the direction of motion.
///
/// This integrates the same dynamics as the angular ODE (the two are related
/// by the substitution xn = sin(theta)) but stays numerically benign near the
/// poles, where the angle parametrization has unbounded curvature. With a
/// constant rate the step is exact. The value is clamped at the frame edge;
/// a variable pinned there is re-anchored by the refresh pass.
fn advance_value(frame: &VarFrame, xn_dot: f64, dt: f64) -> VarFrame {
    let xn_new = (frame.normalized + xn_dot * dt).clamp(-1.0, 1.0);
    let cos_th = frame.theta.cos();
    // at a pole the direction degenerates; fall back to the rate sign
    let dir =
        if cos_th.abs() < COS_SINGULAR { xn_dot.signum() } else { (xn_dot / cos_th).signum() };
    let a = xn_new.asin();
    let c1 = a.rem_euclid(TAU);
    let c2 = (PI - a).rem_euclid(TAU);
    let theta = if dir > 0.0 {
        let d = ((c1 - frame.theta).rem_euclid(TAU)).min((c2 - frame.theta).rem_euclid(TAU));
        (frame.theta + d).rem_euclid(TAU)
    } else {
        let d = ((frame.theta - c1).rem_euclid(TAU)).min((frame.theta - c2).rem_euclid(TAU));
        (frame.theta - d).rem_euclid(TAU)
    };
    VarFrame { entry: frame.entry, range: frame.range, theta, normalized: theta.sin() }
}

/// Angular distance from `theta` to the nearest pole (pi/2 or 3*pi/2) in the
/// given direction of rotation.
fn dist_to_pole(theta: f64, dir: f64) -> f64 {
    let poles = [FRAC_PI_2, 3.0 * FRAC_PI_2];
    let mut dist = f64::INFINITY;
    for p in poles {
        let d = if dir >= 0.0 { (p - theta).rem_euclid(TAU) } else { (theta - p).rem_euclid(TAU) };
        // distance 0 means we sit on the pole; the next one is half a turn on
        let d = if d < 1e-15 { PI } else { d };
        dist = dist.min(d);
    }
    dist
}

/// Largest angular advance a step may take: up to the refresh band around the
/// nearest pole, or onto the pole when already inside the band.
fn approach_limit(theta: f64, dir: f64) -> f64 {
    let pole = dist_to_pole(theta, dir);
    if pole > POLE_STOP {
        pole - POLE_STOP
    } else {
        pole
    }
}

/// One intra-location transition of size `s`: every flow variable advances by
/// its angular step, update variables are recomputed, and the location
/// invariant is re-checked.
pub fn execute_intra(
    fa: &FrequencyAutomaton,
    cfg: &SimConfig,
    state: &SimState,
    s: f64,
) -> Result<SimState, SimError> {
    if s <= 0.0 {
        return Err(SimError::Precondition("intra step must be positive"));
    }
    let engine = Engine::new(fa, cfg);
    let next = engine.advance_all(state, s)?;
    engine.check_invariant(&next)?;
    Ok(next)
}

/// Step-size computation for a single instantiated guard target.
pub fn compute_delta(
    fa: &FrequencyAutomaton,
    cfg: &SimConfig,
    state: &SimState,
    target: &GuardTarget,
) -> Result<DeltaResult, SimError> {
    Engine::new(fa, cfg).compute_delta(state, target)
}

/// Build the initial simulation state (location entry at the initial
/// condition).
pub fn initial_state(fa: &FrequencyAutomaton, cfg: &SimConfig) -> Result<SimState, SimError> {
    let init = fa.ha.initial_condition().ok_or(SimError::NoInitialCondition)?;
    let loc = fa
        .ha
        .location_index(&init.location)
        .ok_or(SimError::Precondition("initial location missing"))?;
    Engine::new(fa, cfg).enter_location(loc, init.env.clone(), 0.0)
}

/// Run the frequency automaton to the horizon.
pub fn simulate(fa: &FrequencyAutomaton, cfg: &SimConfig) -> Result<(Trace, RunReport), SimError> {
    cfg.validate()?;
    let started = Instant::now();
    let engine = Engine::new(fa, cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut trace = Trace::new(fa.ha.variables.clone());
    let mut report = RunReport::default();

    let mut state = initial_state(fa, cfg)?;
    let mut kind = StepKind::Init;

    loop {
        engine.record(&mut trace, &state, kind);
        if state.time >= cfg.t_max - cfg.min_dt {
            break;
        }
        if report.intra_steps + report.switch_count >= cfg.max_steps {
            report
                .diagnostics
                .push(format!("max_steps ({}) reached at t = {}", cfg.max_steps, state.time));
            break;
        }

        if let Some(edge_idx) = guard_enabled(fa, &state, cfg.eq_tol, &mut rng)? {
            let edge = &fa.ha.edges[edge_idx];
            let pre = state.env.clone();
            let post = apply_reset(edge, &state.env)?;
            let target_loc = fa
                .ha
                .location_index(&edge.target)
                .ok_or(SimError::Precondition("edge target missing"))?;
            state = engine.enter_location(target_loc, post, state.time)?;
            trace.switches.push(SwitchEvent {
                time: state.time,
                source: edge.source.clone(),
                target: edge.target.clone(),
                pre,
                post: state.env.clone(),
            });
            report.switch_count += 1;
            kind = StepKind::Switch;
            continue; // the clock does not advance across a switch
        }

        for var in engine.refresh_saturated(&mut state)? {
            report.diagnostics.push(format!("frame refreshed for `{var}` at t = {}", state.time));
        }

        let s_ft = engine.compute_sft(&state)?;
        if !s_ft.is_finite() || s_ft < cfg.min_dt {
            return Err(SimError::StepUnderflow {
                time: state.time,
                location: fa.ha.locations[state.location].id.clone(),
                dt: s_ft,
                env: state.env.clone(),
            });
        }
        let (next, _taken) = engine.resolve_step(&state, s_ft)?;
        engine.check_invariant(&next)?;
        state = next;
        report.intra_steps += 1;
        kind = StepKind::Intra;
    }

    report.wall_time = started.elapsed().as_secs_f64();
    report.final_time = state.time;
    report.final_location = fa.ha.locations[state.location].id.clone();
    report.final_env = state.env.clone();
    Ok((trace, report))
}
