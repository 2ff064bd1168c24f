//! Static analysis that turns a hybrid automaton into a frequency automaton:
//! per-location normalization parameters and per-edge guard target angles on
//! the unit circle.
//!
//! A flow variable `x` with entry value `x0` and range `R` in a location is
//! projected as `x = x0 + R * sin(theta)`, so a guard boundary on `x` becomes
//! one or two target angles. Entry values generally depend on the run (resets
//! decide them), so this module computes the static scheme and exposes
//! [`location_frame`] / [`variable_normalization`] for the simulator to
//! instantiate on every location entry.

use std::f64::consts::PI;

use crate::expr::{Environment, EvalError, Expr, UnaryOp};
use crate::model::{validate, Comparison, Diagnostic, HybridAutomaton, Relation};

pub const TAU: f64 = 2.0 * PI;

/// How a guard comparison reads its governing flow variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GuardShape {
    /// lhs is the variable itself; the boundary is the comparison bound.
    Identity,
    /// lhs is `sin(var)`; boundary solved through arcsin.
    Sin,
    /// lhs is `cos(var)`; boundary solved through arccos.
    Cos,
}

/// Per-comparison classification done once at translation time.
#[derive(Debug, Clone, PartialEq)]
pub enum GuardSpec {
    /// The comparison pins a single flow variable to a statically solvable
    /// boundary value.
    Invertible { variable: String, shape: GuardShape, bound: f64, relation: Relation },
    /// Multi-variable or non-invertible comparison; the simulator tracks the
    /// signed residual and bisects on sign change instead.
    Residual,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("comparison is not statically invertible")]
pub struct NotStaticallyInvertible;

/// Frequency automaton: the source automaton plus one [`GuardSpec`] per guard
/// comparison. Locations, edges, variables, initial condition and resets are
/// carried over unchanged; angles and normalized values are reset to zero on
/// every location entry by the simulator.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyAutomaton {
    pub ha: HybridAutomaton,
    /// Outer index parallel to `ha.edges`, inner to guard comparisons.
    pub edge_guards: Vec<Vec<GuardSpec>>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TranslateError {
    #[error("model failed validation: {}", .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Diagnostic>),
}

/// Translate a validated hybrid automaton. Non-invertible guards are marked
/// residual-tracked, never rejected.
pub fn convert_to_fa(ha: HybridAutomaton) -> Result<FrequencyAutomaton, TranslateError> {
    let diags = validate(&ha);
    if !diags.is_empty() {
        return Err(TranslateError::Invalid(diags));
    }
    let mut edge_guards = Vec::with_capacity(ha.edges.len());
    for edge in &ha.edges {
        let loc = ha.location(&edge.source).expect("validated");
        let specs = edge.guard.comparisons.iter().map(|c| classify_comparison(c, loc)).collect();
        edge_guards.push(specs);
    }
    Ok(FrequencyAutomaton { ha, edge_guards })
}

fn classify_comparison(c: &Comparison, loc: &crate::model::Location) -> GuardSpec {
    match shape_of(&c.lhs, loc) {
        // sin/cos boundaries outside [-1, 1] have no solution angle
        Some((_, shape)) if shape != GuardShape::Identity && c.rhs.abs() > 1.0 => {
            GuardSpec::Residual
        }
        Some((variable, shape)) => {
            GuardSpec::Invertible { variable, shape, bound: c.rhs, relation: c.relation }
        }
        None => GuardSpec::Residual,
    }
}

/// Recognize `v`, `sin(v)`, `cos(v)` over a flow variable, looking through a
/// single level of update definition (a guard on `y` with `y = cos(x)` is a
/// cosine guard on `x`).
fn shape_of(lhs: &Expr, loc: &crate::model::Location) -> Option<(String, GuardShape)> {
    match lhs {
        Expr::Var(v) => {
            if loc.flow(v).is_some() {
                return Some((v.clone(), GuardShape::Identity));
            }
            if let Some(update) = loc.update(v) {
                return shape_of_direct(update, loc);
            }
            None
        }
        other => shape_of_direct(other, loc),
    }
}

fn shape_of_direct(e: &Expr, loc: &crate::model::Location) -> Option<(String, GuardShape)> {
    match e {
        Expr::Var(v) if loc.flow(v).is_some() => Some((v.clone(), GuardShape::Identity)),
        Expr::Unary(UnaryOp::Sin, inner) => match inner.as_ref() {
            Expr::Var(v) if loc.flow(v).is_some() => Some((v.clone(), GuardShape::Sin)),
            _ => None,
        },
        Expr::Unary(UnaryOp::Cos, inner) => match inner.as_ref() {
            Expr::Var(v) if loc.flow(v).is_some() => Some((v.clone(), GuardShape::Cos)),
            _ => None,
        },
        _ => None,
    }
}

/// Boundary value of the governing flow variable for one comparison.
///
/// Identity comparisons return the bound itself. For `sin`/`cos` wrappers the
/// principal inverse is shifted by `2*pi*k` into the interval the variable
/// reaches first from `entry` under the given flow direction, which selects
/// the first crossing among the periodic solutions.
pub fn guard_boundary_value(
    spec: &GuardSpec,
    entry: f64,
    flow_sign: f64,
) -> Result<f64, NotStaticallyInvertible> {
    match spec {
        GuardSpec::Residual => Err(NotStaticallyInvertible),
        GuardSpec::Invertible { shape: GuardShape::Identity, bound, .. } => Ok(*bound),
        GuardSpec::Invertible { shape, bound, .. } => {
            let q = bound.clamp(-1.0, 1.0);
            let base: [f64; 2] = match shape {
                GuardShape::Cos => {
                    let p = q.acos();
                    [p, -p]
                }
                GuardShape::Sin => {
                    let p = q.asin();
                    [p, PI - p]
                }
                GuardShape::Identity => unreachable!(),
            };
            const EPS: f64 = 1e-12;
            let solution = if flow_sign >= 0.0 {
                // first solution strictly ahead of the entry value
                base.iter()
                    .map(|b| b + TAU * ((entry + EPS - b) / TAU).ceil())
                    .fold(f64::INFINITY, f64::min)
            } else {
                base.iter()
                    .map(|b| b + TAU * ((entry - EPS - b) / TAU).floor())
                    .fold(f64::NEG_INFINITY, f64::max)
            };
            Ok(solution)
        }
    }
}

/// Normalization parameters for one flow variable in one location entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationParams {
    pub entry_value: f64,
    pub max_range: f64,
}

/// One instantiated guard boundary: the raw target value plus its projection
/// onto the unit circle under the variable's normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct GuardTarget {
    pub edge: usize,
    pub comparison: usize,
    pub variable: String,
    pub relation: Relation,
    pub target_value: f64,
    pub normalized_target: f64,
    /// One angle when the target sits at an extremum (pi/2, 3*pi/2), two
    /// otherwise; all in [0, 2*pi).
    pub candidate_angles: Vec<f64>,
}

/// The two arcsin branches of a normalized target, mapped into [0, 2*pi);
/// collapses to a single angle at the extrema.
pub fn candidate_angles(normalized_target: f64) -> Vec<f64> {
    let a = normalized_target.clamp(-1.0, 1.0).asin();
    let t1 = a.rem_euclid(TAU);
    let t2 = (PI - a).rem_euclid(TAU);
    if (t1 - t2).abs() < 1e-12 {
        vec![t1]
    } else {
        vec![t1, t2]
    }
}

/// Compute entry value and range for `var` in the location entered with
/// `entry_env`.
///
/// The range is the largest of: the entry magnitude, each reachable guard
/// boundary magnitude, and each |boundary - entry| (the last term keeps every
/// normalized target inside [-1, 1]). A variable no guard mentions gets
/// `max(|entry|, 1)`, and a range of zero falls back to 1 so a variable pinned
/// at the origin still has a scale.
pub fn variable_normalization(
    fa: &FrequencyAutomaton,
    location: usize,
    var: &str,
    entry_env: &Environment,
) -> Result<(NormalizationParams, Vec<GuardTarget>), EvalError> {
    let loc = &fa.ha.locations[location];
    let entry_value =
        entry_env.get(var).ok_or_else(|| EvalError::UnboundVariable(var.to_string()))?;
    let flow_sign = match loc.flow(var) {
        Some(expr) => expr.evaluate(entry_env)?,
        None => 0.0,
    };

    // first pass: resolve raw boundary values for guards on this variable
    let mut raw: Vec<(usize, usize, Relation, f64)> = Vec::new();
    for (edge_idx, edge) in fa.ha.edges.iter().enumerate() {
        if edge.source != loc.id {
            continue;
        }
        for (ci, spec) in fa.edge_guards[edge_idx].iter().enumerate() {
            if let GuardSpec::Invertible { variable, relation, .. } = spec {
                if variable == var {
                    if let Ok(t) = guard_boundary_value(spec, entry_value, flow_sign) {
                        raw.push((edge_idx, ci, *relation, t));
                    }
                }
            }
        }
    }

    let mut max_range = entry_value.abs();
    for (_, _, _, t) in &raw {
        max_range = max_range.max(t.abs()).max((t - entry_value).abs());
    }
    if raw.is_empty() {
        max_range = max_range.max(1.0);
    }
    if max_range <= 0.0 {
        max_range = 1.0;
    }

    let targets = raw
        .into_iter()
        .map(|(edge, comparison, relation, target_value)| {
            let normalized_target = (target_value - entry_value) / max_range;
            GuardTarget {
                edge,
                comparison,
                variable: var.to_string(),
                relation,
                target_value,
                normalized_target,
                candidate_angles: candidate_angles(normalized_target),
            }
        })
        .collect();

    Ok((NormalizationParams { entry_value, max_range }, targets))
}

/// Instantiated normalization for every flow variable of a location plus all
/// invertible guard targets, as of a concrete entry environment.
#[derive(Debug, Clone, PartialEq)]
pub struct LocationFrame {
    pub location: usize,
    pub params: Vec<(String, NormalizationParams)>,
    pub targets: Vec<GuardTarget>,
}

pub fn location_frame(
    fa: &FrequencyAutomaton,
    location: usize,
    entry_env: &Environment,
) -> Result<LocationFrame, EvalError> {
    let loc = &fa.ha.locations[location];
    let mut params = Vec::with_capacity(loc.flows.len());
    let mut targets = Vec::new();
    for (var, _) in &loc.flows {
        let (p, mut t) = variable_normalization(fa, location, var, entry_env)?;
        params.push((var.clone(), p));
        targets.append(&mut t);
    }
    Ok(LocationFrame { location, params, targets })
}
