//! Hybrid automaton data model and validation.
//!
//! An automaton is a set of locations carrying per-variable flows (ODE
//! right-hand sides) and updates (algebraic definitions recomputed after every
//! step), connected by edges with guards and resets. Only switching behaviour
//! is supported: leaving a location is forced exactly when a guard boundary is
//! crossed.

use std::collections::BTreeSet;
use std::fmt;

use crate::expr::{Environment, EvalError, Expr, ExprInvalid};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Relation::Le => "<=",
            Relation::Ge => ">=",
            Relation::Eq => "==",
        })
    }
}

/// One atomic comparison `lhs ⋈ rhs` with a constant right-hand side.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub lhs: Expr,
    pub relation: Relation,
    pub rhs: f64,
}

impl Comparison {
    pub fn new(lhs: Expr, relation: Relation, rhs: f64) -> Self {
        Self { lhs, relation, rhs }
    }

    /// Signed residual `lhs - rhs`; zero exactly on the guard boundary.
    pub fn residual(&self, env: &Environment) -> Result<f64, EvalError> {
        Ok(self.lhs.evaluate(env)? - self.rhs)
    }

    /// Satisfaction check. Equality holds within `eq_tol`; inequalities are
    /// exact up to rounding noise (scaled to the bound), so a landing computed
    /// onto the boundary registers without admitting genuinely early states.
    pub fn holds(&self, env: &Environment, eq_tol: f64) -> Result<bool, EvalError> {
        let r = self.residual(env)?;
        let noise = 1e-12 * (1.0 + self.rhs.abs());
        Ok(match self.relation {
            Relation::Le => r <= noise,
            Relation::Ge => r >= -noise,
            Relation::Eq => r.abs() <= eq_tol,
        })
    }
}

/// Conjunction of comparisons. Disjunction is modelled as parallel edges.
#[derive(Debug, Clone, PartialEq)]
pub struct Predicate {
    pub comparisons: Vec<Comparison>,
}

impl Predicate {
    pub fn new(comparisons: Vec<Comparison>) -> Self {
        Self { comparisons }
    }

    pub fn single(lhs: Expr, relation: Relation, rhs: f64) -> Self {
        Self { comparisons: vec![Comparison::new(lhs, relation, rhs)] }
    }
}

/// Evaluate a predicate as the conjunction of its comparisons.
pub fn evaluate_guard(p: &Predicate, env: &Environment, eq_tol: f64) -> Result<bool, EvalError> {
    for c in &p.comparisons {
        if !c.holds(env, eq_tol)? {
            return Ok(false);
        }
    }
    Ok(true)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Location {
    pub id: String,
    /// ODE right-hand side per integrated variable.
    pub flows: Vec<(String, Expr)>,
    /// Algebraic definition per dependent variable, recomputed after each
    /// step; authoritative over any flow for the same variable.
    pub updates: Vec<(String, Expr)>,
    /// Explicit invariant. When absent the invariant is implicitly the
    /// negation of the outgoing guards (switching semantics).
    pub invariant: Option<Predicate>,
}

impl Location {
    pub fn flow(&self, var: &str) -> Option<&Expr> {
        self.flows.iter().find(|(v, _)| v == var).map(|(_, e)| e)
    }

    pub fn update(&self, var: &str) -> Option<&Expr> {
        self.updates.iter().find(|(v, _)| v == var).map(|(_, e)| e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub source: String,
    pub target: String,
    pub guard: Predicate,
    /// Reset expressions evaluated simultaneously against the pre-switch
    /// environment; variables not listed carry their value over.
    pub reset: Vec<(String, Expr)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitialCondition {
    pub location: String,
    pub env: Environment,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HybridAutomaton {
    pub variables: Vec<String>,
    pub locations: Vec<Location>,
    pub edges: Vec<Edge>,
    /// Exactly one entry is valid; extras are reported by `validate`.
    pub initial: Vec<InitialCondition>,
}

impl HybridAutomaton {
    pub fn location(&self, id: &str) -> Option<&Location> {
        self.locations.iter().find(|l| l.id == id)
    }

    pub fn location_index(&self, id: &str) -> Option<usize> {
        self.locations.iter().position(|l| l.id == id)
    }

    pub fn outgoing<'a>(
        &'a self,
        location: &'a str,
    ) -> impl Iterator<Item = (usize, &'a Edge)> + 'a {
        self.edges.iter().enumerate().filter(move |(_, e)| e.source == location)
    }

    pub fn initial_condition(&self) -> Option<&InitialCondition> {
        self.initial.first()
    }

    fn declared(&self) -> BTreeSet<String> {
        self.variables.iter().cloned().collect()
    }
}

/// Apply an edge's reset relation: all right-hand sides are evaluated against
/// the pre-switch environment, then assigned at once.
pub fn apply_reset(edge: &Edge, env: &Environment) -> Result<Environment, EvalError> {
    let mut staged = Vec::with_capacity(edge.reset.len());
    for (var, expr) in &edge.reset {
        staged.push((var.clone(), expr.evaluate(env)?));
    }
    let mut out = env.clone();
    for (var, value) in staged {
        out.set(&var, value);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Diagnostic {
    NoInitialLocation,
    MultipleInitialLocations(Vec<String>),
    UnknownLocation { context: String, id: String },
    UnboundVariable { context: String, name: String },
    InitialValueMissing { name: String },
    VariableNotGoverned { location: String, name: String },
    VariableDoublyGoverned { location: String, name: String },
    UpdateReadsNonFlowVariable { location: String, update: String, name: String },
    InvalidExpression { context: String, error: ExprInvalid },
    EmptyGuard { edge: String },
    NonFiniteBound { context: String, value: f64 },
    GuardInvariantOverlap { location: String, edge: String },
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Diagnostic::NoInitialLocation => write!(f, "no initial location declared"),
            Diagnostic::MultipleInitialLocations(ids) => {
                write!(f, "multiple initial locations declared: {}", ids.join(", "))
            }
            Diagnostic::UnknownLocation { context, id } => {
                write!(f, "{context}: unknown location `{id}`")
            }
            Diagnostic::UnboundVariable { context, name } => {
                write!(f, "{context}: unbound variable `{name}`")
            }
            Diagnostic::InitialValueMissing { name } => {
                write!(f, "initial condition does not bind variable `{name}`")
            }
            Diagnostic::VariableNotGoverned { location, name } => {
                write!(
                    f,
                    "location `{location}`: variable `{name}` has neither a flow nor an update"
                )
            }
            Diagnostic::VariableDoublyGoverned { location, name } => {
                write!(f, "location `{location}`: variable `{name}` has both a flow and an update")
            }
            Diagnostic::UpdateReadsNonFlowVariable { location, update, name } => {
                write!(
                    f,
                    "location `{location}`: update for `{update}` reads `{name}`, which is not a flow variable there"
                )
            }
            Diagnostic::InvalidExpression { context, error } => {
                write!(f, "{context}: {error}")
            }
            Diagnostic::EmptyGuard { edge } => write!(f, "edge {edge}: guard has no comparisons"),
            Diagnostic::NonFiniteBound { context, value } => {
                write!(f, "{context}: non-finite bound {value}")
            }
            Diagnostic::GuardInvariantOverlap { location, edge } => {
                write!(
                    f,
                    "location `{location}`: guard of edge {edge} overlaps the invariant (model is not switching-only)"
                )
            }
        }
    }
}

/// Structural validation. Returns an empty list iff the automaton is
/// well-formed; never panics or throws on malformed input.
pub fn validate(ha: &HybridAutomaton) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let declared = ha.declared();

    match ha.initial.len() {
        0 => out.push(Diagnostic::NoInitialLocation),
        1 => {}
        _ => out.push(Diagnostic::MultipleInitialLocations(
            ha.initial.iter().map(|i| i.location.clone()).collect(),
        )),
    }

    for init in &ha.initial {
        if ha.location(&init.location).is_none() {
            out.push(Diagnostic::UnknownLocation {
                context: "initial condition".into(),
                id: init.location.clone(),
            });
        }
        for v in &ha.variables {
            if !init.env.contains(v) {
                out.push(Diagnostic::InitialValueMissing { name: v.clone() });
            }
        }
    }

    for loc in &ha.locations {
        let flow_vars: BTreeSet<&str> = loc.flows.iter().map(|(v, _)| v.as_str()).collect();
        for v in &ha.variables {
            let in_flow = flow_vars.contains(v.as_str());
            let in_update = loc.update(v).is_some();
            match (in_flow, in_update) {
                (false, false) => out.push(Diagnostic::VariableNotGoverned {
                    location: loc.id.clone(),
                    name: v.clone(),
                }),
                (true, true) => out.push(Diagnostic::VariableDoublyGoverned {
                    location: loc.id.clone(),
                    name: v.clone(),
                }),
                _ => {}
            }
        }
        for (v, _) in loc.flows.iter().chain(loc.updates.iter()) {
            if !declared.contains(v) {
                out.push(Diagnostic::UnboundVariable {
                    context: format!("location `{}`", loc.id),
                    name: v.clone(),
                });
            }
        }
        for (v, e) in &loc.flows {
            check_expr(&mut out, format!("location `{}`, flow of `{v}`", loc.id), e, &declared);
        }
        for (v, e) in &loc.updates {
            check_expr(&mut out, format!("location `{}`, update of `{v}`", loc.id), e, &declared);
            // updates may depend on integrated variables only, so they can be
            // recomputed in one pass after each step
            for name in e.free_variables() {
                if declared.contains(&name) && !flow_vars.contains(name.as_str()) {
                    out.push(Diagnostic::UpdateReadsNonFlowVariable {
                        location: loc.id.clone(),
                        update: v.clone(),
                        name,
                    });
                }
            }
        }
        if let Some(inv) = &loc.invariant {
            check_predicate(&mut out, format!("location `{}` invariant", loc.id), inv, &declared);
        }
    }

    for (idx, edge) in ha.edges.iter().enumerate() {
        let edge_name = format!("`{}` -> `{}`", edge.source, edge.target);
        for id in [&edge.source, &edge.target] {
            if ha.location(id).is_none() {
                out.push(Diagnostic::UnknownLocation {
                    context: format!("edge {edge_name}"),
                    id: id.clone(),
                });
            }
        }
        if edge.guard.comparisons.is_empty() {
            out.push(Diagnostic::EmptyGuard { edge: edge_name.clone() });
        }
        check_predicate(&mut out, format!("edge {edge_name} guard"), &edge.guard, &declared);
        for (v, e) in &edge.reset {
            if !declared.contains(v) {
                out.push(Diagnostic::UnboundVariable {
                    context: format!("edge {edge_name} reset"),
                    name: v.clone(),
                });
            }
            check_expr(&mut out, format!("edge {edge_name}, reset of `{v}`"), e, &declared);
        }
        let _ = idx;
    }

    // Switching-only point check: where an explicit invariant is given, the
    // guard's satisfying set must not intersect it. Full semantic disjointness
    // is undecidable; we probe at the initial environment and at each guard
    // boundary.
    if out.is_empty() {
        for edge in &ha.edges {
            let loc = ha.location(&edge.source).expect("validated above");
            let Some(inv) = &loc.invariant else { continue };
            let edge_name = format!("`{}` -> `{}`", edge.source, edge.target);
            let mut probes: Vec<Environment> = Vec::new();
            if let Some(init) = ha.initial_condition() {
                probes.push(init.env.clone());
            }
            for c in &edge.guard.comparisons {
                if let Expr::Var(name) = &c.lhs {
                    if let Some(base) = probes.first() {
                        let mut env = base.clone();
                        env.set(name, c.rhs);
                        probes.push(env);
                    }
                }
            }
            for env in &probes {
                let guard_on = evaluate_guard(&edge.guard, env, 0.0).unwrap_or(false);
                let inv_on = evaluate_guard(inv, env, 0.0).unwrap_or(false);
                if guard_on && inv_on {
                    out.push(Diagnostic::GuardInvariantOverlap {
                        location: loc.id.clone(),
                        edge: edge_name.clone(),
                    });
                    break;
                }
            }
        }
    }

    out
}

fn check_expr(out: &mut Vec<Diagnostic>, context: String, e: &Expr, declared: &BTreeSet<String>) {
    if let Err(error) = e.validate(declared) {
        out.push(Diagnostic::InvalidExpression { context, error });
    }
}

fn check_predicate(
    out: &mut Vec<Diagnostic>,
    context: String,
    p: &Predicate,
    declared: &BTreeSet<String>,
) {
    for c in &p.comparisons {
        check_expr(out, context.clone(), &c.lhs, declared);
        if !c.rhs.is_finite() {
            out.push(Diagnostic::NonFiniteBound { context: context.clone(), value: c.rhs });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_expr;
    use std::f64::consts::PI;

    fn steering_wheel() -> HybridAutomaton {
        let flows1 = vec![("x".to_string(), parse_expr("0.1").unwrap())];
        let flows2 = vec![("x".to_string(), parse_expr("-4").unwrap())];
        let update = vec![("y".to_string(), parse_expr("cos(x)").unwrap())];
        HybridAutomaton {
            variables: vec!["x".into(), "y".into()],
            locations: vec![
                Location {
                    id: "L1".into(),
                    flows: flows1,
                    updates: update.clone(),
                    invariant: None,
                },
                Location { id: "L2".into(), flows: flows2, updates: update, invariant: None },
            ],
            edges: vec![
                Edge {
                    source: "L1".into(),
                    target: "L2".into(),
                    guard: Predicate::single(Expr::var("y"), Relation::Le, -0.99),
                    reset: vec![],
                },
                Edge {
                    source: "L2".into(),
                    target: "L1".into(),
                    guard: Predicate::single(Expr::var("y"), Relation::Ge, 0.99),
                    reset: vec![],
                },
            ],
            initial: vec![InitialCondition {
                location: "L1".into(),
                env: Environment::from([("x", PI / 2.0), ("y", 0.0)]),
            }],
        }
    }

    #[test]
    fn steering_wheel_validates_clean() {
        assert_eq!(validate(&steering_wheel()), vec![]);
    }

    #[test]
    fn two_initial_locations_flagged() {
        let mut ha = steering_wheel();
        ha.initial.push(ha.initial[0].clone());
        let diags = validate(&ha);
        assert!(diags.iter().any(|d| matches!(d, Diagnostic::MultipleInitialLocations(_))));
    }

    #[test]
    fn undeclared_guard_variable_flagged() {
        let mut ha = steering_wheel();
        ha.edges[0].guard = Predicate::single(Expr::var("z"), Relation::Le, 0.0);
        let diags = validate(&ha);
        assert!(diags.iter().any(|d| matches!(
            d,
            Diagnostic::InvalidExpression { error: ExprInvalid::UnboundVariable(name), .. }
            if name == "z"
        )));
    }

    #[test]
    fn guard_evaluation_examples() {
        let eq_tol = 1e-6;
        let g = Predicate::single(parse_expr("cos(x)").unwrap(), Relation::Le, -0.99);
        let env = Environment::from([("x", PI)]);
        assert!(evaluate_guard(&g, &env, eq_tol).unwrap());

        let g = Predicate::single(Expr::var("temp"), Relation::Eq, 100.0);
        let env = Environment::from([("temp", 100.0 + 1e-9)]);
        assert!(evaluate_guard(&g, &env, eq_tol).unwrap());

        // y >= 12x^2 - 54x + 65 rewritten with a constant right-hand side
        let g =
            Predicate::single(parse_expr("y - (12*x^2 - 54*x + 65)").unwrap(), Relation::Ge, 0.0);
        let env = Environment::from([("x", 3.0), ("y", 10.0)]);
        assert!(!evaluate_guard(&g, &env, eq_tol).unwrap());
    }

    #[test]
    fn guard_monotone_in_lhs() {
        let g = Predicate::single(Expr::var("x"), Relation::Le, 2.0);
        for v in [-5.0, 0.0, 1.9, 2.0] {
            let env = Environment::from([("x", v)]);
            assert!(evaluate_guard(&g, &env, 0.0).unwrap());
            let env_smaller = Environment::from([("x", v - 1.0)]);
            assert!(evaluate_guard(&g, &env_smaller, 0.0).unwrap());
        }
    }

    #[test]
    fn reset_is_simultaneous() {
        let edge = Edge {
            source: "a".into(),
            target: "b".into(),
            guard: Predicate::single(Expr::var("x"), Relation::Ge, 0.0),
            reset: vec![("x".to_string(), Expr::var("y")), ("y".to_string(), Expr::var("x"))],
        };
        let env = Environment::from([("x", 1.0), ("y", 2.0)]);
        let out = apply_reset(&edge, &env).unwrap();
        // sequential assignment would give y = 2; the swap must read pre-state
        assert_eq!(out.get("x"), Some(2.0));
        assert_eq!(out.get("y"), Some(1.0));
    }

    #[test]
    fn identity_reset_preserves_env() {
        let edge = Edge {
            source: "a".into(),
            target: "b".into(),
            guard: Predicate::single(Expr::var("x"), Relation::Ge, 0.0),
            reset: vec![],
        };
        let env = Environment::from([("x", 5.0), ("y", 1.0)]);
        assert_eq!(apply_reset(&edge, &env).unwrap(), env);
    }

    #[test]
    fn partial_reset_keeps_other_variables() {
        let edge = Edge {
            source: "a".into(),
            target: "b".into(),
            guard: Predicate::single(Expr::var("x"), Relation::Ge, 0.0),
            reset: vec![("x".to_string(), Expr::constant(0.0))],
        };
        let env = Environment::from([("x", 5.0), ("y", 1.0)]);
        let out = apply_reset(&edge, &env).unwrap();
        assert_eq!(out.get("x"), Some(0.0));
        assert_eq!(out.get("y"), Some(1.0));
    }

    #[test]
    fn validate_is_idempotent() {
        let ha = steering_wheel();
        assert_eq!(validate(&ha), validate(&ha));
    }

    #[test]
    fn invariant_guard_overlap_detected() {
        let mut ha = steering_wheel();
        // declare an invariant that still holds at the guard boundary
        ha.locations[0].invariant = Some(Predicate::single(Expr::var("y"), Relation::Le, 1.0));
        let diags = validate(&ha);
        assert!(diags.iter().any(|d| matches!(d, Diagnostic::GuardInvariantOverlap { .. })));
    }
}
