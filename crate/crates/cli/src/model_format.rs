//! Line-oriented text format for hybrid automaton models.
//!
//! ```text
//! # steering wheel position controller
//! model steering-wheel
//! var x, y
//!
//! location L1
//!   flow x = 0.1
//!   update y = cos(x)
//!
//! edge L1 -> L2
//!   guard y <= -0.99
//!   reset x = x
//!
//! init L1
//!   x = pi/2
//!   y = 0
//!
//! config
//!   tmax = 50
//!   output = y
//! ```
//!
//! Sections are opened by `location`, `edge`, `init` and `config` lines and
//! run until the next section header. Guard relations are `<=`, `>=` and
//! `==`; a non-constant right-hand side is folded into the left side so the
//! bound is always a plain number. `#` starts a comment.

use fasim_core::expr::{parse_expr, Environment, Expr};
use fasim_core::model::{
    validate, Comparison, Diagnostic, Edge, HybridAutomaton, InitialCondition, Location, Predicate,
    Relation,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error("model failed validation:\n{}", .0.iter().map(|d| format!("  - {d}")).collect::<Vec<_>>().join("\n"))]
    Validation(Vec<Diagnostic>),
}

/// Simulation defaults carried by the model file; command-line flags override
/// them.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelDefaults {
    pub t_max: Option<f64>,
    /// Designated output variables for trace comparison.
    pub outputs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedModel {
    pub name: String,
    pub ha: HybridAutomaton,
    pub defaults: ModelDefaults,
}

/// Parse and validate a model document. `path` only labels error messages.
pub fn parse_model(text: &str, path: &str) -> Result<ParsedModel, ModelError> {
    let mut parser = ModelParser {
        path: path.to_string(),
        name: String::new(),
        variables: Vec::new(),
        locations: Vec::new(),
        edges: Vec::new(),
        initial: Vec::new(),
        defaults: ModelDefaults::default(),
        section: Section::Top,
    };
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        };
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        parser.line(line_no, line)?;
    }
    parser.finish()
}

enum Section {
    Top,
    Location(Location),
    Edge(Edge),
    Init(InitialCondition),
    Config,
}

struct ModelParser {
    path: String,
    name: String,
    variables: Vec<String>,
    locations: Vec<Location>,
    edges: Vec<Edge>,
    initial: Vec<InitialCondition>,
    defaults: ModelDefaults,
    section: Section,
}

impl ModelParser {
    fn err<T>(&self, line: usize, msg: impl Into<String>) -> Result<T, ModelError> {
        Err(ModelError::Parse { path: self.path.clone(), line, msg: msg.into() })
    }

    fn close_section(&mut self) {
        match std::mem::replace(&mut self.section, Section::Top) {
            Section::Top | Section::Config => {}
            Section::Location(loc) => self.locations.push(loc),
            Section::Edge(edge) => self.edges.push(edge),
            Section::Init(init) => self.initial.push(init),
        }
    }

    fn line(&mut self, n: usize, line: &str) -> Result<(), ModelError> {
        let (keyword, rest) = match line.split_once(char::is_whitespace) {
            Some((k, r)) => (k, r.trim()),
            None => (line, ""),
        };
        match keyword {
            "model" => {
                self.name = rest.to_string();
                Ok(())
            }
            "var" | "vars" => {
                for v in rest.split(',').flat_map(|p| p.split_whitespace()) {
                    self.variables.push(v.to_string());
                }
                Ok(())
            }
            "location" => {
                self.close_section();
                if rest.is_empty() {
                    return self.err(n, "location needs a name");
                }
                self.section = Section::Location(Location {
                    id: rest.to_string(),
                    flows: vec![],
                    updates: vec![],
                    invariant: None,
                });
                Ok(())
            }
            "edge" => {
                self.close_section();
                let Some((src, dst)) = rest.split_once("->") else {
                    return self.err(n, "expected `edge SOURCE -> TARGET`");
                };
                self.section = Section::Edge(Edge {
                    source: src.trim().to_string(),
                    target: dst.trim().to_string(),
                    guard: Predicate::new(vec![]),
                    reset: vec![],
                });
                Ok(())
            }
            "init" => {
                self.close_section();
                if rest.is_empty() {
                    return self.err(n, "init needs a location name");
                }
                self.section = Section::Init(InitialCondition {
                    location: rest.to_string(),
                    env: Environment::new(),
                });
                Ok(())
            }
            "config" => {
                self.close_section();
                self.section = Section::Config;
                Ok(())
            }
            "flow" | "update" => {
                let (var, expr) = self.parse_assignment(n, rest)?;
                match &mut self.section {
                    Section::Location(loc) => {
                        if keyword == "flow" {
                            loc.flows.push((var, expr));
                        } else {
                            loc.updates.push((var, expr));
                        }
                        Ok(())
                    }
                    _ => self.err(n, format!("`{keyword}` outside a location section")),
                }
            }
            "invariant" => {
                let pred = self.parse_predicate(n, rest)?;
                match &mut self.section {
                    Section::Location(loc) => {
                        loc.invariant = Some(pred);
                        Ok(())
                    }
                    _ => self.err(n, "`invariant` outside a location section"),
                }
            }
            "guard" => {
                let pred = self.parse_predicate(n, rest)?;
                match &mut self.section {
                    Section::Edge(edge) => {
                        edge.guard.comparisons.extend(pred.comparisons);
                        Ok(())
                    }
                    _ => self.err(n, "`guard` outside an edge section"),
                }
            }
            "reset" => {
                let (var, expr) = self.parse_assignment(n, rest)?;
                match &mut self.section {
                    Section::Edge(edge) => {
                        edge.reset.push((var, expr));
                        Ok(())
                    }
                    _ => self.err(n, "`reset` outside an edge section"),
                }
            }
            _ => {
                // bare `name = value` lines belong to init or config sections
                let text = line;
                match &mut self.section {
                    Section::Init(_) => {
                        let (var, expr) = self.parse_assignment(n, text)?;
                        let value = match expr.constant_value() {
                            Some(v) => v,
                            None => {
                                return self.err(n, "initial values must be constant expressions")
                            }
                        };
                        if let Section::Init(init) = &mut self.section {
                            init.env.set(&var, value);
                        }
                        Ok(())
                    }
                    Section::Config => self.config_line(n, text),
                    _ => self.err(n, format!("unknown directive `{keyword}`")),
                }
            }
        }
    }

    fn parse_assignment(&self, n: usize, text: &str) -> Result<(String, Expr), ModelError> {
        let Some((lhs, rhs)) = split_assignment(text) else {
            return self.err(n, "expected `NAME = EXPRESSION`");
        };
        let var = lhs.trim();
        if var.is_empty() || !var.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return self.err(n, format!("invalid variable name `{var}`"));
        }
        let expr = parse_expr(rhs.trim()).map_err(|e| ModelError::Parse {
            path: self.path.clone(),
            line: n,
            msg: e.to_string(),
        })?;
        Ok((var.to_string(), expr))
    }

    fn parse_predicate(&self, n: usize, text: &str) -> Result<Predicate, ModelError> {
        let mut comparisons = Vec::new();
        for part in text.split("&&") {
            comparisons.push(self.parse_comparison(n, part.trim())?);
        }
        Ok(Predicate::new(comparisons))
    }

    fn parse_comparison(&self, n: usize, text: &str) -> Result<Comparison, ModelError> {
        let (pos, rel, width) = match find_relation(text) {
            Ok(found) => found,
            Err(bad) => {
                return self
                    .err(n, format!("unsupported relation `{bad}` (use `<=`, `>=` or `==`)"))
            }
        };
        let lhs_text = text[..pos].trim();
        let rhs_text = text[pos + width..].trim();
        let lhs = parse_expr(lhs_text).map_err(|e| ModelError::Parse {
            path: self.path.clone(),
            line: n,
            msg: e.to_string(),
        })?;
        let rhs = parse_expr(rhs_text).map_err(|e| ModelError::Parse {
            path: self.path.clone(),
            line: n,
            msg: e.to_string(),
        })?;
        // keep a constant bound on the right; a variable right side folds
        // into the left so the boundary stays a plain number
        Ok(match rhs.constant_value() {
            Some(bound) => Comparison::new(lhs, rel, bound),
            None => {
                Comparison::new(Expr::binary(fasim_core::expr::BinaryOp::Sub, lhs, rhs), rel, 0.0)
            }
        })
    }

    fn config_line(&mut self, n: usize, text: &str) -> Result<(), ModelError> {
        let Some((key, value)) = split_assignment(text) else {
            return self.err(n, "expected `KEY = VALUE`");
        };
        let key = key.trim();
        let value = value.trim();
        match key {
            "tmax" => match value.parse::<f64>() {
                Ok(v) if v > 0.0 => {
                    self.defaults.t_max = Some(v);
                    Ok(())
                }
                _ => self.err(n, format!("invalid tmax `{value}`")),
            },
            "output" => {
                for v in value.split(',').flat_map(|p| p.split_whitespace()) {
                    self.defaults.outputs.push(v.to_string());
                }
                Ok(())
            }
            other => self.err(n, format!("unknown config key `{other}`")),
        }
    }

    fn finish(mut self) -> Result<ParsedModel, ModelError> {
        self.close_section();
        if self.locations.is_empty() && self.variables.is_empty() {
            return Err(ModelError::Parse { path: self.path, line: 1, msg: "empty model".into() });
        }
        let ha = HybridAutomaton {
            variables: self.variables,
            locations: self.locations,
            edges: self.edges,
            initial: self.initial,
        };
        let diags = validate(&ha);
        if !diags.is_empty() {
            return Err(ModelError::Validation(diags));
        }
        let name = if self.name.is_empty() { "model".to_string() } else { self.name };
        Ok(ParsedModel { name, ha, defaults: self.defaults })
    }
}

/// Split `NAME = ...` on a single `=` that is not part of `==`, `<=`, `>=`.
fn split_assignment(text: &str) -> Option<(&str, &str)> {
    let bytes = text.as_bytes();
    for (i, &b) in bytes.iter().enumerate() {
        if b == b'=' {
            let prev = if i > 0 { bytes[i - 1] } else { 0 };
            let next = if i + 1 < bytes.len() { bytes[i + 1] } else { 0 };
            if prev != b'<' && prev != b'>' && prev != b'=' && prev != b'!' && next != b'=' {
                return Some((&text[..i], &text[i + 1..]));
            }
        }
    }
    None
}

/// Locate the comparison relation; rejects `<`, `>`, `!=` and bare `=`.
fn find_relation(text: &str) -> Result<(usize, Relation, usize), String> {
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'<' => {
                return if i + 1 < bytes.len() && bytes[i + 1] == b'=' {
                    Ok((i, Relation::Le, 2))
                } else {
                    Err("<".into())
                };
            }
            b'>' => {
                return if i + 1 < bytes.len() && bytes[i + 1] == b'=' {
                    Ok((i, Relation::Ge, 2))
                } else {
                    Err(">".into())
                };
            }
            b'=' => {
                return if i + 1 < bytes.len() && bytes[i + 1] == b'=' {
                    Ok((i, Relation::Eq, 2))
                } else {
                    Err("=".into())
                };
            }
            b'!' => {
                return Err(if i + 1 < bytes.len() && bytes[i + 1] == b'=' {
                    "!=".into()
                } else {
                    "!".into()
                });
            }
            _ => i += 1,
        }
    }
    Err("missing relation".into())
}
