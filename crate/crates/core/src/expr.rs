//! Arithmetic/trig expression trees used for flows, update functions, guard
//! left-hand sides and reset maps.
//!
//! Expressions are immutable after construction and evaluation is pure, so a
//! validated expression can be shared freely between simulation runs.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::fmt;

/// Inverse-trig arguments may overshoot the [-1, 1] domain by rounding when
/// they come from normalized variables; anything within this tolerance is
/// clamped, anything beyond is a domain error.
pub const INVERSE_TRIG_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Sin,
    Cos,
    Arcsin,
    Arccos,
    Abs,
    Exp,
    Ln,
}

impl fmt::Display for UnaryOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            UnaryOp::Neg => "-",
            UnaryOp::Sin => "sin",
            UnaryOp::Cos => "cos",
            UnaryOp::Arcsin => "asin",
            UnaryOp::Arccos => "acos",
            UnaryOp::Abs => "abs",
            UnaryOp::Exp => "exp",
            UnaryOp::Ln => "ln",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl fmt::Display for BinaryOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
            BinaryOp::Pow => "^",
        };
        f.write_str(s)
    }
}

/// Expression tree over named real variables.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(String),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("unbound variable `{0}`")]
    UnboundVariable(String),
    #[error("division by zero")]
    DivideByZero,
    #[error("domain error: {func}({arg})")]
    DomainError { func: &'static str, arg: f64 },
    #[error("pow exponent must be a non-negative integer, got {0}")]
    BadExponent(f64),
}

/// Total map from variable name to value.
///
/// Ordered so that iteration (trace columns, CSV output) is deterministic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Environment(BTreeMap<String, f64>);

impl Environment {
    pub fn new() -> Self {
        Self(BTreeMap::new())
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.0.get(name).copied()
    }

    pub fn set(&mut self, name: &str, value: f64) {
        match self.0.get_mut(name) {
            Some(slot) => *slot = value,
            None => {
                self.0.insert(name.to_string(), value);
            }
        }
    }

    pub fn contains(&self, name: &str) -> bool {
        self.0.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.0.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl FromIterator<(String, f64)> for Environment {
    fn from_iter<T: IntoIterator<Item = (String, f64)>>(iter: T) -> Self {
        Self(iter.into_iter().collect())
    }
}

impl<const N: usize> From<[(&str, f64); N]> for Environment {
    fn from(pairs: [(&str, f64); N]) -> Self {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }
}

impl Expr {
    pub fn constant(v: f64) -> Expr {
        Expr::Const(v)
    }

    pub fn var(name: &str) -> Expr {
        Expr::Var(name.to_string())
    }

    pub fn unary(op: UnaryOp, e: Expr) -> Expr {
        Expr::Unary(op, Box::new(e))
    }

    pub fn binary(op: BinaryOp, lhs: Expr, rhs: Expr) -> Expr {
        Expr::Binary(op, Box::new(lhs), Box::new(rhs))
    }

    /// Evaluate against a total environment with IEEE double semantics.
    /// Division by zero and domain violations are reported as errors rather
    /// than propagated as NaN/inf.
    pub fn evaluate(&self, env: &Environment) -> Result<f64, EvalError> {
        match self {
            Expr::Const(v) => Ok(*v),
            Expr::Var(name) => {
                env.get(name).ok_or_else(|| EvalError::UnboundVariable(name.clone()))
            }
            Expr::Unary(op, e) => {
                let v = e.evaluate(env)?;
                match op {
                    UnaryOp::Neg => Ok(-v),
                    UnaryOp::Sin => Ok(v.sin()),
                    UnaryOp::Cos => Ok(v.cos()),
                    UnaryOp::Arcsin => Ok(clamp_inverse_trig("asin", v)?.asin()),
                    UnaryOp::Arccos => Ok(clamp_inverse_trig("acos", v)?.acos()),
                    UnaryOp::Abs => Ok(v.abs()),
                    UnaryOp::Exp => Ok(v.exp()),
                    UnaryOp::Ln => {
                        if v <= 0.0 {
                            Err(EvalError::DomainError { func: "ln", arg: v })
                        } else {
                            Ok(v.ln())
                        }
                    }
                }
            }
            Expr::Binary(op, lhs, rhs) => {
                let a = lhs.evaluate(env)?;
                let b = rhs.evaluate(env)?;
                match op {
                    BinaryOp::Add => Ok(a + b),
                    BinaryOp::Sub => Ok(a - b),
                    BinaryOp::Mul => Ok(a * b),
                    BinaryOp::Div => {
                        if b == 0.0 {
                            Err(EvalError::DivideByZero)
                        } else {
                            Ok(a / b)
                        }
                    }
                    BinaryOp::Pow => {
                        let n = integer_exponent(b).ok_or(EvalError::BadExponent(b))?;
                        Ok(a.powi(n))
                    }
                }
            }
        }
    }

    /// Exact set of variable names referenced anywhere in the tree.
    pub fn free_variables(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<String>) {
        match self {
            Expr::Const(_) => {}
            Expr::Var(name) => {
                out.insert(name.clone());
            }
            Expr::Unary(_, e) => e.collect_vars(out),
            Expr::Binary(_, lhs, rhs) => {
                lhs.collect_vars(out);
                rhs.collect_vars(out);
            }
        }
    }

    /// `Some(value)` iff the expression has no free variables and folds to a
    /// finite value. Used by the simulator to take the exact constant-slope
    /// step instead of the error-controlled one.
    pub fn constant_value(&self) -> Option<f64> {
        if !self.free_variables().is_empty() {
            return None;
        }
        self.evaluate(&Environment::new()).ok().filter(|v| v.is_finite())
    }

    pub fn is_constant(&self) -> bool {
        self.constant_value().is_some()
    }

    /// Structural validation against a declared variable set: every variable
    /// reference must resolve and every pow exponent must be a constant
    /// non-negative integer.
    pub fn validate(&self, declared: &BTreeSet<String>) -> Result<(), ExprInvalid> {
        match self {
            Expr::Const(v) => {
                if v.is_finite() {
                    Ok(())
                } else {
                    Err(ExprInvalid::NonFiniteConstant(*v))
                }
            }
            Expr::Var(name) => {
                if declared.contains(name) {
                    Ok(())
                } else {
                    Err(ExprInvalid::UnboundVariable(name.clone()))
                }
            }
            Expr::Unary(_, e) => e.validate(declared),
            Expr::Binary(op, lhs, rhs) => {
                lhs.validate(declared)?;
                rhs.validate(declared)?;
                if *op == BinaryOp::Pow {
                    let n = rhs.constant_value().and_then(integer_exponent);
                    if n.is_none() {
                        return Err(ExprInvalid::BadExponent(format!("{rhs}")));
                    }
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExprInvalid {
    #[error("unbound variable `{0}`")]
    UnboundVariable(String),
    #[error("non-finite constant {0}")]
    NonFiniteConstant(f64),
    #[error("pow exponent must be a constant non-negative integer, got `{0}`")]
    BadExponent(String),
}

fn clamp_inverse_trig(func: &'static str, v: f64) -> Result<f64, EvalError> {
    if v.abs() <= 1.0 {
        Ok(v)
    } else if v.abs() <= 1.0 + INVERSE_TRIG_CLAMP {
        Ok(v.clamp(-1.0, 1.0))
    } else {
        Err(EvalError::DomainError { func, arg: v })
    }
}

/// Exponents are restricted to non-negative integers; only small polynomial
/// powers appear in guards and this avoids branch cuts entirely.
fn integer_exponent(v: f64) -> Option<i32> {
    if v >= 0.0 && v.fract() == 0.0 && v <= i32::MAX as f64 {
        Some(v as i32)
    } else {
        None
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(v) => write!(f, "{v}"),
            Expr::Var(name) => f.write_str(name),
            Expr::Unary(UnaryOp::Neg, e) => write!(f, "(-{e})"),
            Expr::Unary(op, e) => write!(f, "{op}({e})"),
            Expr::Binary(op, lhs, rhs) => write!(f, "({lhs} {op} {rhs})"),
        }
    }
}

// ---------------------------------------------------------------------------
// Infix parser
// ---------------------------------------------------------------------------

/// Parse error with a byte offset into the input string.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{msg} at offset {offset}")]
pub struct ParseExprError {
    pub msg: String,
    pub offset: usize,
}

/// Parse conventional infix notation: `+ - * / ^`, unary minus, parentheses,
/// `sin cos asin acos abs exp ln`, decimal literals, and the constant `pi`.
pub fn parse_expr(input: &str) -> Result<Expr, ParseExprError> {
    let tokens = tokenize(input)?;
    let mut p = Parser { tokens, pos: 0 };
    let e = p.parse_binary(0)?;
    if p.pos != p.tokens.len() {
        return Err(p.error("unexpected trailing input"));
    }
    Ok(e)
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
}

fn tokenize(input: &str) -> Result<Vec<(Token, usize)>, ParseExprError> {
    let bytes = input.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        match c {
            ' ' | '\t' => i += 1,
            '+' => {
                out.push((Token::Plus, i));
                i += 1;
            }
            '-' => {
                out.push((Token::Minus, i));
                i += 1;
            }
            '*' => {
                out.push((Token::Star, i));
                i += 1;
            }
            '/' => {
                out.push((Token::Slash, i));
                i += 1;
            }
            '^' => {
                out.push((Token::Caret, i));
                i += 1;
            }
            '(' => {
                out.push((Token::LParen, i));
                i += 1;
            }
            ')' => {
                out.push((Token::RParen, i));
                i += 1;
            }
            '0'..='9' | '.' => {
                let start = i;
                while i < bytes.len() && matches!(bytes[i] as char, '0'..='9' | '.' | 'e' | 'E') {
                    // allow exponent sign directly after e/E
                    if matches!(bytes[i] as char, 'e' | 'E')
                        && i + 1 < bytes.len()
                        && matches!(bytes[i + 1] as char, '+' | '-')
                    {
                        i += 1;
                    }
                    i += 1;
                }
                let text = &input[start..i];
                let v: f64 = text.parse().map_err(|_| ParseExprError {
                    msg: format!("invalid number `{text}`"),
                    offset: start,
                })?;
                out.push((Token::Num(v), start));
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < bytes.len()
                    && ((bytes[i] as char).is_ascii_alphanumeric() || bytes[i] == b'_')
                {
                    i += 1;
                }
                out.push((Token::Ident(input[start..i].to_string()), start));
            }
            other => {
                return Err(ParseExprError {
                    msg: format!("unexpected character `{other}`"),
                    offset: i,
                })
            }
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<(Token, usize)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos).map(|(t, _)| t)
    }

    fn bump(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).map(|(t, _)| t.clone());
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn error(&self, msg: &str) -> ParseExprError {
        let offset = self
            .tokens
            .get(self.pos.min(self.tokens.len().saturating_sub(1)))
            .map(|(_, o)| *o)
            .unwrap_or(0);
        ParseExprError { msg: msg.to_string(), offset }
    }

    // Precedence climbing; `^` binds tightest and is right-associative.
    fn parse_binary(&mut self, min_prec: u8) -> Result<Expr, ParseExprError> {
        let mut lhs = self.parse_unary()?;
        loop {
            let (op, prec, right_assoc) = match self.peek() {
                Some(Token::Plus) => (BinaryOp::Add, 1, false),
                Some(Token::Minus) => (BinaryOp::Sub, 1, false),
                Some(Token::Star) => (BinaryOp::Mul, 2, false),
                Some(Token::Slash) => (BinaryOp::Div, 2, false),
                Some(Token::Caret) => (BinaryOp::Pow, 3, true),
                _ => break,
            };
            if prec < min_prec {
                break;
            }
            self.bump();
            let next_min = if right_assoc { prec } else { prec + 1 };
            let rhs = self.parse_binary(next_min)?;
            lhs = Expr::binary(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn parse_unary(&mut self) -> Result<Expr, ParseExprError> {
        match self.peek() {
            Some(Token::Minus) => {
                self.bump();
                // binds looser than `^` so that -x^2 means -(x^2)
                let e = self.parse_binary(3)?;
                Ok(Expr::unary(UnaryOp::Neg, e))
            }
            _ => self.parse_atom(),
        }
    }

    fn parse_atom(&mut self) -> Result<Expr, ParseExprError> {
        match self.bump() {
            Some(Token::Num(v)) => Ok(Expr::Const(v)),
            Some(Token::LParen) => {
                let e = self.parse_binary(0)?;
                match self.bump() {
                    Some(Token::RParen) => Ok(e),
                    _ => Err(self.error("expected `)`")),
                }
            }
            Some(Token::Ident(name)) => {
                let func = match name.as_str() {
                    "sin" => Some(UnaryOp::Sin),
                    "cos" => Some(UnaryOp::Cos),
                    "asin" | "arcsin" => Some(UnaryOp::Arcsin),
                    "acos" | "arccos" => Some(UnaryOp::Arccos),
                    "abs" => Some(UnaryOp::Abs),
                    "exp" => Some(UnaryOp::Exp),
                    "ln" | "log" => Some(UnaryOp::Ln),
                    _ => None,
                };
                if let Some(op) = func {
                    match self.bump() {
                        Some(Token::LParen) => {}
                        _ => return Err(self.error("expected `(` after function name")),
                    }
                    let arg = self.parse_binary(0)?;
                    match self.bump() {
                        Some(Token::RParen) => Ok(Expr::unary(op, arg)),
                        _ => Err(self.error("expected `)`")),
                    }
                } else if name == "pi" {
                    Ok(Expr::Const(std::f64::consts::PI))
                } else {
                    Ok(Expr::Var(name))
                }
            }
            _ => Err(self.error("expected expression")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn ev(src: &str, env: &Environment) -> f64 {
        parse_expr(src).unwrap().evaluate(env).unwrap()
    }

    #[test]
    fn evaluates_identity_case() {
        let env = Environment::from([("x", FRAC_PI_2)]);
        assert!(ev("cos(x)", &env).abs() < 1e-15);
    }

    #[test]
    fn evaluates_guard_polynomial() {
        // 12*3^2 - 54*3 + 65 = 108 - 162 + 65 = 11
        let env = Environment::from([("x", 3.0)]);
        assert_eq!(ev("12*x^2 - 54*x + 65", &env), 11.0);
    }

    #[test]
    fn evaluates_heating_slope() {
        let env = Environment::from([("temp", 30.0)]);
        assert_eq!(ev("0.075*(150 - temp)", &env), 9.0);
    }

    #[test]
    fn free_variables_exact() {
        assert!(parse_expr("5").unwrap().free_variables().is_empty());
        let fv = parse_expr("cos(x)").unwrap().free_variables();
        assert_eq!(fv.into_iter().collect::<Vec<_>>(), vec!["x".to_string()]);
        let fv = parse_expr("5*sin(a)").unwrap().free_variables();
        assert_eq!(fv.into_iter().collect::<Vec<_>>(), vec!["a".to_string()]);
    }

    #[test]
    fn constant_detection() {
        assert_eq!(parse_expr("0.1").unwrap().constant_value(), Some(0.1));
        assert_eq!(parse_expr("0.075*(150 - temp)").unwrap().constant_value(), None);
        assert_eq!(parse_expr("sin(0)").unwrap().constant_value(), Some(0.0));
    }

    #[test]
    fn unbound_variable_is_reported() {
        let e = parse_expr("x + 1").unwrap();
        assert_eq!(e.evaluate(&Environment::new()), Err(EvalError::UnboundVariable("x".into())));
        let declared: std::collections::BTreeSet<String> = ["y".to_string()].into();
        assert!(matches!(e.validate(&declared), Err(ExprInvalid::UnboundVariable(_))));
    }

    #[test]
    fn division_by_zero_is_an_error() {
        let env = Environment::from([("x", 0.0)]);
        assert_eq!(parse_expr("1/x").unwrap().evaluate(&env), Err(EvalError::DivideByZero));
    }

    #[test]
    fn inverse_trig_clamps_within_tolerance_only() {
        let env = Environment::from([("x", 1.0 + 5e-13)]);
        assert_eq!(ev("asin(x)", &env), FRAC_PI_2);
        let env = Environment::from([("x", 1.0 + 1e-9)]);
        assert!(matches!(
            parse_expr("asin(x)").unwrap().evaluate(&env),
            Err(EvalError::DomainError { .. })
        ));
    }

    #[test]
    fn pow_rejects_negative_and_fractional_exponents() {
        let declared: std::collections::BTreeSet<String> = ["x".to_string()].into();
        assert!(parse_expr("x^2").unwrap().validate(&declared).is_ok());
        assert!(matches!(
            parse_expr("x^(-1)").unwrap().validate(&declared),
            Err(ExprInvalid::BadExponent(_))
        ));
        assert!(matches!(
            parse_expr("x^0.5").unwrap().validate(&declared),
            Err(ExprInvalid::BadExponent(_))
        ));
    }

    #[test]
    fn parser_precedence_and_associativity() {
        let env = Environment::from([("x", 2.0)]);
        assert_eq!(ev("1 + 2*x", &env), 5.0);
        assert_eq!(ev("-x^2", &env), -4.0); // unary minus applies to the whole power
        assert_eq!(ev("(1+1)*x", &env), 4.0);
        assert_eq!(ev("pi/2", &Environment::new()), FRAC_PI_2);
        assert_eq!(ev("2e-2", &Environment::new()), 0.02);
    }

    #[test]
    fn evaluation_is_deterministic() {
        let e = parse_expr("sin(x) * exp(-x) + 12*x^2").unwrap();
        let env = Environment::from([("x", 0.7318529)]);
        let a = e.evaluate(&env).unwrap();
        for _ in 0..10 {
            assert_eq!(e.evaluate(&env).unwrap().to_bits(), a.to_bits());
        }
    }

    proptest::proptest! {
        // Round-trip through the clamped inverse: asin(sin(v)) = v on the
        // principal branch.
        #[test]
        fn arcsin_sin_roundtrip(v in -FRAC_PI_2..FRAC_PI_2) {
            let e = parse_expr("asin(sin(x))").unwrap();
            let env = Environment::from([("x", v)]);
            let got = e.evaluate(&env).unwrap();
            proptest::prop_assert!((got - v).abs() <= 1e-12);
        }

        // Evaluation is insensitive to variables outside the free set.
        #[test]
        fn non_free_variables_do_not_matter(x in -10.0f64..10.0, junk in -1e6f64..1e6) {
            let e = parse_expr("12*x^2 - 54*x + 65").unwrap();
            let base = Environment::from([("x", x), ("unused", 0.0)]);
            let perturbed = Environment::from([("x", x), ("unused", junk)]);
            proptest::prop_assert_eq!(
                e.evaluate(&base).unwrap().to_bits(),
                e.evaluate(&perturbed).unwrap().to_bits()
            );
        }

        #[test]
        fn pi_halves_roundtrip(k in 0u32..100) {
            // guard angles land on multiples of pi/2; sin/cos stay exact enough
            let theta = k as f64 * PI / 2.0;
            proptest::prop_assert!((theta.sin().asin().sin() - theta.sin()).abs() < 1e-15);
        }
    }
}
