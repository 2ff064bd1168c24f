//! The three built-in benchmark models, embedded so the binary and the test
//! suites run without external files.

use crate::model_format::{parse_model, ModelError, ParsedModel};

pub const STEERING_WHEEL: &str = include_str!("../models/steering-wheel.ham");
pub const ROBOT: &str = include_str!("../models/robot.ham");
pub const WATER_HEATING: &str = include_str!("../models/water-heating.ham");

pub const NAMES: [&str; 3] = ["steering-wheel", "robot", "water-heating"];

pub fn builtin_text(name: &str) -> Option<&'static str> {
    match name {
        "steering-wheel" => Some(STEERING_WHEEL),
        "robot" => Some(ROBOT),
        "water-heating" => Some(WATER_HEATING),
        _ => None,
    }
}

pub fn load_builtin(name: &str) -> Result<ParsedModel, ModelError> {
    let text = builtin_text(name).unwrap_or_else(|| panic!("unknown builtin `{name}`"));
    parse_model(text, name)
}

/// Load a model by builtin name or from a file path.
pub fn load_model(spec: &str) -> Result<ParsedModel, String> {
    if builtin_text(spec).is_some() {
        return load_builtin(spec).map_err(|e| e.to_string());
    }
    let text = std::fs::read_to_string(spec).map_err(|e| format!("cannot read `{spec}`: {e}"))?;
    parse_model(&text, spec).map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use fasim_core::model::Relation;
    use fasim_core::translate::{convert_to_fa, GuardSpec};
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn steering_wheel_matches_the_published_system() {
        let m = load_builtin("steering-wheel").unwrap();
        assert_eq!(m.ha.locations.len(), 2);
        assert_eq!(m.ha.edges.len(), 2);
        let init = m.ha.initial_condition().unwrap();
        assert!((init.env.get("x").unwrap() - FRAC_PI_2).abs() < 1e-15);
        let l1 = m.ha.location("L1").unwrap();
        assert_eq!(l1.flow("x").unwrap().constant_value(), Some(0.1));
        let l2 = m.ha.location("L2").unwrap();
        assert_eq!(l2.flow("x").unwrap().constant_value(), Some(-4.0));
        assert_eq!(m.ha.edges[0].guard.comparisons[0].rhs, -0.99);
        assert_eq!(m.ha.edges[1].guard.comparisons[0].rhs, 0.99);
        // guards on the cosine output translate to invertible cosine guards
        let fa = convert_to_fa(m.ha).unwrap();
        for specs in &fa.edge_guards {
            assert!(matches!(specs[0], GuardSpec::Invertible { .. }));
        }
    }

    #[test]
    fn robot_matches_the_published_system() {
        let m = load_builtin("robot").unwrap();
        let mv = m.ha.location("MOVE").unwrap();
        assert_eq!(format!("{}", mv.flow("a").unwrap()), "0.9");
        assert_eq!(m.ha.edges[0].guard.comparisons[0].relation, Relation::Ge);
        let fa = convert_to_fa(m.ha).unwrap();
        assert_eq!(fa.edge_guards[0][0], GuardSpec::Residual);
        assert_eq!(m.defaults.outputs, vec!["x", "y"]);
    }

    #[test]
    fn water_heating_matches_the_published_system() {
        let m = load_builtin("water-heating").unwrap();
        assert_eq!(m.ha.locations.len(), 3);
        let on = m.ha.location("ON").unwrap();
        let env = fasim_core::Environment::from([("timer", 5.0), ("temp", 30.0)]);
        assert_eq!(on.flow("temp").unwrap().evaluate(&env).unwrap(), 9.0);
        assert_eq!(m.ha.edges[1].guard.comparisons[0].relation, Relation::Eq);
        assert_eq!(m.ha.edges[1].guard.comparisons[0].rhs, 100.0);
        assert_eq!(m.defaults.t_max, Some(20.0));
    }
}
