//! End-to-end engine checks against closed-form solutions: exponential
//! heating with an equality guard, a residual-tracked obstacle guard, and the
//! reconstruction identity across runs.

use std::f64::consts::FRAC_PI_2;

use fasim_core::expr::{parse_expr, Environment, Expr};
use fasim_core::model::{Edge, HybridAutomaton, InitialCondition, Location, Predicate, Relation};
use fasim_core::refsim::{simulate_naive, simulate_reference, RefConfig};
use fasim_core::sim::{simulate, SimConfig};
use fasim_core::translate::convert_to_fa;

fn water_heating() -> HybridAutomaton {
    let zero = Expr::constant(0.0);
    HybridAutomaton {
        variables: vec!["timer".into(), "temp".into()],
        locations: vec![
            Location {
                id: "S0".into(),
                flows: vec![("timer".into(), Expr::constant(1.0)), ("temp".into(), zero.clone())],
                updates: vec![],
                invariant: None,
            },
            Location {
                id: "ON".into(),
                flows: vec![
                    ("timer".into(), Expr::constant(1.0)),
                    ("temp".into(), parse_expr("0.075*(150-temp)").unwrap()),
                ],
                updates: vec![],
                invariant: None,
            },
            Location {
                id: "OFF".into(),
                flows: vec![("timer".into(), zero.clone()), ("temp".into(), zero)],
                updates: vec![],
                invariant: None,
            },
        ],
        edges: vec![
            Edge {
                source: "S0".into(),
                target: "ON".into(),
                guard: Predicate::single(Expr::var("timer"), Relation::Ge, 5.0),
                reset: vec![],
            },
            Edge {
                source: "ON".into(),
                target: "OFF".into(),
                guard: Predicate::single(Expr::var("temp"), Relation::Eq, 100.0),
                reset: vec![],
            },
        ],
        initial: vec![InitialCondition {
            location: "S0".into(),
            env: Environment::from([("timer", 0.0), ("temp", 30.0)]),
        }],
    }
}

fn robot() -> HybridAutomaton {
    let zero = Expr::constant(0.0);
    HybridAutomaton {
        variables: vec!["x".into(), "y".into(), "a".into()],
        locations: vec![
            Location {
                id: "MOVE".into(),
                flows: vec![
                    ("x".into(), parse_expr("5*sin(a)").unwrap()),
                    ("y".into(), parse_expr("5*cos(a)").unwrap()),
                    ("a".into(), parse_expr("0.9").unwrap()),
                ],
                updates: vec![],
                invariant: None,
            },
            Location {
                id: "STOP".into(),
                flows: vec![
                    ("x".into(), zero.clone()),
                    ("y".into(), zero.clone()),
                    ("a".into(), zero),
                ],
                updates: vec![],
                invariant: None,
            },
        ],
        edges: vec![Edge {
            source: "MOVE".into(),
            target: "STOP".into(),
            guard: Predicate::single(
                parse_expr("y - (12*x^2 - 54*x + 65)").unwrap(),
                Relation::Ge,
                0.0,
            ),
            reset: vec![],
        }],
        initial: vec![InitialCondition {
            location: "MOVE".into(),
            env: Environment::from([("x", 0.0), ("y", 0.0), ("a", 0.0)]),
        }],
    }
}

/// t at which the heater reaches 100 degrees: 5 + ln(2.4)/0.075.
fn heating_switch_time() -> f64 {
    5.0 + (2.4f64).ln() / 0.075
}

#[test]
fn water_heating_equality_guard_converges() {
    let fa = convert_to_fa(water_heating()).unwrap();
    let cfg = SimConfig { t_max: 20.0, ..Default::default() };
    let (trace, report) = simulate(&fa, &cfg).unwrap();

    assert_eq!(report.switch_count, 2);
    let on = &trace.switches[0];
    assert_eq!(on.target, "ON");
    assert!((on.time - 5.0).abs() <= 1e-9, "S0->ON at {}", on.time);

    let off = &trace.switches[1];
    assert_eq!(off.target, "OFF");
    let temp = off.pre.get("temp").unwrap();
    assert!((temp - 100.0).abs() <= 1e-6, "temp at switch {temp}");
    assert!(
        (off.time - heating_switch_time()).abs() <= 1e-3,
        "switch at {} vs {}",
        off.time,
        heating_switch_time()
    );
    // OFF freezes everything; the run still reaches the horizon
    assert!((report.final_time - 20.0).abs() < 1e-9);
    assert!((report.final_env.get("temp").unwrap() - temp).abs() <= 1e-6);
}

#[test]
fn water_heating_matches_reference_trajectory() {
    let fa = convert_to_fa(water_heating()).unwrap();
    let cfg = SimConfig { t_max: 20.0, ..Default::default() };
    let (fa_trace, _) = simulate(&fa, &cfg).unwrap();
    let rcfg = RefConfig { dt: 1e-4, t_max: 20.0, ..Default::default() };
    let (ref_trace, _) = simulate_reference(&water_heating(), &rcfg).unwrap();
    let c = fasim_core::metrics::correlate(&fa_trace, &ref_trace, "temp", 0.01)
        .unwrap()
        .value()
        .unwrap();
    assert!(c >= 0.999, "correlation {c}");
    let dt_switch = fa_trace.switches[1].time - ref_trace.switches[1].time;
    assert!(dt_switch.abs() <= 1e-3, "switch delta {dt_switch}");
}

#[test]
fn naive_grid_never_fires_the_equality_guard() {
    for dt in [0.1, 0.01] {
        let rcfg = RefConfig { dt, t_max: 20.0, ..Default::default() };
        let (trace, report) = simulate_naive(&water_heating(), &rcfg).unwrap();
        // the S0 -> ON timer guard does fire on the grid, the == one cannot
        assert_eq!(trace.switches.len(), 1, "dt = {dt}");
        assert_eq!(report.final_location, "ON");
        assert!(report.final_env.get("temp").unwrap() > &100.0 + 1.0);
    }
}

#[test]
fn robot_stops_on_the_obstacle_boundary() {
    let fa = convert_to_fa(robot()).unwrap();
    let cfg = SimConfig { t_max: 7.0, ..Default::default() };
    let (trace, report) = simulate(&fa, &cfg).unwrap();

    assert_eq!(report.switch_count, 1);
    let hit = &trace.switches[0];
    let (x, y) = (hit.pre.get("x").unwrap(), hit.pre.get("y").unwrap());
    let residual = y - (12.0 * x * x - 54.0 * x + 65.0);
    assert!(residual.abs() <= 1e-3, "boundary residual {residual}");

    // no recorded sample before the hit satisfies the guard
    let xi = trace.var_index("x").unwrap();
    let yi = trace.var_index("y").unwrap();
    for s in trace.samples.iter().filter(|s| s.time < hit.time) {
        let r = s.values[yi] - (12.0 * s.values[xi] * s.values[xi] - 54.0 * s.values[xi] + 65.0);
        assert!(r < 0.0, "penetration at t = {} (r = {r})", s.time);
    }

    // cross-check the hit time against the refined reference
    let rcfg = RefConfig { dt: 1e-4, t_max: 7.0, ..Default::default() };
    let (ref_trace, _) = simulate_reference(&robot(), &rcfg).unwrap();
    let delta = hit.time - ref_trace.switches[0].time;
    assert!(delta.abs() <= 1e-3, "hit-time delta {delta}");

    // closed form: x = (5/0.9)(1 - cos(0.9 t)), y = (5/0.9) sin(0.9 t)
    let t = hit.time;
    let xe = 5.0 / 0.9 * (1.0 - (0.9 * t).cos());
    let ye = 5.0 / 0.9 * (0.9 * t).sin();
    assert!((x - xe).abs() <= 2e-3, "x {x} vs {xe}");
    assert!((y - ye).abs() <= 2e-3, "y {y} vs {ye}");
}

#[test]
fn reconstruction_identity_on_benchmark_runs() {
    for (ha, t_max) in [(water_heating(), 20.0), (robot(), 7.0)] {
        let fa = convert_to_fa(ha).unwrap();
        let cfg = SimConfig { t_max, ..Default::default() };
        let (trace, _) = simulate(&fa, &cfg).unwrap();
        for sample in &trace.samples {
            for f in &sample.frames {
                let value = sample.values[f.var];
                let reconstructed = f.entry + f.range * f.theta.sin();
                assert!(
                    (value - reconstructed).abs() <= 1e-9,
                    "identity broken at t = {}: {value} vs {reconstructed}",
                    sample.time
                );
                assert!((f.normalized - f.theta.sin()).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn update_variables_follow_their_definition() {
    // y = cos(x) is recomputed after every step and at entries
    let ha = HybridAutomaton {
        variables: vec!["x".into(), "y".into()],
        locations: vec![
            Location {
                id: "L1".into(),
                flows: vec![("x".into(), parse_expr("0.1").unwrap())],
                updates: vec![("y".into(), parse_expr("cos(x)").unwrap())],
                invariant: None,
            },
            Location {
                id: "L2".into(),
                flows: vec![("x".into(), parse_expr("-4").unwrap())],
                updates: vec![("y".into(), parse_expr("cos(x)").unwrap())],
                invariant: None,
            },
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
            env: Environment::from([("x", FRAC_PI_2), ("y", 0.0)]),
        }],
    };
    let fa = convert_to_fa(ha).unwrap();
    let cfg = SimConfig { t_max: 50.0, ..Default::default() };
    let (trace, _) = simulate(&fa, &cfg).unwrap();
    let xi = trace.var_index("x").unwrap();
    let yi = trace.var_index("y").unwrap();
    for s in &trace.samples {
        assert!((s.values[yi] - s.values[xi].cos()).abs() < 1e-12);
    }
}

// Cross-engine oracles: the refined time-domain integrator independently
// checks switch times for dynamics with no closed form.

fn two_location_ha(flow: Expr, x0: f64, relation: Relation, threshold: f64) -> HybridAutomaton {
    HybridAutomaton {
        variables: vec!["x".into()],
        locations: vec![
            Location {
                id: "RUN".into(),
                flows: vec![("x".into(), flow)],
                updates: vec![],
                invariant: None,
            },
            Location {
                id: "DONE".into(),
                flows: vec![("x".into(), Expr::constant(0.0))],
                updates: vec![],
                invariant: None,
            },
        ],
        edges: vec![Edge {
            source: "RUN".into(),
            target: "DONE".into(),
            guard: Predicate::single(Expr::var("x"), relation, threshold),
            reset: vec![],
        }],
        initial: vec![InitialCondition {
            location: "RUN".into(),
            env: Environment::from([("x", x0)]),
        }],
    }
}

#[test]
fn randomized_nonlinear_flows_match_the_reference() {
    use rand::Rng;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
    for case in 0..30 {
        // x' = a + b*sin(x) with |b| < a/2 stays positive, so the threshold
        // above x0 is crossed exactly once
        let a: f64 = rng.gen_range(0.5..3.0);
        let b: f64 = rng.gen_range(-0.5..0.5) * a;
        let x0: f64 = rng.gen_range(-2.0..2.0);
        let gap: f64 = rng.gen_range(0.5..4.0);
        let flow = parse_expr(&format!("{a} + {b}*sin(x)")).unwrap();
        let ha = two_location_ha(flow, x0, Relation::Ge, x0 + gap);
        let t_max = gap / (a - b.abs()) + 1.0;

        let fa = convert_to_fa(ha.clone()).unwrap();
        let cfg = SimConfig { t_max, ..Default::default() };
        let (fa_trace, _) = simulate(&fa, &cfg).unwrap();
        let rcfg = RefConfig { dt: 1e-4, t_max, ..Default::default() };
        let (ref_trace, _) = simulate_reference(&ha, &rcfg).unwrap();

        let t_fa = fa_trace.switches.first().map(|s| s.time);
        let t_ref = ref_trace.switches.first().map(|s| s.time);
        match (t_fa, t_ref) {
            (Some(f), Some(r)) => {
                assert!((f - r).abs() <= 1e-4, "case {case}: {f} vs {r} (a={a}, b={b})")
            }
            other => panic!("case {case}: missing switch {other:?} (a={a}, b={b}, gap={gap})"),
        }
    }
}

#[test]
fn randomized_wrapped_guards_match_the_reference() {
    use rand::Rng;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    for case in 0..30 {
        // constant drift through a cosine guard, both rotation senses;
        // thresholds away from +-1 keep the crossing transversal
        let c: f64 = if rng.gen_bool(0.5) { 1.0 } else { -1.0 } * rng.gen_range(0.5..3.0);
        let x0: f64 = rng.gen_range(-3.0..3.0);
        let q: f64 = rng.gen_range(-0.9..0.9);
        let relation = if rng.gen_bool(0.5) { Relation::Le } else { Relation::Ge };
        // skip setups where the guard holds immediately
        let r0 = x0.cos() - q;
        let already = match relation {
            Relation::Le => r0 <= 0.0,
            Relation::Ge => r0 >= 0.0,
            Relation::Eq => unreachable!(),
        };
        if already {
            continue;
        }
        let guard_lhs = parse_expr("cos(x)").unwrap();
        let ha = HybridAutomaton {
            variables: vec!["x".into()],
            locations: vec![
                Location {
                    id: "RUN".into(),
                    flows: vec![("x".into(), Expr::constant(c))],
                    updates: vec![],
                    invariant: None,
                },
                Location {
                    id: "DONE".into(),
                    flows: vec![("x".into(), Expr::constant(0.0))],
                    updates: vec![],
                    invariant: None,
                },
            ],
            edges: vec![Edge {
                source: "RUN".into(),
                target: "DONE".into(),
                guard: Predicate::single(guard_lhs, relation, q),
                reset: vec![],
            }],
            initial: vec![InitialCondition {
                location: "RUN".into(),
                env: Environment::from([("x", x0)]),
            }],
        };
        // one full revolution always crosses the boundary
        let t_max = 2.0 * std::f64::consts::PI / c.abs() + 1.0;

        let fa = convert_to_fa(ha.clone()).unwrap();
        let cfg = SimConfig { t_max, ..Default::default() };
        let (fa_trace, _) = simulate(&fa, &cfg).unwrap();
        let rcfg = RefConfig { dt: 1e-5, t_max, ..Default::default() };
        let (ref_trace, _) = simulate_reference(&ha, &rcfg).unwrap();

        let t_fa = fa_trace.switches.first().map(|s| s.time);
        let t_ref = ref_trace.switches.first().map(|s| s.time);
        match (t_fa, t_ref) {
            (Some(f), Some(r)) => {
                assert!((f - r).abs() <= 1e-6, "case {case}: {f} vs {r} (c={c}, x0={x0}, q={q})")
            }
            other => panic!("case {case}: missing switch {other:?} (c={c}, x0={x0}, q={q})"),
        }
    }
}
