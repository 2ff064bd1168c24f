//! Hybrid-system simulation by projection onto the unit circle.
//!
//! A hybrid automaton ([`model::HybridAutomaton`]) is translated into a
//! frequency automaton ([`translate::FrequencyAutomaton`]): per location,
//! every flow variable is normalized against its entry value and reachable
//! range and driven as a rotating vector, so guard boundaries become target
//! angles and the simulator ([`sim`]) converges onto level crossings exactly
//! instead of stepping over them. A classic RK4 reference integrator
//! ([`refsim`]) and trace metrics ([`metrics`]) support accuracy and
//! efficiency comparisons.

pub mod expr;
pub mod metrics;
pub mod model;
pub mod refsim;
pub mod sim;
pub mod trace;
pub mod translate;

pub use expr::{parse_expr, Environment, Expr};
pub use model::{HybridAutomaton, Predicate, Relation};
pub use sim::{simulate, SimConfig};
pub use trace::{RunReport, Trace};
pub use translate::{convert_to_fa, FrequencyAutomaton};
