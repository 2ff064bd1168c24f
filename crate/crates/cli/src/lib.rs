//! Model loading, trace CSV emission and the benchmark harness behind the
//! `fasim` command-line tool.

pub mod bench;
pub mod builtins;
pub mod csv_io;
pub mod model_format;

pub use builtins::{load_builtin, load_model};
pub use model_format::{parse_model, ModelError, ParsedModel};
