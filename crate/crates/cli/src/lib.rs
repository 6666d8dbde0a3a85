//! Command-line front end: training, evaluation, prediction, per-position
//! scoring, gradient checking and benchmarking, plus the `NCTC/1` model file.

pub mod commands;
pub mod model_file;
pub mod timing;

pub use commands::{run, Cli, Command};
pub use model_file::{load_model, read_model, save_model, write_model};
