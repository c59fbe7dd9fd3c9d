//! File formats, configuration and commands on top of `lrmc-core`.

pub mod commands;
pub mod config;
pub mod matrix_csv;

pub use commands::{complete, simulate, sweep_explore, sweep_gap, CommandError, CompletionSummary, Summary};
pub use config::{ConfigError, ExperimentConfig, ScheduleMode};
pub use matrix_csv::{load_matrix_csv, parse_matrix, read_matrix, write_matrix_csv, MatrixCsvError};
