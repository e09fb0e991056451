//! Batch entry points behind the `hitl` binary.

pub mod bench;
pub mod error;
pub mod ops;
pub mod output;
pub mod svg;

pub use bench::{run_bench, run_compare, BenchReport, BenchSpec, CompareReport};
pub use error::{CliError, Result};
