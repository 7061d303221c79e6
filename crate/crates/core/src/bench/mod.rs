//! Synthetic generators and the benchmark suites built on them.

pub mod experiments;
pub mod generators;

pub use experiments::*;
pub use generators::*;
