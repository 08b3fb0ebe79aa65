//! Experiment driver for `gfd-core`: TOML configs, synthetic data with
//! seeded noise, CSV output and a checksummed run manifest.

// `!(x > 0.0)` guards reject NaN as well; index loops mirror the quadrature formulas.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod config;
pub mod error;
pub mod noise;
pub mod output;
pub mod pipeline;

pub use config::ExperimentConfig;
pub use error::CliError;
pub use noise::inject_noise;
pub use pipeline::{run, Task};
