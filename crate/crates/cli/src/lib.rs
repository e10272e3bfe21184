//! Front end for the noisy DCE-MRI pipeline: configuration, subcommands and
//! the runtime benchmark.

// `!(x > 0.0)` style checks deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;

pub use commands::{
    cmd_bench, cmd_denoise, cmd_dro_gen, cmd_fit, cmd_metrics, cmd_noise_add, cmd_noise_estimate, cmd_pipeline,
    BenchReport, MapScores, PipelineInput,
};
pub use config::{Manifest, Method, RunConfig};
pub use error::{CliError, Stage};
