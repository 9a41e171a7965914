//! Experiment driver for `isaacs-core`: TOML model files, the convergence
//! study and saddle check, and CSV/JSON/SVG reports.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;
pub mod experiments;
pub mod report;

pub use commands::{run, Cli, Command, CommonArgs, Outcome};
pub use config::{load_model, load_model_file, read_model_file, ExperimentConfig, ModelFile};
pub use error::{LabError, LabResult};
pub use experiments::{
    run_convergence_study, run_saddle_check, solve_for_meshes, ConvergenceStudy, SaddleReport, Solved, Verdict,
};
pub use report::{emit_report, Report};
