//! End-to-end experiments.
//!
//! Nature draws labels from the true hypothesis, users privatize them, and
//! the learner only sees the privatized messages. Each replication owns its
//! own random streams, so runs are reproducible and can execute in parallel.

pub mod batch;
pub mod config;
pub mod run;
pub mod svg;
pub mod sweep;

pub use batch::{batch_select, derive_horizon, BatchResult};
pub use config::{Algorithm, ExperimentConfig, InstanceSource, Setup, TruthSelection};
pub use run::{
    risk_bound, run_experiment, run_on_class, run_replication, run_setup, Experiment,
    ExperimentReport, RunOptions, RunSummary,
};
pub use svg::{render_svg, render_svg_text, PlotSpec};
pub use sweep::{log_log_slope, parse_values, sweep, sweep_with, SweepAxis, SweepResult};
