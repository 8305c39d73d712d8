//! End-to-end experiments: bootstrap, active-learning runs, metrics,
//! path-method comparison and result tables.

pub mod compare;
pub mod config;
pub mod experiment;
pub mod metrics;
pub mod tables;
pub mod tanks;

pub use compare::{compare_kinds, compare_path_methods, path_study, PathComparison};
pub use config::{derive_seed, schema_text, AcquisitionTag, ExperimentConfig, PlantTag, RegularizerKind};
pub use experiment::{
    bootstrap, regularizer, run_active_learning, run_active_learning_with, Bootstrap, RunFile, RunHeader, RunLine, RunLog,
    RunOutcome, RunRecord, RunStatus, Session,
};
pub use metrics::{bfr_score, evaluate, rmse, schedule_spread, BfrReport, ErrorStats};
pub use tanks::{tanks_experiment, TanksResult};
