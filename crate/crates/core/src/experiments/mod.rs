//! Experiment configurations, runners and result tables.

pub mod config;
pub mod pollution;
pub mod results;
pub mod synthetic;

pub use config::{ExperimentConfig, ExperimentKind, ExperimentSetup, OutputFormat, OutputSpec};
pub use pollution::{
    ingest_csv, ingest_reader, loog_cv_lambda, make_noisy_proxies, run_pipeline, CvResult, IngestReport,
    PipelineOptions, Schema,
};
pub use results::{emit_results, read_results, Filter, ResultRow, ResultTable, SummaryRow};
pub use synthetic::{
    run_causal_anticausal_experiment, run_experiment, run_misspecification_experiment, run_robustness_experiment,
    run_targeted_experiment,
};
