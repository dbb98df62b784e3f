//! Subjects, the end-to-end repair pipeline, seeded sweeps and their reports.

mod config;
mod pipeline;
mod report;
mod subject;
mod sweep;

pub use config::{config_hash, run_seed, ExperimentSpec, RunConfig, SwarmSection, CONFIG_VERSION};
pub use pipeline::{
    run_repair_pipeline, PipelineContext, RunArtifacts, RunKey, RunResult, RunStatus, SplitOutcome,
};
pub use report::{emit_report, read_runs_csv};
pub use subject::{
    make_splits, train_subject, ClusterSpec, DataSource, Subject, SubjectSpec, TrainingSpec,
};
pub use sweep::{
    aggregate, run_dir, run_sweep, run_sweep_with, AggregateResult, ConfigSummary, SplitMeans,
    SweepOptions,
};
