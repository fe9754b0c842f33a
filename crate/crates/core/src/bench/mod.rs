//! Benchmark controller: configuration, grid planning, execution, sweeps
//! and the results store.

pub mod config;
pub mod plan;
pub mod run;
pub mod store;
pub mod sweep;

use thiserror::Error;

pub use config::{derive_seed, prepare_dataset, BenchmarkConfig, DatasetSource, PreparedDataset, Scenario, SweepConfig};
pub use plan::{plan_experiments, split_seeds, ExperimentGrid, PlanContext, PlannedCell, Skip};
pub use run::{
    ab_compare, aligned_repair_score, detection_context, evaluate_scenario, plan_context, run_benchmark, run_grid, seeded_for_split, with_timeout, BenchSummary,
    DataVersion, DatasetSummary, EvalSetup, RunOptions,
};
pub use store::{AbSide, AbTestRecord, ExperimentRecord, IouRecord, ResultsStore, Stage, Status, StrategyRecord, SweepAxis, SweepRecord};
pub use sweep::{run_robustness_sweep, run_scalability_sweep, run_sweeps};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("results store: {0}")]
    Store(String),
    #[error("empty grid: {0}")]
    EmptyGrid(String),
    #[error("no shared seeds: {0}")]
    NoSharedSeeds(String),
    #[error("too few rows: {0}")]
    TooFewRows(String),
    #[error(transparent)]
    Tabular(#[from] crate::tabular::TabularError),
    #[error(transparent)]
    Constraint(#[from] crate::constraints::ConstraintError),
    #[error(transparent)]
    Inject(#[from] crate::inject::InjectError),
    #[error(transparent)]
    Detect(#[from] crate::detect::DetectError),
    #[error(transparent)]
    Repair(#[from] crate::repair::RepairError),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Eval(#[from] crate::eval::EvalError),
    #[error(transparent)]
    Stats(#[from] crate::stats::StatsError),
}

pub type Result<T> = std::result::Result<T, BenchError>;
