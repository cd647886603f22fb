//! Scoring against ground truth and the end-to-end benchmark runner.

mod benchmark;
mod metrics;

use thiserror::Error;

pub use benchmark::{
    run_benchmark, run_benchmark_with, Benchmark, BenchmarkError, DatasourceRef, InventoryMapping,
    MetricsReport, QueryTrace, RunMetadata, BenchmarkQuery,
};
pub use metrics::{
    compute_ad, compute_ad_for, compute_id, compute_irr, fact_deviation, mean_deviation,
    AccountingDeviation, FactScore, GroundTruthRecord, IdOutcome,
};

use crate::accounting::UnitError;

#[derive(Debug, Error)]
pub enum EvaluationError {
    #[error("benchmark definition error: {0}")]
    Definition(String),
    #[error("{0}: true value is zero, percentage deviation undefined")]
    ZeroTruth(String),
    #[error("{fact_key}: {source}")]
    Unit {
        fact_key: String,
        #[source]
        source: UnitError,
    },
}
