//! Experiment plumbing: configuration files, run orchestration, reports.

pub mod config;
pub mod report;
mod run;

use thiserror::Error;

use crate::event::WorkerId;
use crate::models::ModelError;
use crate::qsm::QsmError;
use crate::sync::SyncError;

pub use config::{
    build_network, build_partition, load_config, parse_config, prepare, ConfigError, Features, PartitionMethod,
    Prepared, RunConfig, TopologyConfig, TransportKind,
};
pub use report::{read_report, report, speedup, write_report, RunReport, WorkerReport};
pub use run::{lookahead_for, run, run_prepared, server_endpoint, RunOutput};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sync(#[from] SyncError),
    #[error("worker {worker}: {source}")]
    Worker {
        worker: WorkerId,
        #[source]
        source: SyncError,
    },
    #[error("worker {worker}: QSM: {source}")]
    Qsm {
        worker: WorkerId,
        #[source]
        source: QsmError,
    },
    #[error("worker {worker} panicked")]
    Panicked { worker: WorkerId },
    #[error("QSM server: {0}")]
    Server(#[source] std::io::Error),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("report: {0}")]
    Report(String),
    #[error("baseline config hash {baseline} does not match {report}")]
    MismatchedConfig { report: String, baseline: String },
}

impl RunError {
    /// True for a worker stopped because a peer failed.
    fn is_abort(&self) -> bool {
        matches!(self, RunError::Worker { source: SyncError::Transport { .. }, .. })
    }
}
