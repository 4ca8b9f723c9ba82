//! Experiment orchestration: config, the five pipeline stages and report
//! emission.
//!
//! ```text
//! train-classifier -> train-tracers -> attack -> trace -> report
//! ```
//!
//! Each stage reads the config plus the previous stages' files under the
//! output directory and writes only its own subdirectory, so any stage can
//! be rerun on its own.

mod config;
mod pipeline;
mod records;
mod report;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use config::{ClassifierSpec, DatasetSpec, ExperimentConfig, ExperimentSpec, Generator, OutputSpec, TracerSpec};
pub use pipeline::{AccuracyRow, AccuracyTable, CellStatus, ClassifierMetrics, Pipeline, TraceCell, TraceFragment};
pub use records::{read_records, write_records, RecordRow};
pub use report::{histogram, AblationRow, HistogramBin, MulticopyRow, RunReport, TracingRow, TransferRow};

use crate::attacks::AttackError;
use crate::datax::DataError;
use crate::netcore::NetError;
use crate::separation::SeparationError;
use crate::tracing::TraceError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error in `{field}`: {msg}")]
    Config { field: String, msg: String },
    #[error("missing stage input: {}", .0.display())]
    MissingInput(PathBuf),
    #[error("unreadable stage input {}: {msg}", path.display())]
    Corrupt { path: PathBuf, msg: String },
    #[error("attack exhausted the dataset in {} cell(s): {}", .0.len(), .0.join("; "))]
    AttackExhausted(Vec<String>),
    #[error("i/o error on {}: {msg}", path.display())]
    Io { path: PathBuf, msg: String },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Separation(#[from] SeparationError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Trace(#[from] TraceError),
}

impl HarnessError {
    pub(crate) fn io(path: &Path, err: impl std::fmt::Display) -> Self {
        HarnessError::Io {
            path: path.to_path_buf(),
            msg: err.to_string(),
        }
    }

    /// Process exit code: 2 config, 3 missing input, 4 attack exhaustion,
    /// 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config { .. } => 2,
            HarnessError::MissingInput(_) | HarnessError::Corrupt { .. } => 3,
            HarnessError::AttackExhausted(_) => 4,
            _ => 1,
        }
    }
}
