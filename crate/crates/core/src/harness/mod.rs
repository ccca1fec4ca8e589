//! Assessment runs: configuration, the question pipeline, run logs and the
//! reports computed from them.

pub mod config;
pub mod record;
pub mod report;
pub mod run;

use thiserror::Error;

pub use config::{Assembly, AvgQdSource, RunConfig};
pub use record::{read_log, DifficultyRecord, RunRecord, Timing};
pub use report::{calibrate_from_logs, report_from_logs, Summary};
pub use run::{run_assessment, RunOptions, RunOutcome};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("backend outage: {0}")]
    Outage(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("{path}: line {line} does not match the run record schema: {message}")]
    SchemaMismatch { path: String, line: usize, message: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl HarnessError {
    /// Process exit code: 2 configuration, 3 backend outage, 4 data error.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Outage(_) => 3,
            HarnessError::Data(_) | HarnessError::SchemaMismatch { .. } | HarnessError::Io { .. } => 4,
        }
    }

    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
