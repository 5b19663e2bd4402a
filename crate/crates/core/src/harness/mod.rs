//! Experiment manifests, the on-disk workspace, and the
//! generate → run → analyze → score pipeline, plus the registry behind the
//! human trial service.

mod analyze;
mod data;
mod human;
mod manifest;
mod report;
mod run;
mod score;
mod store;

pub use analyze::{analyze, AnalysisSummary, CellFailure};
pub use human::{HumanError, HumanRegistry, NextTrial, SessionStatus, SessionTicket, CONSENT_TEXT};
pub use manifest::{ChannelSpec, ExperimentManifest, ObserverSpec, TranscriptSource, HUMAN_ABLATIONS};
pub use run::{generate, run, GenerateSummary, RunOptions, RunSummary, SessionRun};
pub use score::{score, ModelScore, ScoreRow, ScoreSummary};
pub use store::{RecordLog, Workspace, RECORD_SCHEMA, RECORD_SCHEMA_VERSION};

use crate::client::ChannelError;
use crate::fusion::{ForestConfig, VarianceCentering};
use crate::par::Execution;
use crate::session::SessionError;
use crate::stimulus::StimulusError;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("manifest field `{field}`: {message}")]
    Manifest { field: String, message: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("experiment `{0}` already exists")]
    Duplicate(String),
    #[error("experiment `{0}` not found; run generate first")]
    UnknownExperiment(String),
    #[error("experiment `{0}`: manifest differs from the one its plan and records were made with")]
    ManifestChanged(String),
    #[error("experiment `{0}` collects responses through the human trial service")]
    HumanChannel(String),
    #[error("no parsed trial records in the selected experiments")]
    NoRecords,
    #[error("no analysis outputs under {0}; run analyze first")]
    MissingAnalysis(PathBuf),
    #[error(transparent)]
    Stimulus(#[from] StimulusError),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
}

impl HarnessError {
    pub(crate) fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        HarnessError::Io { path: path.as_ref().to_path_buf(), source }
    }

    pub(crate) fn format(path: impl AsRef<Path>, message: impl ToString) -> Self {
        HarnessError::Format { path: path.as_ref().to_path_buf(), message: message.to_string() }
    }
}

/// Knobs shared by analyze and score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    pub exec: Execution,
    pub bootstrap_rounds: usize,
    pub bootstrap_seed: u64,
    pub fit_restarts: usize,
    pub fit_seed: u64,
    pub forest: ForestConfig,
    pub centering: VarianceCentering,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            exec: Execution::default(),
            bootstrap_rounds: 30,
            bootstrap_seed: 0,
            fit_restarts: 20,
            fit_seed: 0,
            forest: ForestConfig::default(),
            centering: VarianceCentering::default(),
        }
    }
}
