//! The experimental protocol: base training, sequential few-shot adaptation
//! with replay, evaluation into adaptation matrices, ablation sweeps, and
//! on-disk run persistence.

mod ablation;
mod config;
mod data;
mod protocol;
mod train;

pub use ablation::{run_ablations, AblationReport, LambdaSummary, ReplaySummary, ShotSummary, VariantRun};
pub use config::{AblationConfig, AdaptConfig, BaseConfig, DataConfig, EvalConfig, LossConfig, RunConfig};
pub use data::ProtocolData;
pub use protocol::{
    adapt_sequence, evaluate_checkpoints, run_protocol, stage_name, ProtocolRun, RunRecord, StageRecord,
};
pub use train::{adapt_step, loss_and_gradients, score_samples, train_base, EpochRecord, StepLosses, TrainOutcome};

use crate::losses::LossError;
use crate::metrics::MetricsError;
use crate::model::ModelError;
use crate::numcore::NumError;
use crate::optim::OptimError;
use crate::replay::ReplayError;
use crate::styledata::{FormatError, StyleError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("protocol: {0}")]
    Protocol(String),
    #[error("run record: {0}")]
    Record(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Style(#[from] StyleError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    }
}
