//! Configuration, orchestration and file output for the `wqed` binary.

pub mod compare;
pub mod config;
pub mod experiment;
pub mod output;

use std::path::PathBuf;

use thiserror::Error;

pub use compare::{compare_series, load_series, Deviation, Series};
pub use config::{InitialState, Observable, RunConfig, SweepAxes};
pub use experiment::{run_experiment, run_sweep, RunOutput, SweepSummary};
pub use output::RunMetadata;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("time grids do not overlap")]
    DisjointGrids,

    #[error(transparent)]
    Collision(#[from] wqed_core::CollisionError),

    #[error(transparent)]
    Markov(#[from] wqed_core::MarkovError),

    #[error(transparent)]
    Mps(#[from] wqed_core::MpsError),

    #[error(transparent)]
    Observable(#[from] wqed_core::ObservableError),
}

impl CliError {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| Self::Io { path, source }
    }
}
