//! Library side of the `radlabel` binary: configuration and subcommands.

pub mod commands;
pub mod config;

use std::io;
use std::path::PathBuf;

use radlabel_core::augment::AugmentError;
use radlabel_core::corpus::CorpusError;
use radlabel_core::metrics::MetricsError;
use radlabel_core::promptgen::PromptError;
use radlabel_core::splitter::SplitError;
use thiserror::Error;

pub use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Split(#[from] SplitError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error("backend: {0}")]
    Backend(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("no split manifest at {} (run `radlabel split` first)", .0.display())]
    MissingManifest(PathBuf),
    #[error("{}: {message}", path.display())]
    BadInput { path: PathBuf, message: String },
}

impl CliError {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }
}
