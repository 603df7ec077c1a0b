use thiserror::Error;

use crate::datamodel::DataError;
use crate::embed::EmbedError;
use crate::graph::GraphError;
use crate::hgt::HgtError;
use crate::llm::LlmError;
use crate::metrics::MetricError;
use crate::persona::PersonaError;
use crate::synth::SynthError;
use crate::train::TrainError;
use crate::zeroshot::ZeroShotError;

/// Union of the module errors, for callers driving the whole pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Persona(#[from] PersonaError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Hgt(#[from] HgtError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    ZeroShot(#[from] ZeroShotError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Short machine-readable category, used by the command-line front end.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Data(_) => "data",
            Error::Graph(_) => "graph",
            Error::Llm(_) => "llm",
            Error::Persona(_) => "persona",
            Error::Embed(_) => "embed",
            Error::Hgt(_) => "model",
            Error::Train(_) => "train",
            Error::Metric(_) => "metric",
            Error::ZeroShot(_) => "zeroshot",
            Error::Synth(_) => "synth",
            Error::Io { .. } => "io",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
