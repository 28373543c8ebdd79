use std::path::Path;

use depgraph_rec::adg::AdgError;
use depgraph_rec::config::ConfigError;
use depgraph_rec::corpus::CorpusError;
use depgraph_rec::datagen::DatagenError;
use depgraph_rec::embed::EmbedError;
use depgraph_rec::eval::EvalError;
use depgraph_rec::hylstm::HyError;
use depgraph_rec::ir::IrError;
use depgraph_rec::slicer::SliceError;
use thiserror::Error;

/// Validation errors exit with 1, runtime errors with 2.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{message}")]
    Validation { category: &'static str, message: String },
    #[error("{message}")]
    Runtime { category: &'static str, message: String },
}

impl CliError {
    pub fn validation(category: &'static str, message: impl ToString) -> Self {
        CliError::Validation { category, message: message.to_string() }
    }

    pub fn runtime(category: &'static str, message: impl ToString) -> Self {
        CliError::Runtime { category, message: message.to_string() }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::runtime("io", format!("{}: {e}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation { .. } => 1,
            CliError::Runtime { .. } => 2,
        }
    }

    pub fn category(&self) -> &'static str {
        match self {
            CliError::Validation { category, .. } | CliError::Runtime { category, .. } => category,
        }
    }
}

macro_rules! from_error {
    ($ty:ty, $ctor:ident, $cat:literal) => {
        impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::$ctor($cat, e)
            }
        }
    };
}

from_error!(ConfigError, validation, "config");
from_error!(IrError, validation, "program");
from_error!(SliceError, validation, "slice");
from_error!(AdgError, validation, "graph");
from_error!(CorpusError, validation, "corpus");
from_error!(DatagenError, validation, "datagen");
from_error!(EmbedError, runtime, "embed");
from_error!(HyError, runtime, "model");

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::VocabMismatch { .. } => CliError::validation("vocab", e),
            other => CliError::runtime("eval", other),
        }
    }
}
