use std::fmt;
use std::io;

use occlukg_core::bayes::BayesError;
use occlukg_core::eval::EvalError;
use occlukg_core::kg::KgError;
use occlukg_core::kge::KgeError;
use occlukg_core::scene::SceneError;
use occlukg_core::synth::SynthError;

/// Failure of a command, classified by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config files, paths or infeasible requests (exit 2).
    Usage(String),
    /// Input data failed parsing or validation (exit 3).
    Data(String),
    /// Training or inference produced non-finite numbers (exit 4).
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Numeric(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

pub type CliResult<T> = Result<T, CliError>;

pub fn io_error(path: &std::path::Path, e: io::Error) -> CliError {
    CliError::Usage(format!("{}: {e}", path.display()))
}

impl From<SceneError> for CliError {
    fn from(e: SceneError) -> Self {
        match e {
            SceneError::Domain(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<KgError> for CliError {
    fn from(e: KgError) -> Self {
        match e {
            KgError::Split(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<KgeError> for CliError {
    fn from(e: KgeError) -> Self {
        match e {
            KgeError::NonFiniteLoss { .. } => CliError::Numeric(e.to_string()),
            KgeError::InvalidConfig(_) | KgeError::Io(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<BayesError> for CliError {
    fn from(e: BayesError) -> Self {
        match e {
            BayesError::FrameIndex { .. } => CliError::Usage(e.to_string()),
            BayesError::BadProbability { .. } => CliError::Numeric(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Infeasible(_) | EvalError::Config(_) => CliError::Usage(e.to_string()),
            EvalError::Kg(e) => e.into(),
            EvalError::Kge(e) => e.into(),
            EvalError::Bayes(e) => e.into(),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        CliError::Usage(e.to_string())
    }
}
