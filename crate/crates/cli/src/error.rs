use gazecheck_core::fusion::FusionError;
use gazecheck_core::ingest::IngestError;
use gazecheck_core::model::ModelError;
use gazecheck_core::synth::SynthError;
use gazecheck_core::windowing::WindowError;
use thiserror::Error;

/// Command failure, classified by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, bad config, conflicting settings. Exit 1.
    #[error("{0}")]
    Usage(String),
    /// Unreadable, malformed or unsuitable input data. Exit 2.
    #[error("{0}")]
    Data(String),
    /// Anything that went wrong while computing. Exit 3.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

pub fn data(msg: impl Into<String>) -> CliError {
    CliError::Data(msg.into())
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(format!("i/o error: {e}"))
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<WindowError> for CliError {
    fn from(e: WindowError) -> Self {
        match e {
            WindowError::InvalidParams { .. } | WindowError::InvalidFraction(_) => CliError::Usage(e.to_string()),
            WindowError::TooFewSubjects { .. } | WindowError::Cache(_) | WindowError::Io(_) => CliError::Data(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Arch(_) | ModelError::Config(_) => CliError::Usage(e.to_string()),
            ModelError::SingleClass | ModelError::Corrupt(_) | ModelError::VersionMismatch { .. } | ModelError::Io(_) => {
                CliError::Data(e.to_string())
            }
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::InvalidProfile(_) | SynthError::InvalidConfig(_) | SynthError::ScriptTooShort(_) => CliError::Usage(e.to_string()),
            SynthError::TooShort(_) => CliError::Data(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<FusionError> for CliError {
    fn from(e: FusionError) -> Self {
        match e {
            FusionError::Model(m) => m.into(),
            FusionError::Window(w) => w.into(),
            FusionError::Setup(_) | FusionError::ZeroVoters => CliError::Usage(e.to_string()),
            FusionError::SingleClass { .. } | FusionError::Empty | FusionError::Feature(_) => CliError::Data(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}
