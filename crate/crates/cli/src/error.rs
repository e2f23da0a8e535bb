use powerbuf_core::Error as ModelError;
use thiserror::Error;

/// Process exit codes.
pub mod exit {
    pub const OK: u8 = 0;
    pub const FAILURE: u8 = 1;
    pub const PARSE: u8 = 2;
    pub const COLLAPSE: u8 = 3;
    pub const INFEASIBLE: u8 = 4;
}

#[derive(Debug, Error)]
pub enum CliError {
    /// Malformed scenario or argument, or values the model rejects.
    #[error("invalid scenario: {0}")]
    Parse(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Model(#[from] ModelError),
}

impl CliError {
    /// Maps a model validation error in scenario section `section` to a
    /// parse error.
    pub fn invalid(section: &'static str) -> impl Fn(ModelError) -> CliError {
        move |e| CliError::Parse(format!("[{section}] {e}"))
    }

    pub fn io(path: &std::path::Path) -> impl Fn(std::io::Error) -> CliError + '_ {
        move |source| CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Parse(_) => exit::PARSE,
            CliError::Io { .. } => exit::FAILURE,
            CliError::Model(ModelError::InfeasibleDemand { .. }) => exit::INFEASIBLE,
            CliError::Model(ModelError::Collapse { .. }) => exit::COLLAPSE,
            CliError::Model(
                ModelError::Domain(_)
                | ModelError::Config(_)
                | ModelError::CalibrationRange { .. }
                | ModelError::StepSize { .. },
            ) => exit::PARSE,
            CliError::Model(_) => exit::FAILURE,
        }
    }
}
