use std::process::ExitCode;

use thiserror::Error;

/// Top-level failure, carrying the process exit code it maps to.
#[derive(Debug, Error)]
pub enum CliError {
    /// Unreadable input file, socket failure or bad configuration file.
    #[error("{0}")]
    Source(String),
    #[error("configuration error: {0}")]
    Config(String),
    /// Input was readable but unusable (e.g. training data with one class).
    #[error("{0}")]
    Data(String),
    /// Missing, corrupt or mismatched model files.
    #[error("{0}")]
    Model(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Source(_) | CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Model(_) => 4,
            CliError::Internal(_) => 5,
        }
    }
}

impl From<CliError> for ExitCode {
    fn from(e: CliError) -> Self {
        ExitCode::from(e.exit_code())
    }
}

impl From<streamsift::mqlog::MqError> for CliError {
    fn from(e: streamsift::mqlog::MqError) -> Self {
        match e {
            streamsift::mqlog::MqError::Locked(_) => CliError::Source(e.to_string()),
            _ => CliError::Internal(e.to_string()),
        }
    }
}

impl From<streamsift::archive::ArchiveError> for CliError {
    fn from(e: streamsift::archive::ArchiveError) -> Self {
        CliError::Internal(e.to_string())
    }
}

impl From<streamsift::index::IndexError> for CliError {
    fn from(e: streamsift::index::IndexError) -> Self {
        CliError::Internal(e.to_string())
    }
}

impl From<streamsift::analytics::QueryError> for CliError {
    fn from(e: streamsift::analytics::QueryError) -> Self {
        use streamsift::analytics::QueryError;
        match e {
            QueryError::Source(m) => CliError::Source(m),
            QueryError::InvalidWindow | QueryError::InvalidRange { .. } => {
                CliError::Config(e.to_string())
            }
            QueryError::Io(e) => CliError::Internal(e.to_string()),
        }
    }
}

impl From<streamsift::ingest::SourceError> for CliError {
    fn from(e: streamsift::ingest::SourceError) -> Self {
        CliError::Source(e.to_string())
    }
}

impl From<streamsift::sentiment_model::ModelError> for CliError {
    fn from(e: streamsift::sentiment_model::ModelError) -> Self {
        use streamsift::sentiment_model::ModelError;
        match e {
            ModelError::TrainData(m) => CliError::Data(m),
            ModelError::Io(e) => CliError::Internal(e.to_string()),
            other => CliError::Model(other.to_string()),
        }
    }
}

impl From<streamsift::streamproc::StreamError> for CliError {
    fn from(e: streamsift::streamproc::StreamError) -> Self {
        use streamsift::streamproc::StreamError;
        match e {
            StreamError::Model(m) => m.into(),
            StreamError::Config(_) | StreamError::Vocab(_) => CliError::Model(e.to_string()),
            StreamError::Log(_) | StreamError::Metrics(_) | StreamError::Killed { .. } => {
                CliError::Internal(e.to_string())
            }
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Internal(e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use streamsift::sentiment_model::ModelError;

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Source("x".into()).exit_code(), 2);
        assert_eq!(CliError::Data("x".into()).exit_code(), 3);
        assert_eq!(CliError::Model("x".into()).exit_code(), 4);
        assert_eq!(CliError::Internal("x".into()).exit_code(), 5);
        assert_eq!(
            CliError::from(ModelError::TrainData("one class".into())).exit_code(),
            3
        );
        let load = ModelError::Load {
            path: "m".into(),
            reason: "truncated".into(),
        };
        assert_eq!(CliError::from(load).exit_code(), 4);
    }
}
