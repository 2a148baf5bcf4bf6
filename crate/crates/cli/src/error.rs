use std::io;
use std::path::PathBuf;

use serde_json::json;
use thiserror::Error;

use crate::store::StoreError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{}: {source}", path.display())]
    MissingFile {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{}: {message}", path.display())]
    Schema { path: PathBuf, message: String },
    #[error("{0}")]
    Usage(String),
    #[error("refusing to overwrite input file {}", .0.display())]
    WouldOverwriteInput(PathBuf),
    #[error(transparent)]
    Core(#[from] sacti_core::Error),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        let path = path.into();
        if source.kind() == io::ErrorKind::NotFound {
            CliError::MissingFile { path, source }
        } else {
            CliError::Io { path, source }
        }
    }

    pub fn schema(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        CliError::Schema {
            path: path.into(),
            message: message.to_string(),
        }
    }

    /// Stable machine-readable category.
    pub fn kind(&self) -> &'static str {
        use sacti_core::Error as E;
        match self {
            CliError::MissingFile { .. } => "missing_file",
            CliError::Schema { .. } => "schema",
            CliError::Usage(_) | CliError::WouldOverwriteInput(_) => "usage",
            CliError::Io { .. } => "io",
            CliError::Store(StoreError::Journal { .. }) => "schema",
            CliError::Store(StoreError::Io(_)) => "io",
            CliError::Store(_) => "usage",
            CliError::Core(e) => match e {
                E::LabelSpace(_) => "label_space",
                E::Config(_) => "config",
                E::Text(_) | E::Json(_) | E::Input { .. } | E::Checkpoint(_) | E::TooLong { .. } => "schema",
                E::EmptyDataset(_) => "empty_dataset",
                E::Io(_) => "io",
                E::Diverged { .. } | E::Tensor(_) => "training",
            },
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self.kind() {
            "usage" => 2,
            "missing_file" => 3,
            "schema" => 4,
            "label_space" => 5,
            "config" => 6,
            "io" => 7,
            _ => 1,
        }
    }

    /// The error as a single line of JSON.
    pub fn to_json_line(&self) -> String {
        json!({"error": {"kind": self.kind(), "message": self.to_string()}}).to_string()
    }
}
