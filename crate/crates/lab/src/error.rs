use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: isaacs_core::Error,
    },
    #[error(transparent)]
    Core(#[from] isaacs_core::Error),
}

pub type LabResult<T> = Result<T, LabError>;

impl LabError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        LabError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// 2 for usage, configuration and filesystem problems, 1 for faults
    /// raised while computing.
    pub fn exit_code(&self) -> i32 {
        use isaacs_core::Error as E;
        match self {
            LabError::Config(_) | LabError::Io { .. } => 2,
            LabError::Core(
                E::Syntax { .. }
                | E::UnknownIdentifier { .. }
                | E::Arity { .. }
                | E::DimensionMismatch { .. }
                | E::UndeclaredVariable { .. }
                | E::ActionGrid(_)
                | E::DegenerateGrid(_),
            ) => 2,
            _ => 1,
        }
    }
}

/// Tags a core error with the experiment stage that raised it.
pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> LabResult<T>;
}

impl<T> StageExt<T> for isaacs_core::Result<T> {
    fn stage(self, stage: &'static str) -> LabResult<T> {
        self.map_err(|source| LabError::Stage { stage, source })
    }
}
