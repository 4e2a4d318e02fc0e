use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub type Result<T, E = MapleError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum MapleError {
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Core(#[from] maple_core::Error),
}

impl MapleError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        MapleError::Io { path: path.to_path_buf(), source }
    }

    pub fn data(path: &Path, msg: impl std::fmt::Display) -> Self {
        MapleError::Data(format!("{}: {msg}", path.display()))
    }

    /// Process exit status: 2 config, 3 data, 4 divergence, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        use maple_core::Error as E;
        match self {
            MapleError::Config(_) => 2,
            MapleError::Data(_) => 3,
            MapleError::Io { source, .. } if source.kind() == io::ErrorKind::NotFound => 3,
            MapleError::Io { .. } => 1,
            MapleError::Core(e) => match e {
                E::Diverged { .. } => 4,
                E::InvalidConfig(_) | E::InvalidSplit(_) | E::UnknownPrompt(_) | E::UnknownTrait(_) => 2,
                _ => 3,
            },
        }
    }
}
