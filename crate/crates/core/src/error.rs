use std::path::PathBuf;

/// Diagnostic captured when training produces a non-finite loss.
#[derive(Debug, Clone)]
pub struct NonFiniteDiagnostic {
    pub epoch: usize,
    pub episode: usize,
    pub episode_seed: u64,
    pub loss: f64,
    pub parameter_norms: Vec<(String, f64)>,
}

impl std::fmt::Display for NonFiniteDiagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "non-finite loss {} at epoch {} episode {} (episode seed {})",
            self.loss, self.epoch, self.episode, self.episode_seed
        )?;
        for (name, norm) in &self.parameter_norms {
            write!(f, "\n  |{name}| = {norm}")?;
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("malformed data: {0}")]
    Format(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    NonFiniteLoss(Box<NonFiniteDiagnostic>),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
