use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    /// A trajectory left the finite region (non-finite state or norm above
    /// [`crate::samplers::BLOWUP_NORM`]).
    #[error(
        "numerical blowup in {count} trajectory(ies); first at trajectory {trajectory}, \
         step {step} (t = {t_cur} -> {t_next})"
    )]
    Blowup {
        count: usize,
        trajectory: usize,
        step: usize,
        t_cur: f64,
        t_next: f64,
    },

    #[error("training diverged at iteration {iteration} (loss = {loss})")]
    Divergence { iteration: usize, loss: f64 },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {msg}", path.display())]
    Format { path: PathBuf, msg: String },
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
