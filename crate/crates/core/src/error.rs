use thiserror::Error;

/// Errors surfaced by sampling, estimation, oracle evaluation and the harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("estimation failed: {reason} (used {n_used}, dropped {n_dropped})")]
    Estimation {
        reason: String,
        n_used: usize,
        n_dropped: usize,
    },

    #[error("quadrature did not converge: estimate {estimate}, achieved error {achieved}")]
    Quadrature { estimate: f64, achieved: f64 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
