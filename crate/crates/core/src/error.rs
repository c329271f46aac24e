use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration input (file syntax, unknown keys, bad values).
    #[error("config error: {0}")]
    Config(String),

    /// Structural problem with the mesh hierarchy (nesting, alignment, empty levels).
    #[error("mesh error: {0}")]
    Mesh(String),

    /// A field operation was asked to read ghost nodes that were never filled.
    #[error("stale ghosts: {0}")]
    StaleGhosts(String),

    /// Invalid physical parameters (moduli, mollification widths, time steps).
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// The operator or solver hit a numerical dead end (singular row, divergence).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// The iteration budget ran out before reaching the requested tolerance.
    #[error("did not converge: residual ratio {residual_rel} after {cycles} cycles")]
    NotConverged { cycles: usize, residual_rel: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
