use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("solver failed to converge: {context} (residual {residual:.3e} after {iterations} iterations)")]
    SolverDiverged {
        context: String,
        residual: f64,
        iterations: usize,
    },

    #[error("incompatible right-hand side: {0}")]
    Incompatible(String),

    #[error("NaN detected during {stage}")]
    NanDetected { stage: String },

    #[error("advective CFL {cfl:.3} exceeds 1; characteristic tracing is invalid")]
    CflExceeded { cfl: f64 },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("{0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;
