use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("constraint violation: {0}")]
    ConstraintViolation(String),

    #[error("infeasible design: {0}")]
    InfeasibleDesign(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("covariance decomposition failed: {0}")]
    Decomposition(String),

    /// A sampler or estimator reached a state it cannot continue from.
    #[error("sampler fault: {0}")]
    Fault(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error at {}: {source}", path.display())]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
