use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("infeasible model: {0}")]
    InfeasibleModel(String),

    #[error("invalid potential at site {site}, index {index}: {reason}")]
    InvalidPotential {
        site: usize,
        index: usize,
        reason: String,
    },

    #[error("unsupported kernel: {0}")]
    UnsupportedKernel(String),

    #[error("state space too large: {count} configurations (cap {cap})")]
    TooLarge { count: u128, cap: usize },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("corrupted coupling: {0}")]
    CorruptedCoupling(String),

    #[error("model file: {0}")]
    ModelFile(String),
}

impl Error {
    /// Domain errors (as opposed to malformed input) map to CLI exit code 1.
    pub fn is_domain(&self) -> bool {
        matches!(
            self,
            Error::InfeasibleModel(_)
                | Error::TooLarge { .. }
                | Error::UnsupportedKernel(_)
                | Error::InvalidPotential { .. }
                | Error::CorruptedCoupling(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
