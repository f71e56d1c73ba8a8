use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid topology: {0}")]
    Topology(String),

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("infeasible delay bound {dc} (minimum feasible is {min_dc})")]
    Infeasible { dc: f64, min_dc: f64 },

    #[error("{solver} did not converge within {iterations} iterations")]
    NonConvergence {
        solver: &'static str,
        iterations: usize,
    },

    #[error("distributed iteration diverged at round {iteration} (cost {cost})")]
    Diverged { iteration: usize, cost: f64 },

    #[error("numerical failure in {0}")]
    Numerical(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed file: {0}")]
    Parse(#[from] serde_json::Error),
}

/// Coarse classification used to map failures onto process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Infeasible,
    NonConvergence,
    Io,
    Validation,
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Infeasible { .. } => ErrorCategory::Infeasible,
            Error::NonConvergence { .. } | Error::Diverged { .. } | Error::Numerical(_) => {
                ErrorCategory::NonConvergence
            }
            Error::Io(_) => ErrorCategory::Io,
            Error::Topology(_) | Error::Validation(_) | Error::Parse(_) => {
                ErrorCategory::Validation
            }
        }
    }
}

impl ErrorCategory {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCategory::Infeasible => 2,
            ErrorCategory::NonConvergence => 3,
            ErrorCategory::Io => 4,
            ErrorCategory::Validation => 5,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCategory::Infeasible => "infeasible",
            ErrorCategory::NonConvergence => "non_convergence",
            ErrorCategory::Io => "io",
            ErrorCategory::Validation => "validation",
        }
    }
}
