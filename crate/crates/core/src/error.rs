use thiserror::Error;

use crate::filters::FilterMode;

/// Errors raised by the filters, kernels and Monte Carlo harness.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch for `{what}`: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: String,
        found: String,
    },
    #[error("matrix `{what}` is not symmetric (max asymmetry {asymmetry:e})")]
    Asymmetric { what: &'static str, asymmetry: f64 },
    #[error("matrix `{what}` is not positive semidefinite (min eigenvalue {min_eigenvalue:e})")]
    NotPositiveSemidefinite {
        what: &'static str,
        min_eigenvalue: f64,
    },
    #[error("measurement noise covariance must be positive definite (min eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite { min_eigenvalue: f64 },
    #[error("state covariance collapsed: {0}")]
    StateCovarianceCollapsed(String),
    #[error("innovation covariance singular")]
    InnovationSingular,
    #[error("ensemble size {0} is too small (need at least 2 members)")]
    EnsembleTooSmall(usize),
    #[error("non-finite {what} at epoch {epoch}, member {member}")]
    NonFinite {
        what: &'static str,
        epoch: usize,
        member: usize,
    },
    #[error("non-finite truth trajectory in run {run} at epoch {epoch}")]
    NonFiniteTruth { run: usize, epoch: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("run {run} failed for mode {mode} with m = {ensemble_size}: {source}")]
    Campaign {
        run: usize,
        mode: FilterMode,
        ensemble_size: usize,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_len(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected: expected.to_string(),
            found: found.to_string(),
        })
    }
}

pub(crate) fn check_shape(
    what: &'static str,
    expected: (usize, usize),
    found: (usize, usize),
) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected: format!("{}x{}", expected.0, expected.1),
            found: format!("{}x{}", found.0, found.1),
        })
    }
}
