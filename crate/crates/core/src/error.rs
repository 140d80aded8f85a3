use thiserror::Error;

/// Errors raised by channel, construction and lattice operations.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument is outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A numerical procedure did not reach its target accuracy.
    #[error("numerical error in {what}: requested tolerance {requested:e}, achieved {achieved:e}")]
    Numerical {
        what: &'static str,
        requested: f64,
        achieved: f64,
    },

    /// A caller violated an input contract (length mismatch, asymmetric density, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A construction would exceed the configured memory budget.
    #[error("resource limit exceeded at level {level}: {detail}")]
    Resource { level: usize, detail: String },

    /// Partition-chain design targets could not be met.
    #[error("design targets infeasible: {0}")]
    Design(String),

    /// Lattice assembly failed.
    #[error("lattice build failed: {0}")]
    Build(String),

    /// Artifact parsing or I/O failure.
    #[error("artifact error: {0}")]
    Artifact(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_finite(name: &str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} must be finite, got {value}")))
    }
}

pub(crate) fn ensure_positive(name: &str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} must be positive and finite, got {value}")))
    }
}
