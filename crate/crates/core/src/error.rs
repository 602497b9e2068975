//! Error taxonomy shared by every module.
//!
//! The variants deliberately mirror how callers have to react: configuration
//! and input problems are caller bugs, numeric failures mean the computation
//! cannot be trusted, and model/precondition violations mean the mathematical
//! hypotheses of an estimate do not hold for the supplied data.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed configuration: unknown names, inconsistent parameters,
    /// values outside their admissible ranges.
    #[error("configuration error: {0}")]
    Config(String),

    /// A function was evaluated outside its admissible domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// A numeric procedure failed to converge or produced non-finite values.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// The data violates a modelling hypothesis (e.g. a cost that dips below
    /// its declared minimum).
    #[error("model violation: {0}")]
    Model(String),

    /// An estimate's stated precondition does not hold for the inputs.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Structurally invalid input data (wrong dimensions, misaligned samples).
    #[error("input error: {0}")]
    Input(String),

    /// The integrator produced a non-finite state.
    #[error("trajectory diverged at t = {t}: {detail}")]
    Divergence { t: f64, detail: String },

    /// The trajectory left the configured domain box.
    #[error("trajectory left the domain at t = {t}")]
    DomainEscape { t: f64 },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
    pub fn model(msg: impl Into<String>) -> Self {
        Error::Model(msg.into())
    }
    pub fn precondition(msg: impl Into<String>) -> Self {
        Error::Precondition(msg.into())
    }
    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }
}
