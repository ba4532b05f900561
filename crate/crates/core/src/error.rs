//! Crate-wide error type for the higher-level modules.

use crate::model::ModelError;
use crate::risk::RiskError;
use crate::sdp::{SdpError, SdpStatus};

/// Errors surfaced by the recourse, extensive, decomposition and stability
/// layers. Lower-level modules keep their own error enums and convert.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Model(#[from] ModelError),

    #[error(transparent)]
    Sdp(#[from] SdpError),

    #[error(transparent)]
    Risk(#[from] RiskError),

    /// Problem data failed validation; the report text lists every issue.
    #[error("problem data failed validation:\n{0}")]
    InvalidProblem(String),

    /// A subordinate SDP solve ended in a status that the caller cannot use.
    #[error("{context}: solver returned {status:?}")]
    SolveFailed { status: SdpStatus, context: String },

    /// A verified assumption (complete recourse or strict dual feasibility)
    /// does not hold for the given data.
    #[error("assumption {name} fails: {detail}")]
    AssumptionFailed { name: &'static str, detail: String },

    /// The requested operation is not defined for the given risk spec.
    #[error("unsupported risk spec for this operation: {0}")]
    UnsupportedSpec(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

impl Error {
    pub fn solve_failed(status: SdpStatus, context: impl Into<String>) -> Self {
        Error::SolveFailed {
            status,
            context: context.into(),
        }
    }
}
