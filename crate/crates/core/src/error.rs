use thiserror::Error;

/// Errors raised by curve, operator, and simulation routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("curves belong to different space configurations")]
    ConfigMismatch,

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("domain error: {0}")]
    Domain(String),

    /// A point-wise map was fed a value outside its declared domain.
    #[error("value {value} at node {node} is outside the domain {domain} of `{map}`")]
    OutsideDomain {
        map: String,
        domain: &'static str,
        /// Node index; `n_nodes` denotes the tail.
        node: usize,
        value: f64,
    },

    #[error("multiplicative kernel is not invertible: {location} has value {value}")]
    NotInvertible { location: String, value: f64 },

    #[error("range error: {0}")]
    Range(String),

    #[error("missing capability: {0}")]
    Capability(String),

    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    #[error("coupling refused: {0}")]
    Coupling(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
