use thiserror::Error;

use crate::network::NodeId;

/// Errors raised by the line primitives, the forward model and the inversion.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("singular load: Y_C + Y_L vanishes")]
    SingularLoad,

    #[error("line resonance: carry-back denominator below {0:e}")]
    Resonance(f64),

    #[error("ideal (lossless) line: distance cannot be inverted from the reflection magnitude")]
    IdealLine,

    #[error("matched load: reflection coefficient is zero, distance is unobservable")]
    MatchedLoad,

    #[error("inconsistent measurement: implied distance {0} m is negative")]
    InconsistentMeasurement(f64),

    #[error("degenerate pair: {0}")]
    DegeneratePair(&'static str),

    #[error("ambiguous pair: both roots are real and within the lambda/4 bound")]
    AmbiguousPair,

    #[error("invalid topology: {0}")]
    InvalidTopology(String),

    #[error("unknown node {0}")]
    UnknownNode(NodeId),

    #[error("unknown cable `{0}`")]
    UnknownCable(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Format(e.to_string())
    }
}
