use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("{side} correlation is rank deficient: eigenvalue #{index} = {value:e} is below the floor")]
    RankDeficient {
        side: Side,
        index: usize,
        value: f64,
    },

    #[error("invalid block spectrum: {0}")]
    InvalidSpectrum(String),

    #[error("numeric failure in {context}: {detail}")]
    NumericFailure {
        context: &'static str,
        detail: String,
    },

    #[error("a {rf_chains}-chain split needs at least 2 RF chains")]
    InsufficientRfChains { rf_chains: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("combiner for slot {slot} is rank deficient")]
    DegenerateCombiner { slot: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("reference channel has zero energy")]
    ZeroChannel,
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn numeric(context: &'static str, detail: impl Into<String>) -> Self {
        Error::NumericFailure {
            context,
            detail: detail.into(),
        }
    }
}

/// Which end of the link a correlation matrix belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Transmit,
    Receive,
}

impl std::fmt::Display for Side {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Side::Transmit => f.write_str("transmit"),
            Side::Receive => f.write_str("receive"),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
