use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{key}`: {reason}")]
    Param { key: &'static str, reason: String },

    #[error("invalid field: {0}")]
    Field(String),

    #[error("{path}: record {record}: {reason}")]
    Load {
        path: String,
        record: usize,
        reason: String,
    },

    #[error("quadrature did not reach tolerance (error estimate {estimate:e})")]
    Quadrature { estimate: f64 },

    #[error("minimum at bracket edge h = {h}; enlarge the bracket [{h_min}, {h_max}]")]
    BracketEdge { h: f64, h_min: f64, h_max: f64 },

    #[error("non-finite energy or gradient at iteration {0}")]
    NonFinite(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn param(key: &'static str, reason: impl Into<String>) -> Error {
    Error::Param {
        key,
        reason: reason.into(),
    }
}
