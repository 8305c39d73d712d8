use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("non-finite state at time step {step}")]
    Unstable { step: usize },

    #[error("scheduling block {block} is not in the simplex (sum {sum}, min {min})")]
    NotSimplex { block: usize, sum: f64, min: f64 },

    #[error("non-finite entry at index {index}: {what}")]
    NonFinite { what: &'static str, index: usize },

    #[error("duplicate entries {0} and {1} in regularization pool")]
    DuplicatePool(usize, usize),

    #[error("path evaluation failed at knot {knot}: {source}")]
    Knot {
        knot: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("no feasible candidate among {0} pool entries; enlarge the pool")]
    NoFeasibleCandidate(usize),

    #[error("optimizer never reached a finite objective")]
    Diverged,

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn dim_err(msg: impl Into<String>) -> Error {
    Error::Dimension(msg.into())
}
