use thiserror::Error;

/// Errors produced by the optimization library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The Gram matrix could not be factorized even at the largest admissible jitter.
    #[error(
        "ill-conditioned gram matrix ({size} points): factorization failed at jitter {max_jitter:e} \
         (mean diagonal {mean_diagonal:e}, smallest pivot {smallest_pivot:e})"
    )]
    IllConditionedGram {
        size: usize,
        max_jitter: f64,
        mean_diagonal: f64,
        smallest_pivot: f64,
    },

    #[error("privacy budget exhausted: consumed {consumed}, requested {requested}, total {total}")]
    BudgetExhausted {
        consumed: f64,
        requested: f64,
        total: f64,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
