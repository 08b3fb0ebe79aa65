use thiserror::Error;

/// Failure modes shared by every solver in the crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("unsupported kernel variant: {0}")]
    Unsupported(String),
    #[error("ill-conditioned system: {0}")]
    IllConditioned(String),
    #[error("step size too large: {0}; refine the grid")]
    StepSize(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("contour inversion diverged: {0}")]
    Divergence(String),
    #[error("pole of the transform at s = {0}")]
    Pole(String),
    #[error("inconsistent data: {0}")]
    Inconsistent(String),
    #[error("observability lost: {0}")]
    Observability(String),
    #[error("model order: {0}")]
    ModelOrder(String),
    #[error("mode {mode}: {source}")]
    Mode { mode: usize, source: Box<Error> },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn in_mode(self, mode: usize) -> Self {
        Error::Mode {
            mode,
            source: Box::new(self),
        }
    }
}
