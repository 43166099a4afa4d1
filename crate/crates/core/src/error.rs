use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CpdError {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("mode {mode} out of range for order-{order} tensor")]
    ModeOutOfRange { mode: usize, order: usize },

    #[error("tensor has zero Frobenius norm")]
    ZeroNorm,

    #[error("preconditioner for mode {mode} is singular")]
    SingularPreconditioner { mode: usize },

    #[error("barrier system for mode {mode} is singular at row {row}")]
    SingularRow { mode: usize, row: usize },

    #[error("barrier domain violated: {0}")]
    Domain(String),

    #[error("non-finite state at iteration {iter}")]
    Divergence { iter: usize },

    #[error("barrier step stalled at the boundary after {halvings} halvings (iteration {iter})")]
    BoundaryStall { iter: usize, halvings: usize },

    #[error("line search stalled on block {block} at iteration {iter}")]
    Stall { iter: usize, block: usize },

    #[error("clamped coordinate {index} of factor {mode} has zero gradient")]
    Inconsistent { mode: usize, index: usize },

    #[error("state is already at an equilibrium")]
    Equilibrium,

    #[error("infeasible request: {0}")]
    Infeasible(String),

    #[error("unknown problem kind `{0}`")]
    UnknownKind(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for CpdError {
    fn from(e: std::io::Error) -> Self {
        CpdError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CpdError>;
