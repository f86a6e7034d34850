use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied value violates a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The half-space constraint cannot be satisfied by any command:
    /// the barrier gradient is numerically zero while the constraint is
    /// violated.
    #[error("safety constraint infeasible: zero barrier gradient while violated")]
    InfeasibleConstraint,

    /// Minimal deadlock resolution is not unique: all agents move at
    /// identical speeds and no priority order was supplied.
    #[error("deadlock resolution ambiguous: identical speeds and no priority order")]
    AmbiguousResolution,

    /// Rigid-body integration produced a non-orientable rotation matrix.
    #[error("integration failure: rotation determinant not positive")]
    IntegrationFailure,

    /// A simulation state stopped being finite.
    #[error("simulation diverged at cycle {cycle}: non-finite state")]
    Diverged { cycle: u32 },

    /// Configuration rejected; one message per offending field path.
    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
