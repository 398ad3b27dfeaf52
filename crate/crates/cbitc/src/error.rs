use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// No placement of the requested number of terrestrial UEs satisfies the
    /// ICIC separation rule within the attempt budget.
    #[error("UE packing infeasible: {0}")]
    PackingInfeasible(String),

    /// The available-BS set is empty.
    #[error("no available BS can serve the UAV")]
    NoServer,

    /// A channel amplitude required to be positive is zero.
    #[error("degenerate channel: {0}")]
    DegenerateChannel(String),

    /// The cooperation size violates the M >= q + 1 requirement.
    #[error("cooperation size {m} must exceed the ICIC tier {q}")]
    CooperationSize { m: usize, q: usize },

    /// The cone solver stopped without an optimality certificate.
    #[error("cone solver failed: {0}")]
    SolverFailure(String),

    /// The recovered scaling variable of a cone solution is too small to
    /// invert.
    #[error("degenerate cone solution: {0}")]
    DegenerateSolution(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
