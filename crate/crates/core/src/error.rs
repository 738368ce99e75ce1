use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("network model error: {0}")]
    Model(String),

    #[error("Kron reduction failed: eliminated block is singular (nodes: {nodes:?})")]
    SingularReduction { nodes: Vec<String> },

    #[error("virtual impedance augmentation failed: (I + Y_c z_v) is singular")]
    SingularAugmentation,

    #[error("terminal solve did not converge after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("linear solve failed: {0}")]
    Singular(String),

    #[error("event error: {0}")]
    Event(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("precondition not met: {0}")]
    Applicability(String),

    #[error("simulation aborted at t = {time:.6} s: {source}")]
    Simulation {
        time: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("input error: {0}")]
    Input(String),

    #[error("scenario error at {pointer}: {message}")]
    Schema { pointer: String, message: String },

    #[error("unresolved reference: {0}")]
    Reference(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
