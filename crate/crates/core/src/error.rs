use alloc::string::String;

/// Errors raised anywhere in the core crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdentifier { name: String, offset: usize },
    #[error("function `{name}` takes {expected} argument(s), found {found}")]
    Arity {
        name: String,
        expected: usize,
        found: usize,
    },
    #[error("unbound variable `{0}`")]
    UnboundVariable(String),
    #[error("evaluation fault: `{expr}` is not finite at {point}")]
    EvalFault { expr: String, point: String },
    #[error("{what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: String,
        expected: usize,
        found: usize,
    },
    #[error("`{field}` references undeclared variable `{name}`")]
    UndeclaredVariable { field: String, name: String },
    #[error("invalid action grid: {0}")]
    ActionGrid(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("degenerate spatial grid: {0}")]
    DegenerateGrid(String),
    #[error("time step {dt} violates the stability limit {limit}")]
    CflViolation { dt: f64, limit: f64 },
    #[error("diffusion is not diagonally dominant at node {node}; the scheme would not be monotone")]
    NonMonotone { node: usize },
    #[error("non-finite value at time level {level} (t = {time})")]
    NonFinite { level: usize, time: f64 },
    #[error("query outside the value-function domain: {0}")]
    OutOfDomain(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("transition probabilities {probs:?} invalid at node {node}, u#{u}, v#{v}: {hint}")]
    Probability {
        node: usize,
        u: usize,
        v: usize,
        probs: [f64; 3],
        hint: String,
    },
    #[error("path fault at step {step}: {reason}")]
    PathFault { step: usize, reason: String },
    #[error("unsupported: {0}")]
    Unsupported(String),
}

pub type Result<T> = core::result::Result<T, Error>;
