use thiserror::Error;

/// Errors raised by the numerical engines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("velocity escaped the working box: |v| = {speed} > v_max = {v_max} at t = {t}")]
    VelocityEscape { speed: f64, v_max: f64, t: f64 },

    #[error("every minimizer of the step at slice {slice} sits on the velocity box boundary")]
    BoxSaturation { slice: usize },

    #[error("{what} did not converge: {detail}")]
    NotConverged { what: &'static str, detail: String },

    #[error("no node has diagonal barrier <= {eps_a}")]
    EmptyAubry { eps_a: f64 },

    #[error("linear program is infeasible (phase one residual {residual:e})")]
    Infeasible { residual: f64 },

    #[error("linear program is unbounded along column {column}")]
    Unbounded { column: usize },

    #[error("no horizon n <= {n_hi} satisfies the barrier condition for eps = {eps}")]
    WindowExhausted { eps: f64, n_hi: usize },

    #[error("one-form support meets the dilated Aubry estimate at {nodes} node(s)")]
    SupportOverlap { nodes: usize },

    #[error("mollified field violates the subsolution inequality: max defect {max_defect:e} > {tol:e}")]
    MollificationTooCoarse { max_defect: f64, tol: f64 },

    #[error("configuration error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
