use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported ROM dimension {0}; expected 2 or 3")]
    UnsupportedDimension(usize),

    #[error("degenerate CoM height {height:.6} m (guard requires |y_v| >= {min} m)")]
    DegenerateHeight { height: f64, min: f64 },

    #[error("parameter vector has length {got}, expected {expected}")]
    ParameterLength { got: usize, expected: usize },

    #[error("singular system: {0}")]
    Singular(&'static str),

    #[error("simulation diverged at t = {t:.4} s")]
    SimulationDiverged { t: f64 },

    #[error("QP solver failed after {iterations} iterations: {reason}")]
    Qp { iterations: usize, reason: String },

    #[error("non-finite fitness {value} at sample index {index}")]
    NonFiniteFitness { index: usize, value: f64 },

    #[error("sample count mismatch: {samples} samples, {fitnesses} fitnesses, population {popsize}")]
    PopulationMismatch {
        samples: usize,
        fitnesses: usize,
        popsize: usize,
    },

    #[error("invalid value for `{field}`: {message}")]
    InvalidConfig { field: String, message: String },

    #[error("evaluation failed for sample {sample}, task {task}: {message}")]
    Evaluation {
        sample: usize,
        task: usize,
        message: String,
    },

    #[error("checkpoint config hash {found} does not match active config {expected}")]
    ConfigMismatch { expected: String, found: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            message: message.into(),
        }
    }
}
