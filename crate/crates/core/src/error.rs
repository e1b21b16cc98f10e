use num_complex::Complex64 as C64;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the library can report.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("jet order {requested} exceeds the supported maximum {max}")]
    OrderExceeded { requested: usize, max: usize },

    #[error("reciprocal of a jet whose value {0:e} is too close to zero")]
    NearZeroReciprocal(f64),

    #[error("linear part is singular at w = {point:?} (condition number {condition:e})")]
    SingularLinearPart { point: Vec<[f64; 2]>, condition: f64 },

    #[error(
        "fixed-point iteration failed after {iterations} steps \
         (contraction estimate {contraction_est:e}, last step {last_step:e})"
    )]
    NonContraction { iterations: usize, contraction_est: f64, last_step: f64 },

    #[error("inner solve of the generating-function step did not converge (last step {last_step:e})")]
    StepTooLarge { last_step: f64 },

    #[error("frequency {frequency:e} at energy {energy} is too small to define a period")]
    DegenerateFrequency { energy: f64, frequency: f64 },

    #[error("not applicable: {0}")]
    Inapplicable(String),

    #[error("assumption violated: {0}")]
    AssumptionViolated(String),

    #[error("unknown system `{0}`")]
    UnknownSystem(String),

    #[error("quantity `{quantity}` is not available for system `{system}`")]
    UnavailableQuantity { system: String, quantity: String },

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("level {level}, w = {point:?}: {source}")]
    Located { level: usize, point: Vec<[f64; 2]>, source: Box<Error> },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn dims(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }

    /// Attach the refinement level and evaluation point.
    pub fn at(self, level: usize, point: &[C64]) -> Self {
        match self {
            e @ Error::Located { .. } => e,
            e => Error::Located { level, point: to_pairs(point), source: Box::new(e) },
        }
    }

    /// Strip location wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Located { source, .. } => source.root(),
            e => e,
        }
    }
}

pub(crate) fn to_pairs(p: &[C64]) -> Vec<[f64; 2]> {
    p.iter().map(|c| [c.re, c.im]).collect()
}
