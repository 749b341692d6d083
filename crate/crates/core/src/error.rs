//! Error type shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Everything that can go wrong in the library.
///
/// Variants map onto the CLI exit-code contract: input and domain problems are
/// ordinary errors (exit 1), while [`Error::Divergence`] marks a numerical
/// failure that still carries the best point seen (exit 2).
#[derive(Debug, Error)]
pub enum Error {
    /// A value violated a mathematical precondition.
    #[error("domain error: {0}")]
    Domain(String),

    /// A direction had no bias entry while strict bias mode was on.
    #[error("missing bias for direction `{0}` in strict mode")]
    MissingBias(String),

    /// Too few observations or distinct abscissae for the requested fit.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// The regression has fewer informative series than unknowns.
    #[error("identifiability error: {0}")]
    Identifiability(String),

    /// r-squared is undefined on constant observations.
    #[error("r-squared undefined: observed losses are constant")]
    UndefinedRSquared,

    /// Vectors that must align by direction do not.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// An operation that needs data received none.
    #[error("{0}")]
    EmptyInput(String),

    /// The solver produced non-finite residuals; `best` is the best feasible
    /// point seen before the failure.
    #[error("solver diverged: {message}")]
    Divergence { message: String, best: Vec<f64> },

    /// The floored simplex is empty for the requested floor.
    #[error("infeasible floor: {floor} * {n} directions >= 1")]
    InfeasibleFloor { floor: f64, n: usize },

    /// A brute-force verifier was asked for more than its documented budget.
    #[error("budget exceeded: {0}")]
    BudgetExceeded(String),

    /// A textual input failed to parse; `line` is 1-based and counts the
    /// header.
    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    /// Wrapped fitting-step failure with the step attached.
    #[error("fit step `{step}` failed: {source}")]
    FitStep {
        step: &'static str,
        #[source]
        source: Box<Error>,
    },

    /// Unknown preset label; `available` lists what would have worked.
    #[error("unknown preset `{label}`; available: {}", available.join(", "))]
    UnknownPreset { label: String, available: Vec<String> },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Convenience constructor for [`Error::Domain`].
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// Attaches a fitting step name to an error, as `fit_full` reports them.
    pub fn in_step(self, step: &'static str) -> Self {
        Error::FitStep {
            step,
            source: Box::new(self),
        }
    }
}
