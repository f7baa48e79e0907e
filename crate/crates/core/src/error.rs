use std::fmt;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Input data violates a documented invariant (negative weight, bad id, ...).
    #[error("invalid data: {0}")]
    Validation(String),

    /// A caller-supplied parameter is out of range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{count} vertices have no cluster assignment (first: {})", .sample.join(", "))]
    Unassigned { count: usize, sample: Vec<String> },

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("undefined ratio: denominator {0:e} is too close to zero")]
    UndefinedRatio(f64),

    #[error("configuration conflict: {0}")]
    Conflict(String),

    #[error("unknown {kind} `{name}`")]
    Unknown { kind: &'static str, name: String },

    #[error("refusing to refresh universe `{universe}`: experiment `{experiment}` is running")]
    RunningExperiment { universe: String, experiment: String },

    #[error("evaluation aborted: {0}")]
    Aborted(AbortDiagnostics),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Why a Monte-Carlo evaluation gave up.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct AbortDiagnostics {
    pub replicates: usize,
    pub failures: usize,
    pub max_failure_fraction: f64,
    /// First few distinct failure reasons, in replicate order.
    pub reasons: Vec<String>,
}

impl fmt::Display for AbortDiagnostics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} of {} replicates failed (limit {:.1}%)",
            self.failures,
            self.replicates,
            100.0 * self.max_failure_fraction
        )?;
        if !self.reasons.is_empty() {
            write!(f, ": {}", self.reasons.join("; "))?;
        }
        Ok(())
    }
}
