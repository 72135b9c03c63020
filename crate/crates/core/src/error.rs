use thiserror::Error;

#[derive(Debug, Error)]
pub enum CilcError {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("plant matrix is singular (sigma_min = {sigma_min:e}, sigma_max = {sigma_max:e})")]
    SingularPlant { sigma_min: f64, sigma_max: f64 },

    #[error("collective has no agents")]
    EmptyCollective,

    #[error("agent ids must be exactly 1..={expected_max}; found id {found}")]
    InvalidAgentIds { expected_max: usize, found: usize },

    #[error("operation requires N = {required}, got N = {actual}")]
    UnsupportedDimension { required: usize, actual: usize },

    #[error("norm-optimal synthesis is ill-posed: {0}")]
    IllPosed(String),

    #[error("invalid weights (s = {s}, r = {r}): both must be finite and non-negative")]
    InvalidWeights { s: f64, r: f64 },

    #[error("pair (A, B) is not controllable (controllability rank {rank} < {dim})")]
    Uncontrollable { rank: usize, dim: usize },

    #[error("bad pole set: {0}")]
    BadPoleSet(String),

    #[error("invalid TWIPR parameter `{field}`: {reason}")]
    InvalidParams { field: &'static str, reason: String },

    #[error("numerical blowup{} at sample {sample}: pitch {pitch_deg:.2} deg exceeds guard", .trial.map(|t| format!(" in trial {t}")).unwrap_or_default())]
    NumericalBlowup {
        trial: Option<usize>,
        sample: usize,
        pitch_deg: f64,
    },

    #[error("best-performer sequence too short: need {needed} entries, have {available}")]
    SequenceTooShort { needed: usize, available: usize },

    #[error("topology is not strongly connected: no path from agent {from} to agent {to}")]
    NotStronglyConnected { from: usize, to: usize },

    #[error("invalid topology: {0}")]
    InvalidTopology(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl CilcError {
    pub(crate) fn dims(context: &'static str, expected: usize, actual: usize) -> Self {
        CilcError::DimensionMismatch {
            context,
            expected,
            actual,
        }
    }

    /// Attach the trial index to a blowup raised inside a trial simulation.
    pub fn at_trial(self, trial: usize) -> Self {
        match self {
            CilcError::NumericalBlowup {
                sample, pitch_deg, ..
            } => CilcError::NumericalBlowup {
                trial: Some(trial),
                sample,
                pitch_deg,
            },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, CilcError>;
