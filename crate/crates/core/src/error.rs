use thiserror::Error;

use crate::learner::IterationRecord;

/// Errors raised anywhere in the pipeline. Variants are grouped by the stage
/// that produced them so front-ends can tag diagnostics.
#[derive(Debug, Error)]
pub enum SpiError {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("vector length {0} is not triangular (a(a+1)/2 for an integer a)")]
    NotTriangular(usize),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("eigenvalue computation did not converge")]
    EigenFailure,

    #[error("root {re}{im:+}i has modulus {modulus} >= 1")]
    UnstableRoot { re: f64, im: f64, modulus: f64 },

    #[error("complex root {re}{im:+}i has no conjugate partner")]
    UnpairedRoot { re: f64, im: f64 },

    #[error("invalid excitation: {0}")]
    Excitation(String),

    #[error("invalid experiment log: {0}")]
    Log(String),

    #[error(
        "rank condition failed: achieved rank {achieved} of required {required} \
         ({rows} sample rows, at least {min_rows} needed)"
    )]
    RankCondition {
        achieved: usize,
        required: usize,
        rows: usize,
        min_rows: usize,
    },

    #[error("cumulative coefficient must be positive, got {0}")]
    NonPositiveCoefficient(f64),

    #[error(
        "regression matrix is rank deficient: rank {rank} of {unknowns} unknowns \
         (gap {gap}); the data are not exciting enough"
    )]
    RankDeficient {
        rank: usize,
        unknowns: usize,
        gap: usize,
    },

    #[error("R + c^2 Y2 is singular; the policy evaluation is corrupted")]
    SingularImprovement,

    #[error("step-size premise violated at sample k={k}: Pi(k) = {pi} <= 0")]
    NonPositivePi { k: usize, pi: f64 },

    #[error("no informative samples (all reconstruction states are ~0)")]
    NoInformativeSamples,

    #[error("no stable compression found: value positivity failed for every beta in {tried:?}")]
    NoStableCompression { tried: Vec<f64> },

    #[error("iteration cap of {cap} reached with c = {c} < 1")]
    MaxIterations {
        cap: usize,
        c: f64,
        history: Vec<IterationRecord>,
    },

    #[error("matrix is not Schur: spectral radius {0} >= 1")]
    NotSchur(f64),

    #[error("linear system is singular in {0}")]
    Singular(&'static str),

    #[error("step-size {alpha} violates 0 < alpha < {upper} (model-based bound)")]
    StepSizeBound { alpha: f64, upper: f64 },

    #[error("parameterization fit failed: {0}")]
    Parameterization(String),

    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Config(Vec<String>),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("toml parse error: {0}")]
    TomlDe(#[from] toml::de::Error),

    #[error("toml write error: {0}")]
    TomlSer(#[from] toml::ser::Error),
}

impl SpiError {
    pub(crate) fn dim(
        context: &'static str,
        expected: impl ToString,
        actual: impl ToString,
    ) -> Self {
        SpiError::Dimension {
            context,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    /// Pipeline stage tag used in CLI diagnostics.
    pub fn stage(&self) -> &'static str {
        match self {
            SpiError::Dimension { .. }
            | SpiError::NotSquare { .. }
            | SpiError::NotTriangular(_)
            | SpiError::NonFinite(_) => "input",
            SpiError::EigenFailure | SpiError::NotSchur(_) | SpiError::Singular(_) => "linalg",
            SpiError::UnstableRoot { .. } | SpiError::UnpairedRoot { .. } => "reconstruction",
            SpiError::Excitation(_) | SpiError::Log(_) | SpiError::RankCondition { .. } => {
                "collect"
            }
            SpiError::NonPositiveCoefficient(_)
            | SpiError::RankDeficient { .. }
            | SpiError::SingularImprovement
            | SpiError::NonPositivePi { .. }
            | SpiError::NoInformativeSamples
            | SpiError::NoStableCompression { .. }
            | SpiError::MaxIterations { .. } => "learn",
            SpiError::StepSizeBound { .. } | SpiError::Parameterization(_) => "verify",
            SpiError::Config(_) | SpiError::TomlDe(_) | SpiError::TomlSer(_) => "config",
            SpiError::Io(_) | SpiError::Csv(_) | SpiError::Json(_) => "output",
        }
    }
}

pub type Result<T, E = SpiError> = std::result::Result<T, E>;
