use std::path::PathBuf;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed binary scan or label file.
    #[error("{path}: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error("label count {labels} does not match point count {points}")]
    LabelCountMismatch { labels: usize, points: usize },

    #[error("ontology map {path}, line {line}: {detail}")]
    Ontology {
        path: PathBuf,
        line: usize,
        detail: String,
    },

    #[error("scan is empty")]
    EmptyScan,

    #[error("expected a unit vector, got norm {norm}")]
    NonUnitVector { norm: f64 },

    #[error("point at sensor origin has no beam direction")]
    ZeroRange,

    #[error("range {range} m outside gate [{r_min}, {r_max}] m")]
    OutOfGate { range: f64, r_min: f64, r_max: f64 },

    #[error("incidence angle {alpha_deg:.2} deg exceeds maximum {max_deg:.2} deg")]
    GrazingAngle { alpha_deg: f64, max_deg: f64 },

    #[error("scan has sensor tag {found}, expected {expected}: {hint}")]
    WrongSensor {
        expected: &'static str,
        found: &'static str,
        hint: &'static str,
    },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("model is corrupt: {0}")]
    ModelCorrupt(String),

    #[error("training diverged (non-finite loss) at epoch {epoch}")]
    TrainingDiverged { epoch: usize },

    #[error("model file {path}: {detail}")]
    ModelFormat { path: PathBuf, detail: String },

    #[error("transfer fit rejected: {0}")]
    FitRejected(String),

    #[error("range {range} m outside transfer-curve domain [{lo}, {hi}] m")]
    OutOfCurveDomain { range: f64, lo: f64, hi: f64 },

    #[error("no point of the scan falls inside the transfer-curve domain")]
    EmptyDomainIntersection,

    #[error("confusion matrix holds no scored points")]
    EmptyReport,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("config file {path}, line {line}: {detail}")]
    ConfigParse {
        path: PathBuf,
        line: usize,
        detail: String,
    },

    #[error("scene spec line {line}: {detail}")]
    SceneSpec { line: usize, detail: String },
}

impl Error {
    /// True when the error stems from user-supplied input (files, configs,
    /// insufficient data) rather than an internal failure. The CLI maps
    /// these to exit code 2.
    pub fn is_user_error(&self) -> bool {
        !matches!(self, Error::Io { .. })
    }
}
