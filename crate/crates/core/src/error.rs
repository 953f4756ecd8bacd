use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Rotation polynomial evaluated to a quaternion with norm below 1e-12.
    #[error("degenerate rotation for primitive {index}: |q(t)| = {norm:.3e} at t = {t}")]
    DegenerateRotation { index: usize, t: f64, norm: f64 },

    /// Opacity compensation requested for a primitive whose temporal opacity
    /// at the anchor frame is at or below the cull threshold.
    #[error("primitive {index} inactive at t = {t}: sigma_tau = {value:.3e} <= 1e-6")]
    InactivePrimitive { index: usize, t: f64, value: f64 },

    /// A render/backward request that violates its contract (bad group and
    /// channel pairing, compensation off the anchor frame, upstream shape...).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// Structured-file parse failure with the offending path.
    #[error("malformed {what} file {path}: {detail}")]
    Format {
        what: &'static str,
        path: PathBuf,
        detail: String,
    },

    /// Dataset directory missing a required entry or internally inconsistent.
    #[error("dataset {path}: {detail}")]
    Dataset { path: PathBuf, detail: String },

    /// Training aborted on a non-finite loss term.
    #[error("non-finite loss at iter {iter}: term `{term}` = {value}")]
    NonFiniteLoss {
        iter: u32,
        term: &'static str,
        value: f64,
    },

    /// Metric over an empty pixel set.
    #[error("empty evaluation mask ({context})")]
    EmptyMask { context: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("image error on {path}: {detail}")]
    Image { path: PathBuf, detail: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(what: &'static str, path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            path: path.into(),
            detail: detail.into(),
        }
    }

    pub fn dataset(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Dataset {
            path: path.into(),
            detail: detail.into(),
        }
    }
}
