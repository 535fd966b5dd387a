use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("lexicon header is missing mapped column `{0}`")]
    MissingColumn(String),

    #[error("lexicon {0} has no valid rows")]
    ZeroValidRows(PathBuf),

    #[error("duplicate lemma `{lemma}` in {side}")]
    DuplicateLemma { lemma: String, side: &'static str },

    #[error("unknown class name `{0}`")]
    UnknownClass(String),

    #[error("unknown label `{label}` for class {class}")]
    UnknownLabel { class: String, label: String },

    #[error("malformed keypoint file: {0}")]
    MalformedKeypoints(String),

    #[error("wrong joint count: expected {expected}, found {found} (frame {frame:?})")]
    WrongJointCount {
        expected: usize,
        found: usize,
        frame: Option<usize>,
    },

    #[error("non-finite coordinate at frame {frame}, joint {joint}, axis {axis}")]
    NonFiniteCoordinate { frame: usize, joint: usize, axis: usize },

    #[error("sequence has no frames")]
    EmptySequence,

    #[error("cannot stratify: class `{class}` has {count} sample(s)")]
    CannotStratify { class: String, count: usize },

    #[error("degenerate pose: {0}")]
    DegeneratePose(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("missing input {0}")]
    MissingInput(PathBuf),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("run with seed {seed} failed: {source}")]
    Seed {
        seed: u64,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// A missing file becomes [`Error::MissingInput`]; anything else stays an
    /// i/o error.
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            return Error::MissingInput(path);
        }
        Error::Io { path, source }
    }

    /// Stable machine-readable identifier, used in the CLI's error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
            Error::MissingColumn(_) => "missing_column",
            Error::ZeroValidRows(_) => "zero_valid_rows",
            Error::DuplicateLemma { .. } => "duplicate_lemma",
            Error::UnknownClass(_) => "unknown_class",
            Error::UnknownLabel { .. } => "unknown_label",
            Error::MalformedKeypoints(_) => "malformed_json",
            Error::WrongJointCount { .. } => "wrong_joint_count",
            Error::NonFiniteCoordinate { .. } => "non_finite_coordinate",
            Error::EmptySequence => "empty_sequence",
            Error::CannotStratify { .. } => "cannot_stratify",
            Error::DegeneratePose(_) => "degenerate_pose",
            Error::ShapeMismatch(_) => "shape_mismatch",
            Error::NonFinite(_) => "non_finite",
            Error::Numerical(_) => "numerical_failure",
            Error::InvalidInput(_) => "invalid_input",
            Error::MissingInput(_) => "missing_input",
            Error::Config(_) => "invalid_config",
            Error::Seed { .. } => "seed_run_failed",
        }
    }
}
