use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// A numeric argument fell outside its valid domain.
    #[error("{what} must be {expected}, got {value}")]
    Domain {
        what: &'static str,
        expected: &'static str,
        value: f64,
    },

    /// A box footprint or volume is too small to compute an IoU with.
    #[error("degenerate box: {0}")]
    DegenerateBox(String),

    #[error("interval lower bound {lo} exceeds upper bound {hi}")]
    InvalidInterval { lo: f64, hi: f64 },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    /// Gradient descent produced a non-finite loss.
    #[error("optimization diverged at step {step} (loss = {loss})")]
    Divergence { step: usize, loss: f64 },

    #[error("task graph contains a cycle through `{0}`")]
    CycleDetected(String),

    #[error("unknown task `{0}`")]
    UnknownTask(String),

    #[error("scene generation exhausted its rejection budget: placed {achieved} of {requested} objects")]
    SceneBudget { achieved: usize, requested: usize },

    /// A KITTI record could not be parsed. `column` is zero-based.
    #[error("line {line}, column {column} ({name}): {message}")]
    Parse {
        line: usize,
        column: usize,
        name: &'static str,
        message: String,
    },

    #[error("calibration row `{0}` not found")]
    MissingCalibRow(String),

    #[error("malformed calibration row `{row}`: {message}")]
    MalformedCalib { row: String, message: String },

    #[error("schema violation: {0}")]
    Schema(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable tag, used in CLI error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain { .. } => "domain",
            Error::DegenerateBox(_) => "degenerate_box",
            Error::InvalidInterval { .. } => "invalid_interval",
            Error::LengthMismatch { .. } => "length_mismatch",
            Error::EmptyInput(_) => "empty_input",
            Error::Divergence { .. } => "divergence",
            Error::CycleDetected(_) => "cycle_detected",
            Error::UnknownTask(_) => "unknown_task",
            Error::SceneBudget { .. } => "scene_budget",
            Error::Parse { .. } => "parse",
            Error::MissingCalibRow(_) => "missing_calib_row",
            Error::MalformedCalib { .. } => "malformed_calib",
            Error::Schema(_) => "schema",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn require_positive(what: &'static str, value: f64) -> Result<f64> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Domain {
            what,
            expected: "positive and finite",
            value,
        })
    }
}

pub(crate) fn require_non_negative(what: &'static str, value: f64) -> Result<f64> {
    if value >= 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Domain {
            what,
            expected: "non-negative and finite",
            value,
        })
    }
}

pub(crate) fn require_probability(what: &'static str, value: f64) -> Result<f64> {
    if (0.0..=1.0).contains(&value) {
        Ok(value)
    } else {
        Err(Error::Domain {
            what,
            expected: "a probability in [0, 1]",
            value,
        })
    }
}
