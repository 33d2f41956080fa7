use thiserror::Error;

pub type Result<T, E = KaeError> = std::result::Result<T, E>;

/// Which class of failure an error belongs to. The CLI maps these onto
/// its exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numeric,
}

#[derive(Debug, Error)]
pub enum KaeError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {op} (node {node})")]
    NonFinite { op: &'static str, node: usize },

    #[error("graph error: {0}")]
    Graph(String),

    #[error("matrix is singular to tolerance (pivot {pivot:e} at column {column})")]
    Singular { pivot: f64, column: usize },

    #[error("eigenvalue iteration did not converge")]
    NoConvergence,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("rollout produced a non-finite state at step {step}")]
    RolloutDiverged { step: usize },

    #[error("non-finite gradient for parameter `{param}`")]
    NonFiniteGradient { param: String },

    #[error("non-finite loss at epoch {epoch}, batch {batch} (window starts {starts:?})")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        starts: Vec<(usize, usize)>,
    },

    #[error(
        "gradient check failed for `{param}`: relative error {error:e} > tolerance {tolerance:e}"
    )]
    GradCheck {
        param: String,
        error: f64,
        tolerance: f64,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("bad magic bytes: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {found} (this build reads up to {supported})")]
    Version { found: u32, supported: u32 },

    #[error("truncated file: needed {needed} bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },

    #[error("checksum mismatch in {section} (data at byte offset {offset}): stored {stored:#018x}, computed {computed:#018x}")]
    Checksum {
        section: String,
        offset: usize,
        stored: u64,
        computed: u64,
    },

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl KaeError {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        KaeError::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub fn class(&self) -> ErrorClass {
        use KaeError::*;
        match self {
            Config(_) | InvalidArgument(_) => ErrorClass::Config,
            BadMagic { .. }
            | Version { .. }
            | Truncated { .. }
            | Checksum { .. }
            | Format(_)
            | Io(_)
            | Csv(_) => ErrorClass::Data,
            Shape { .. }
            | NonFinite { .. }
            | Graph(_)
            | Singular { .. }
            | NoConvergence
            | RolloutDiverged { .. }
            | NonFiniteGradient { .. }
            | NonFiniteLoss { .. }
            | GradCheck { .. } => ErrorClass::Numeric,
        }
    }
}

impl From<toml::de::Error> for KaeError {
    fn from(e: toml::de::Error) -> Self {
        KaeError::Config(e.to_string())
    }
}

impl From<toml::ser::Error> for KaeError {
    fn from(e: toml::ser::Error) -> Self {
        KaeError::Config(e.to_string())
    }
}
