use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Operand shapes disagree.
    Shape {
        context: &'static str,
        expected: usize,
        found: usize,
    },
    /// Input width does not match the in-dimension of a layer.
    LayerInput {
        layer: usize,
        expected: usize,
        found: usize,
    },
    LabelOutOfRange {
        label: usize,
        num_classes: usize,
    },
    /// A public operation produced or received a NaN/Inf.
    NonFinite(String),
    /// Training loss became non-finite.
    Divergence {
        epoch: usize,
    },
    StaleCache,
    MissingEmbedding(String),
    UnknownKind(String),
    InvalidConfig(String),
    /// Input data does not meet an operation's preconditions.
    Degenerate(String),
    FingerprintMismatch {
        expected: u64,
        found: u64,
    },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape {
                context,
                expected,
                found,
            } => write!(f, "{context}: expected dimension {expected}, found {found}"),
            Error::LayerInput { layer, expected, found } => {
                write!(f, "layer {layer}: expected input width {expected}, found {found}")
            }
            Error::LabelOutOfRange { label, num_classes } => {
                write!(f, "label {label} out of range for {num_classes} classes")
            }
            Error::NonFinite(what) => write!(f, "non-finite value in {what}"),
            Error::Divergence { epoch } => write!(f, "training diverged at epoch {epoch}"),
            Error::StaleCache => write!(f, "forward cache does not belong to current parameters"),
            Error::MissingEmbedding(id) => write!(f, "missing embedding for {id}"),
            Error::UnknownKind(kind) => write!(f, "unknown kind `{kind}`"),
            Error::InvalidConfig(msg) => write!(f, "invalid configuration: {msg}"),
            Error::Degenerate(msg) => write!(f, "degenerate input: {msg}"),
            Error::FingerprintMismatch { expected, found } => {
                write!(f, "fingerprint mismatch: expected {expected:016x}, found {found:016x}")
            }
        }
    }
}

impl core::error::Error for Error {}
