use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Operand shapes are not conformable for the named op.
    Shape { op: &'static str, detail: String },
    /// `backward` was called on a tape that has already been differentiated.
    BackwardTwice,
    /// Two evaluations of the same function at the same point differed.
    NonDeterministic { param: String, index: usize },
    UnknownParam(String),
    InvalidConfig { field: &'static str, reason: String },
    /// A scene violates a dataset invariant; `path` locates the field.
    InvalidScene { image_id: u64, path: String, reason: String },
    EmptySplit,
    /// Training produced a non-finite loss.
    Diverged { epoch: usize, step: usize },
    /// Mismatch between models or reports that must share a class layout.
    Mismatch(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape { op, detail } => write!(f, "shape mismatch in {op}: {detail}"),
            Error::BackwardTwice => write!(f, "backward called twice on the same tape"),
            Error::NonDeterministic { param, index } => write!(
                f,
                "function is not deterministic (evaluations differ at {param}[{index}])"
            ),
            Error::UnknownParam(name) => write!(f, "unknown parameter `{name}`"),
            Error::InvalidConfig { field, reason } => write!(f, "invalid config `{field}`: {reason}"),
            Error::InvalidScene { image_id, path, reason } => {
                write!(f, "image {image_id}: {path}: {reason}")
            }
            Error::EmptySplit => write!(f, "split contains no relations"),
            Error::Diverged { epoch, step } => {
                write!(f, "loss became non-finite at epoch {epoch}, step {step}")
            }
            Error::Mismatch(msg) => write!(f, "mismatch: {msg}"),
        }
    }
}

impl core::error::Error for Error {}

pub(crate) fn shape_err<T>(op: &'static str, detail: String) -> Result<T> {
    Err(Error::Shape { op, detail })
}
