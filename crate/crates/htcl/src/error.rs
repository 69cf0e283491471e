use std::path::PathBuf;

use serde_json::{json, Value};

#[derive(Debug, thiserror::Error)]
pub enum HtclError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{}: {source}", path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{0}")]
    Core(#[from] htcl_core::Error),
    /// A file parsed but its content is unusable.
    #[error("{}: {reason}", path.display())]
    Format { path: PathBuf, reason: String },
    #[error("invalid argument `{arg}`: {reason}")]
    Usage { arg: String, reason: String },
    /// A run finished but its result is a failure, e.g. a failing gradient check.
    #[error("{0}")]
    Failed(String),
}

pub type Result<T, E = HtclError> = std::result::Result<T, E>;

impl HtclError {
    pub fn kind(&self) -> &'static str {
        match self {
            HtclError::Io { .. } => "io",
            HtclError::Json { .. } => "json",
            HtclError::Csv { .. } => "csv",
            HtclError::Core(htcl_core::Error::InvalidConfig { .. }) => "invalid_config",
            HtclError::Core(htcl_core::Error::InvalidScene { .. }) => "invalid_scene",
            HtclError::Core(_) => "core",
            HtclError::Format { .. } => "format",
            HtclError::Usage { .. } => "usage",
            HtclError::Failed(_) => "failed",
        }
    }

    /// Machine-readable description, including the offending field where
    /// one is known.
    pub fn to_json(&self) -> Value {
        let mut v = json!({ "kind": self.kind(), "message": self.to_string() });
        match self {
            HtclError::Io { path, .. } | HtclError::Format { path, .. } | HtclError::Csv { path, .. } => {
                v["path"] = json!(path);
            }
            HtclError::Json { path, source } => {
                v["path"] = json!(path);
                v["line"] = json!(source.line());
                v["column"] = json!(source.column());
            }
            HtclError::Core(htcl_core::Error::InvalidConfig { field, .. }) => v["field"] = json!(field),
            HtclError::Core(htcl_core::Error::InvalidScene { image_id, path, .. }) => {
                v["image_id"] = json!(image_id);
                v["field"] = json!(path);
            }
            HtclError::Usage { arg, .. } => v["field"] = json!(arg),
            HtclError::Core(_) | HtclError::Failed(_) => {}
        }
        v
    }
}
