//! Filesystem side of the head-tail cooperative classifier: dataset and
//! prediction JSON, checkpoints, CSV reports, run manifests and the `htcl`
//! command line. The algorithms live in `htcl-core`.

pub mod checkpoint;
pub mod cli;
pub mod error;
pub mod experiment;
pub mod io;
pub mod manifest;

pub use error::{HtclError, Result};
