//! File formats, the reproducible artifact pipeline and the `lanekit`
//! command line, built on [`lanekit_core`].
//!
//! Exit codes: 0 success, 1 validation failure (a JSON error report is
//! printed on stderr), 2 usage error, 3 missing upstream artifact.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod error;
pub mod io;
pub mod pipeline;

pub use config::RunConfig;
pub use error::{CliError, Result};
