//! File formats, run management and the `ugan` command line around
//! [`ugan_core`].
//!
//! - [`idx`]: digit IDX files
//! - [`pgm`]: binary PGM images
//! - [`config`]: TOML run configuration
//! - [`datasets`]: labeled, unlabeled, validation and test sets from a config
//! - [`metrics`]: metrics CSV and run summaries
//! - [`checkpoint`]: binary checkpoints
//! - [`run`]: run directories, training and resuming
//! - [`cli`]: subcommand dispatch

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod datasets;
pub mod error;
pub mod idx;
pub mod metrics;
pub mod pgm;
pub mod run;

pub use error::{LabError, Result};
