//! Std companion to `replaylab-core`: file formats, checkpoints, configs, SVG output,
//! the experiment pipeline and the command-line front end.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub use replaylab_core as core;

pub mod checkpoint;
pub mod checks;
pub mod config;
pub mod error;
pub mod formats;
pub mod pipeline;
pub mod svg;
pub mod tasks;

pub use error::{Error, Result};
