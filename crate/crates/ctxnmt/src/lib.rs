//! Files, checkpoints, the experiment pipeline and the command line around
//! [`ctxnmt_core`].

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod formats;
pub mod manifest;
pub mod pipeline;
pub mod report;

pub use error::{Error, Result};
