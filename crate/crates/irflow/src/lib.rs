//! File formats, run configuration and the command workflow for
//! `irflow-core`.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod fmt;
pub mod pnm;
pub mod report;

pub use config::{RunConfig, Task};
pub use error::{Error, Result};
