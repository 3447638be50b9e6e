//! File formats, configuration, pipeline orchestration and the `sos`
//! command line on top of `sos-core`.

pub mod commands;
pub mod config;
mod error;
pub mod io;
pub mod phantoms;
pub mod pipeline;

pub use error::{ToolError, ToolResult};
