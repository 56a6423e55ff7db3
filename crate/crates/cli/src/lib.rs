//! Batch driver for motion-guided pseudo-label refinement.
//!
//! Reads frame manifests and configuration, runs the `moda-core` stages per
//! frame in parallel, and writes refined labels plus JSON summaries. Also
//! generates synthetic fixture datasets and evaluates label directories.

pub mod commands;
pub mod config;
pub mod error;
pub mod eval;
pub mod fixture;
pub mod manifest;
pub mod pipeline;

pub use config::PipelineConfig;
pub use error::{CliError, Result};
pub use manifest::{FrameManifest, FrameRecord};
