//! Experiment harness for the `mfopt` library: preset configuration,
//! synthetic scene generation, artifact I/O, and experiment drivers.
//!
//! The binary front-end (`mfopt run / validate / oracle`) is a thin
//! wrapper over this crate; the acceptance suite drives the same
//! functions in-process.

pub mod config;
pub mod error;
pub mod io;
pub mod oracle;
pub mod runner;
pub mod synth;

pub use config::{ExperimentConfig, Preset};
pub use error::{CliError, Result};
pub use runner::{run_experiment, RunOutcome};
