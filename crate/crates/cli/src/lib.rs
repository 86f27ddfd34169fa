//! The `kgsynth` command-line pipeline.

pub mod args;
pub mod artifact;
pub mod commands;
pub mod error;

pub use args::Cli;
pub use artifact::{ModelArtifact, ModelBody, ARTIFACT_VERSION};
pub use commands::run;
pub use error::{exit, CliError, CliResult};
