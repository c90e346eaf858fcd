//! Library side of the `memsample` command-line tool.

pub mod error;
pub mod figures;
pub mod manifest;
pub mod verify;

pub use error::CliError;
pub use manifest::RunManifest;
