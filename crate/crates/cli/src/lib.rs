pub mod config;
pub mod error;
pub mod manifest;
pub mod stages;

pub use config::RunConfig;
pub use error::{CliError, Result};
pub use stages::{run_all, Run};
