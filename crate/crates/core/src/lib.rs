pub mod diffusion;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod phantom;
pub mod rng;
pub mod stats;
pub mod synthesis;
pub mod tinynet;
pub mod volume;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
