pub mod compositing;
pub mod cube;
pub mod error;
pub mod evaluation;
pub mod models;
pub mod pipeline;
pub mod raster;
pub mod seeds;
pub mod synth;
pub mod training;
pub mod wildfire;

pub use error::{Error, Result};

/// Version string recorded in every artifact and output snapshot.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
