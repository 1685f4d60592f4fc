pub mod autodiff;
mod bytes;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod io;
pub mod memory;
pub mod raster;
pub mod rng;
pub mod train;
pub mod vit;

pub use error::{CheckpointError, Error, Result};
