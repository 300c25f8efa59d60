pub mod dataset;
pub mod energy;
pub mod engine;
mod error;
pub mod generator;
pub mod harness;
pub mod image;
pub mod scores;

pub use error::{Error, Result};
