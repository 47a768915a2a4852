pub mod cli;
pub mod config;
pub mod error;
pub mod estimate;
pub mod harness;
pub mod linalg;
pub mod panel;
pub mod rng;
pub mod simulate;
pub mod special;
pub mod variance;
pub mod weights;

pub use error::{Error, Result};
