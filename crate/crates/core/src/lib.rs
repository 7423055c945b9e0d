pub mod checkpoint;
pub mod cli;
pub mod criterion;
pub mod data;
pub mod detector;
pub mod embed;
pub mod error;
pub mod eval;
pub mod loss;
pub mod sampler;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
