pub mod cae;
pub mod curriculum;
pub mod data;
pub mod decomposition;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
