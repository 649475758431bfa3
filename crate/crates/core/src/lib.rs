//! Satellite time series to recurrence plots, dual-encoder contrastive
//! pretraining, and downstream probing.

pub mod dataset;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod ingest;
pub mod pipeline;
pub mod representation;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
