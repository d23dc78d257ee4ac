//! Streaming influence-aware group recommendation.

pub mod binio;
pub mod error;
pub mod ges;
pub mod ggcn;
pub mod influence;
pub mod ingest;
pub mod linalg;
pub mod pipeline;
pub mod rng;
pub mod synthetic;
pub mod ugindex;
pub mod temporal;

pub use error::{Error, Result};
