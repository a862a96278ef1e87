//! Distributed Gaussian-splatting surface reconstruction: a differentiable
//! tile rasterizer, device-side training with geometric regularizers, and
//! edge/cloud aggregation of device models.

pub mod aggregate;
pub mod config;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod image;
pub mod loss;
pub mod math;
pub mod orchestrate;
pub mod raster;
pub mod scene;
pub mod train;

#[cfg(test)]
pub(crate) mod test_util;

pub use error::{Error, Result};
