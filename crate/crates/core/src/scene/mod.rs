//! Gaussian scene representation, cameras and model serialization.

pub mod camera;
pub mod format;
pub mod model;
pub mod ply;
pub mod primitive;
pub mod sh;

pub use camera::{Camera, CameraSet};
pub use model::{GaussianModel, DEFAULT_SH_DEGREE};
pub use ply::TriangleMesh;
pub use primitive::{GaussianPrimitive, SCALE_FLOOR};
