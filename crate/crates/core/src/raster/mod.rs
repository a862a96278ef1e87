//! Differentiable tile rasterizer producing color, alpha, normal and
//! plane-distance buffers, plus the matching reverse pass.

pub mod backward;
pub mod depth;
pub mod project;
pub mod render;

use serde::{Deserialize, Serialize};

pub use backward::{backward, BufferGrads, Gradients, ParamGrad};
pub use depth::{unbiased_depth, unbiased_depth_backward, DepthMap};
pub use project::{project, ProjectedGaussian};
pub use render::{render, Contributor, RenderBuffers};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderConfig {
    pub background: [f64; 3],
    /// Camera-space depth below which a primitive is culled.
    pub near: f64,
    /// Variance added to both diagonal entries of the 2D covariance (px²).
    pub lowpass: f64,
    /// Kernel support in standard deviations; the kernel is zero beyond it.
    pub kernel_cutoff: f64,
    /// Blend weights above this count a pixel toward a primitive's coverage.
    pub contribution_floor: f64,
    /// Compositing stops once transmittance drops below this.
    pub transmittance_floor: f64,
    pub tile_size: usize,
    /// Keep the per-pixel contributor lists needed by [`backward`].
    pub record_contributors: bool,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            background: [0.5; 3],
            near: 0.01,
            lowpass: 0.3,
            kernel_cutoff: 3.0,
            contribution_floor: 1e-4,
            transmittance_floor: 1e-4,
            tile_size: 16,
            record_contributors: true,
        }
    }
}

impl RenderConfig {
    pub fn forward_only(&self) -> Self {
        RenderConfig {
            record_contributors: false,
            ..self.clone()
        }
    }
}
