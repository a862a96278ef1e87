//! Training objectives: photometric, flattening, single-view and multi-view
//! geometric terms, their schedule, and the distillation loss.

mod device;
pub mod geometry;
pub mod jet;
pub mod multiview;
pub mod photometric;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use device::{
    depth_l1, device_loss, distill_losses, normal_l1, DeviceLossGrads, DistillComponents, DistillGrads,
    LossComponents, LossView, NeighborView, ReferenceView,
};
pub use geometry::{depth_to_normal, scale_loss, scale_loss_grad, svg_loss, svg_loss_with_grad, DepthNormals};
pub use multiview::{
    mv_geo_loss, mv_rgb_loss, ncc, plane_homography, select_neighbor, PixelGrid, PlaneHypothesis, PlaneMap,
};
pub use photometric::{l1, l1_ssim, ssim};

/// Loss weights and schedule constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    /// SSIM share of the photometric loss.
    pub lambda: f64,
    /// Scale (flattening) weight.
    pub lambda1: f64,
    pub beta2: f64,
    pub beta3_geo: f64,
    pub beta3_rgb: f64,
    /// Iterations of the image-only first stage.
    pub tau: u32,
    pub max_iters: u32,
    /// Forward-backward reprojection threshold in pixels.
    pub theta: f64,
    pub lambda_d: f64,
    pub lambda_n: f64,
    pub patch_start: usize,
    pub patch_end: usize,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda: 0.2,
            lambda1: 25.0,
            beta2: 0.01,
            beta3_geo: 0.05,
            beta3_rgb: 0.2,
            tau: 700,
            max_iters: 3000,
            theta: 1.0,
            lambda_d: 0.015,
            lambda_n: 0.015,
            patch_start: 11,
            patch_end: 7,
        }
    }
}

impl LossWeights {
    /// Full-length schedule: 30000 iterations with a 7000-iteration first stage.
    pub fn full_schedule() -> Self {
        LossWeights {
            tau: 7000,
            max_iters: 30000,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ws = [
            self.lambda,
            self.lambda1,
            self.beta2,
            self.beta3_geo,
            self.beta3_rgb,
            self.theta,
            self.lambda_d,
            self.lambda_n,
        ];
        if ws.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        if self.lambda > 1.0 {
            return Err(Error::Config("lambda must lie in [0, 1]".into()));
        }
        if self.tau >= self.max_iters {
            return Err(Error::Config(format!("tau ({}) must be below T ({})", self.tau, self.max_iters)));
        }
        if self.patch_start % 2 == 0 || self.patch_end % 2 == 0 || self.patch_end > self.patch_start {
            return Err(Error::Config("patch sizes must be odd and non-increasing".into()));
        }
        Ok(())
    }

    pub fn lambda2(&self, t: u32) -> f64 {
        schedule_weight(self.beta2, t, self)
    }

    pub fn lambda3_geo(&self, t: u32) -> f64 {
        schedule_weight(self.beta3_geo, t, self)
    }

    pub fn lambda3_rgb(&self, t: u32) -> f64 {
        schedule_weight(self.beta3_rgb, t, self)
    }

    /// Value the single-view weight reaches at the last iteration.
    pub fn lambda2_final(&self) -> f64 {
        self.lambda2(self.max_iters)
    }

    /// NCC patch width at iteration `t`: linear from `patch_start` to
    /// `patch_end` over `(τ, T]`, rounded to the nearest odd integer.
    pub fn patch_size(&self, t: u32) -> usize {
        if t <= self.tau {
            return self.patch_start;
        }
        let f = (t.min(self.max_iters) - self.tau) as f64 / (self.max_iters - self.tau) as f64;
        let s = self.patch_start as f64 + f * (self.patch_end as f64 - self.patch_start as f64);
        let odd = 2.0 * ((s - 1.0) / 2.0).round() + 1.0;
        (odd as usize).clamp(self.patch_end, self.patch_start)
    }
}

/// `β · (t − τ) / T` after the first stage, zero before.
pub fn schedule_weight(beta: f64, t: u32, w: &LossWeights) -> f64 {
    if t <= w.tau {
        0.0
    } else {
        beta * (t - w.tau) as f64 / w.max_iters as f64
    }
}

/// Comma-separated `iteration,component,value` lines.
pub fn log_lines(iteration: u32, components: &[(&str, f64)]) -> String {
    let mut s = String::new();
    for (name, v) in components {
        let _ = writeln!(s, "{iteration},{name},{v:e}");
    }
    s
}

pub const LOG_HEADER: &str = "iteration,component,value";

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_is_zero_through_first_stage() {
        let w = LossWeights::full_schedule();
        assert_eq!(w.lambda2(0), 0.0);
        assert_eq!(w.lambda2(7000), 0.0);
        assert!(w.lambda2(7001) > 0.0);
        let zero = LossWeights {
            beta2: 0.0,
            ..w.clone()
        };
        assert!((0..=30000).step_by(97).all(|t| zero.lambda2(t) == 0.0));
    }

    #[test]
    fn schedule_terminal_value() {
        let w = LossWeights::full_schedule();
        assert!((w.lambda2(30000) - 0.0076666666666667).abs() < 1e-12);
        assert!((w.lambda2(30000) - 0.01 * 23000.0 / 30000.0).abs() < 1e-15);
    }

    #[test]
    fn schedule_is_monotone() {
        let w = LossWeights::default();
        let mut prev = 0.0;
        for t in 0..=w.max_iters {
            let v = w.lambda3_rgb(t);
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn patch_size_shrinks_from_eleven_to_seven() {
        let w = LossWeights::full_schedule();
        assert_eq!(w.patch_size(0), 11);
        assert_eq!(w.patch_size(7000), 11);
        assert_eq!(w.patch_size(30000), 7);
        assert_eq!(w.patch_size(18500), 9);
        let mut prev = 11;
        for t in (7000..=30000).step_by(50) {
            let p = w.patch_size(t);
            assert!(p % 2 == 1 && p <= prev);
            prev = p;
        }
    }

    #[test]
    fn validation() {
        assert!(LossWeights::default().validate().is_ok());
        let bad = LossWeights {
            tau: 5000,
            ..LossWeights::default()
        };
        assert!(bad.validate().is_err());
        let bad = LossWeights {
            patch_end: 8,
            ..LossWeights::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn log_line_format() {
        let s = log_lines(12, &[("l1", 0.5), ("svg", 0.0)]);
        assert_eq!(s, "12,l1,5e-1\n12,svg,0e0\n");
    }
}
