//! Synthetic ground truth, image and geometry metrics, and mesh extraction
//! from trained models.

pub mod fscore;
pub mod metrics;
pub mod synth;
pub mod tsdf;

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::math::{Aabb, Vec3};
use crate::raster::{render, RenderConfig};
use crate::scene::{format, Camera, GaussianModel, TriangleMesh};

pub use fscore::{fscore, FScore};
pub use metrics::{mse, psnr, ssim, PSNR_CAP};
pub use synth::{synth_scene, GtView, SceneSpec, SyntheticScene};
pub use tsdf::{mesh_sample, tsdf_fuse, DepthObservation, TsdfVolume};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// F-score threshold as a fraction of the extent diagonal.
    pub eps_fraction: f64,
    /// Absolute threshold; overrides `eps_fraction` when set.
    pub eps: Option<f64>,
    /// Voxel size as a fraction of the threshold.
    pub voxel_fraction: f64,
    /// Absolute voxel size; overrides `voxel_fraction` when set.
    pub voxel: Option<f64>,
    /// Rendered pixels with less opacity are not fused.
    pub min_alpha: f64,
    pub mesh_samples: usize,
    /// Ground-truth surface sample spacing as a fraction of the threshold.
    pub gt_spacing_fraction: f64,
    pub seed: u64,
    pub render: RenderConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            eps_fraction: 0.01,
            eps: None,
            voxel_fraction: 0.5,
            voxel: None,
            min_alpha: 0.5,
            mesh_samples: 200_000,
            gt_spacing_fraction: 0.25,
            seed: 0,
            render: RenderConfig::default().forward_only(),
        }
    }
}

impl EvalConfig {
    pub fn threshold(&self, extent: &Aabb) -> f64 {
        self.eps.unwrap_or(self.eps_fraction * extent.diagonal())
    }

    pub fn voxel_size(&self, extent: &Aabb) -> f64 {
        self.voxel.unwrap_or(self.voxel_fraction * self.threshold(extent))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ViewMetrics {
    pub id: String,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub views: Vec<ViewMetrics>,
    pub eps: f64,
    pub fscore: Option<FScore>,
    pub primitives: usize,
    pub model_bytes: usize,
    pub timings: Vec<(String, f64)>,
}

impl EvalReport {
    pub fn mean_psnr(&self) -> f64 {
        self.views.iter().map(|v| v.psnr).sum::<f64>() / self.views.len().max(1) as f64
    }

    pub fn mean_ssim(&self) -> f64 {
        self.views.iter().map(|v| v.ssim).sum::<f64>() / self.views.len().max(1) as f64
    }

    /// `section,key,value` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::from("section,key,value\n");
        for v in &self.views {
            let _ = writeln!(s, "view,{}.psnr,{:.4}", v.id, v.psnr);
            let _ = writeln!(s, "view,{}.ssim,{:.5}", v.id, v.ssim);
        }
        let _ = writeln!(s, "image,mean_psnr,{:.4}", self.mean_psnr());
        let _ = writeln!(s, "image,mean_ssim,{:.5}", self.mean_ssim());
        let _ = writeln!(s, "image,lpips,omitted");
        if let Some(f) = &self.fscore {
            let _ = writeln!(s, "mesh,eps,{:e}", self.eps);
            let _ = writeln!(s, "mesh,precision,{:.5}", f.precision);
            let _ = writeln!(s, "mesh,recall,{:.5}", f.recall);
            let _ = writeln!(s, "mesh,fscore,{:.5}", f.f);
        }
        let _ = writeln!(s, "model,primitives,{}", self.primitives);
        let _ = writeln!(s, "model,bytes,{}", self.model_bytes);
        for (k, t) in &self.timings {
            let _ = writeln!(s, "time,{k},{t:.3}");
        }
        s
    }
}

/// PSNR and SSIM of the model's renders against each ground-truth view.
pub fn evaluate_views(model: &GaussianModel, views: &[GtView], cfg: &RenderConfig) -> Result<Vec<ViewMetrics>> {
    let fwd = cfg.forward_only();
    views
        .par_iter()
        .map(|gt| {
            let rb = render(model, &gt.camera, &fwd);
            Ok(ViewMetrics {
                id: gt.camera.id.clone(),
                psnr: psnr(&rb.rgb, &gt.rgb)?,
                ssim: ssim(&rb.rgb, &gt.rgb)?,
            })
        })
        .collect()
}

/// Unbiased depth of the model seen from `cam`, keeping pixels with enough
/// accumulated opacity.
pub fn rendered_depth(model: &GaussianModel, cam: &Camera, cfg: &RenderConfig, min_alpha: f64) -> DepthObservation {
    let rb = render(model, cam, &cfg.forward_only());
    let dm = rb.depth(cam);
    let valid = dm.valid.iter().zip(&rb.alpha).map(|(v, a)| *v && *a >= min_alpha).collect();
    DepthObservation {
        camera: cam.clone(),
        depth: dm.depth,
        valid,
    }
}

/// TSDF mesh of the model's rendered depth over `cams`, fused in camera order.
pub fn model_mesh(model: &GaussianModel, cams: &[Camera], bounds: &Aabb, voxel: f64, cfg: &EvalConfig) -> Result<TriangleMesh> {
    let obs: Vec<DepthObservation> = cams
        .par_iter()
        .map(|c| rendered_depth(model, c, &cfg.render, cfg.min_alpha))
        .collect();
    tsdf_fuse(&obs, bounds, voxel)
}

/// Mesh F-score of the model against the scene's visible surfaces.
pub fn evaluate_mesh(model: &GaussianModel, scene: &SyntheticScene, cfg: &EvalConfig) -> Result<(FScore, f64, TriangleMesh)> {
    let extent = scene.extent();
    let eps = cfg.threshold(&extent);
    let voxel = cfg.voxel_size(&extent);
    let mesh = model_mesh(model, &scene.cameras, &extent, voxel, cfg)?;
    let pred = mesh_sample(&mesh, cfg.mesh_samples, cfg.seed)?;
    let gt: Vec<Vec3> = scene.visible_samples(cfg.gt_spacing_fraction * eps, &scene.cameras);
    Ok((fscore(&pred, &gt, eps)?, eps, mesh))
}

/// Hold-out image metrics plus the mesh F-score.
pub fn evaluate(model: &GaussianModel, scene: &SyntheticScene, holdout: &[GtView], cfg: &EvalConfig) -> Result<EvalReport> {
    let t0 = std::time::Instant::now();
    let views = evaluate_views(model, holdout, &cfg.render)?;
    let t_img = t0.elapsed().as_secs_f64();
    let t1 = std::time::Instant::now();
    let (f, eps, _) = evaluate_mesh(model, scene, cfg)?;
    Ok(EvalReport {
        views,
        eps,
        fscore: Some(f),
        primitives: model.len(),
        model_bytes: format::serialize(model).len(),
        timings: vec![("images".into(), t_img), ("mesh".into(), t1.elapsed().as_secs_f64())],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_lists_fscore_and_omits_lpips() {
        let r = EvalReport {
            views: vec![ViewMetrics {
                id: "h0".into(),
                psnr: 30.0,
                ssim: 0.9,
            }],
            eps: 0.05,
            fscore: Some(FScore::from_pr(0.8, 0.6)),
            primitives: 10,
            model_bytes: 100,
            timings: vec![],
        };
        let t = r.to_text();
        assert!(t.contains("image,lpips,omitted"));
        assert!(t.contains("mesh,fscore,0.68571"));
        assert_eq!(r.mean_psnr(), 30.0);
    }

    #[test]
    fn thresholds_follow_extent() {
        let b = Aabb::new([0.0, 0.0, 0.0], [3.0, 4.0, 0.0]);
        let cfg = EvalConfig::default();
        assert!((cfg.threshold(&b) - 0.05).abs() < 1e-12);
        assert!((cfg.voxel_size(&b) - 0.025).abs() < 1e-12);
        let fixed = EvalConfig {
            eps: Some(0.2),
            voxel: Some(0.01),
            ..cfg
        };
        assert_eq!(fixed.threshold(&b), 0.2);
        assert_eq!(fixed.voxel_size(&b), 0.01);
    }
}
