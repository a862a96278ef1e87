//! Per-device optimization: two-stage loss schedule, densification and
//! priority-based pruning.

pub mod adam;
pub mod agp;
pub mod densify;
pub mod init;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageBuf;
use crate::loss::{device_loss, log_lines, select_neighbor, LossComponents, LossView, LossWeights, PixelGrid, LOG_HEADER};
use crate::raster::{backward, render, Gradients, RenderConfig};
use crate::scene::{Camera, GaussianModel};

pub use adam::{Adam, LearningRates};
pub use agp::{agp_prune, agp_score, lowest_indices, prune_lowest, scores_from_hits, PriorityScores};
pub use densify::{densify, DensifyParams, DensifyReport, DensifyStats};
pub use init::{init_from_points, knn3_scales};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainerConfig {
    pub max_iters: u32,
    pub stage1_iters: u32,
    pub prune_iter: u32,
    pub prune_fraction: f64,
    pub densify_interval: u32,
    pub densify_start: u32,
    /// Densification stops at this fraction of `max_iters`.
    pub densify_stop_fraction: f64,
    pub densify_grad_threshold: f64,
    /// Clone rather than split when the largest scale is at most this
    /// fraction of the scene extent.
    pub clone_extent_fraction: f64,
    pub split_factor: f64,
    /// Densification stops adding primitives beyond this count.
    pub max_primitives: usize,
    pub lr: LearningRates,
    pub agp_beta: f64,
    pub seed: u64,
    pub render: RenderConfig,
    pub multiview: bool,
    /// Multi-view terms use every `mv_stride`-th pixel in each direction,
    /// with the offset cycling over iterations.
    pub mv_stride: usize,
    pub neighbor_max_angle_deg: f64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            max_iters: 3000,
            stage1_iters: 700,
            prune_iter: 2000,
            prune_fraction: 0.2,
            densify_interval: 100,
            densify_start: 500,
            densify_stop_fraction: 0.5,
            densify_grad_threshold: 2e-4,
            clone_extent_fraction: 0.01,
            split_factor: 1.6,
            max_primitives: 8000,
            lr: LearningRates::default(),
            agp_beta: 0.1,
            seed: 0,
            render: RenderConfig::default(),
            multiview: true,
            mv_stride: 4,
            neighbor_max_angle_deg: 60.0,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.max_iters > 0 && self.prune_iter >= self.max_iters {
            return bad("prune_iter must be below max_iters");
        }
        if self.max_iters > 0 && self.stage1_iters >= self.max_iters {
            return bad("stage1_iters must be below max_iters");
        }
        if !(0.0..1.0).contains(&self.prune_fraction) {
            return bad("prune_fraction must lie in [0, 1)");
        }
        if self.densify_interval == 0 || !(0.0..=1.0).contains(&self.densify_stop_fraction) {
            return bad("densify interval must be positive and the stop fraction in [0, 1]");
        }
        if !(self.split_factor > 1.0) || self.mv_stride == 0 || self.agp_beta < 0.0 {
            return bad("split_factor > 1, mv_stride > 0 and agp_beta >= 0 required");
        }
        Ok(())
    }

    pub fn densify_stop(&self) -> u32 {
        (self.densify_stop_fraction * self.max_iters as f64) as u32
    }

    /// Loss weights with the schedule lengths taken from this config.
    pub fn schedule(&self, weights: &LossWeights) -> LossWeights {
        LossWeights {
            tau: self.stage1_iters,
            max_iters: self.max_iters.max(1),
            ..weights.clone()
        }
    }
}

/// A training camera with its ground-truth image.
#[derive(Clone, Debug)]
pub struct TrainView {
    pub camera: Camera,
    pub image: ImageBuf,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: GaussianModel,
    /// `iteration,component,value` lines, header first.
    pub log: String,
    pub last: LossComponents,
    pub densify_events: Vec<(u32, DensifyReport)>,
    pub pruned: usize,
}

/// Half the diagonal of the model's bounding box.
pub fn scene_extent(model: &GaussianModel) -> f64 {
    if model.extent.is_empty() {
        return 1.0;
    }
    (0.5 * model.extent.diagonal()).max(1e-6)
}

/// Loss components and parameter gradients of the device loss for one step.
#[derive(Clone, Debug)]
pub struct DeviceStep {
    pub components: LossComponents,
    pub grads: Gradients,
    /// Screen-space mean gradients from the reference view alone.
    pub reference_mean2d: Vec<[f64; 2]>,
}

/// Evaluates the device loss on rendered views (rendered with contributor
/// lists) and back-propagates it to the model parameters.
pub fn device_gradients(
    model: &GaussianModel,
    reference: &LossView,
    neighbor: Option<&LossView>,
    t: u32,
    w: &LossWeights,
    grid: PixelGrid,
    render_cfg: &RenderConfig,
) -> Result<DeviceStep> {
    let (components, g) = device_loss(model, reference, neighbor, t, w, grid)?;
    let mut grads = backward(model, reference.cam, reference.buffers, render_cfg, &g.reference)?;
    let reference_mean2d = grads.mean2d.clone();
    if let (Some(nv), Some(gn)) = (neighbor, &g.neighbor) {
        grads.add_assign(&backward(model, nv.cam, nv.buffers, render_cfg, gn)?);
    }
    for (pg, ls) in grads.params.iter_mut().zip(&g.log_scale) {
        pg.log_scale += ls;
    }
    Ok(DeviceStep {
        components,
        grads,
        reference_mean2d,
    })
}

/// Optimizes `model` against the given views for `cfg.max_iters` iterations.
pub fn train(
    model: GaussianModel,
    views: &[TrainView],
    cfg: &TrainerConfig,
    weights: &LossWeights,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if views.is_empty() {
        return Err(Error::NoCameras(format!("device model `{}`", model.model_id)));
    }
    for v in views {
        v.camera.validate()?;
        if v.image.width != v.camera.width as usize || v.image.height != v.camera.height as usize || v.image.channels != 3 {
            return Err(Error::ShapeMismatch(format!("image for camera `{}`", v.camera.id)));
        }
    }
    let mut model = model;
    let mut out = TrainOutcome {
        model: GaussianModel::new("", 0)?,
        log: format!("{LOG_HEADER}\n"),
        last: LossComponents::default(),
        densify_events: Vec::new(),
        pruned: 0,
    };
    if cfg.max_iters == 0 {
        out.model = model;
        return Ok(out);
    }
    if model.is_empty() {
        return Err(Error::EmptyModel);
    }

    let w = cfg.schedule(weights);
    w.validate()?;
    let cams: Vec<Camera> = views.iter().map(|v| v.camera.clone()).collect();
    let neighbors: Vec<Option<usize>> = cams
        .iter()
        .map(|c| select_neighbor(c, &cams, cfg.neighbor_max_angle_deg))
        .collect();
    let extent = scene_extent(&model);
    let dparams = DensifyParams {
        grad_threshold: cfg.densify_grad_threshold,
        clone_max_scale: cfg.clone_extent_fraction * extent,
        split_factor: cfg.split_factor,
        max_primitives: cfg.max_primitives,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(model.len());
    let mut stats = DensifyStats::new(model.len());
    let mut order: Vec<usize> = Vec::new();
    let render_cfg = RenderConfig {
        record_contributors: true,
        ..cfg.render.clone()
    };

    for t in 1..=cfg.max_iters {
        if order.is_empty() {
            order = (0..views.len()).collect();
            order.shuffle(&mut rng);
            order.reverse();
        }
        let vi = order.pop().unwrap();
        let view = &views[vi];
        let rb = render(&model, &view.camera, &render_cfg);
        let use_mv = cfg.multiview && t > w.tau;
        let nb = match neighbors[vi].filter(|_| use_mv) {
            Some(ni) => Some((ni, render(&model, &views[ni].camera, &render_cfg))),
            None => None,
        };
        let s = cfg.mv_stride;
        let phase = t as usize % (s * s);
        let grid = PixelGrid {
            stride: s,
            offset: (phase % s, phase / s),
        };
        let rv = LossView {
            cam: &view.camera,
            buffers: &rb,
            gt: &view.image,
        };
        let nv = nb.as_ref().map(|(ni, b)| LossView {
            cam: &views[*ni].camera,
            buffers: b,
            gt: &views[*ni].image,
        });
        let step = device_gradients(&model, &rv, nv.as_ref(), t, &w, grid, &render_cfg)?;
        let comp = step.components;
        if !comp.is_finite() {
            return Err(Error::NonFiniteLoss {
                iteration: t as usize,
                detail: format!("{comp:?}"),
            });
        }
        let grads = step.grads;
        let visible: Vec<bool> = rb.coverage.iter().map(|&c| c > 0).collect();
        stats.accumulate(&step.reference_mean2d, &visible, rb.width, rb.height);
        if let Some(i) = grads.params.iter().position(|p| !p.is_finite()) {
            return Err(Error::NonFiniteLoss {
                iteration: t as usize,
                detail: format!("non-finite gradient for primitive {i}"),
            });
        }
        let lr = cfg.lr.table(cfg.lr.position_at(t as f64 / cfg.max_iters as f64, extent));
        adam.step(&mut model, &grads.params, &lr);

        if t >= cfg.densify_start && t < cfg.densify_stop() && t % cfg.densify_interval == 0 {
            let rep = densify(&mut model, &stats, &dparams, &mut adam, &mut rng);
            out.densify_events.push((t, rep));
            stats = DensifyStats::new(model.len());
        }
        if t == cfg.prune_iter && cfg.prune_fraction > 0.0 {
            let scores = agp_score(&model, &cams, &cfg.render, cfg.agp_beta);
            let before = model.len();
            let keep = agp_prune(&mut model, &scores, cfg.prune_fraction);
            adam.retain_mask(&keep);
            stats = DensifyStats::new(model.len());
            out.pruned = before - model.len();
        }
        out.log.push_str(&log_lines(t, &comp.named()));
        out.log.push_str(&log_lines(t, &[("primitives", model.len() as f64)]));
        out.last = comp;
    }
    model.grow_extent();
    out.model = model;
    Ok(out)
}
