//! Merging local models and distilling the merged model from them.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::loss::{distill_losses, DistillComponents, LossWeights};
use crate::math::Aabb;
use crate::raster::{backward, render, RenderBuffers, RenderConfig};
use crate::scene::{Camera, GaussianModel};
use crate::train::{scene_extent, Adam, LearningRates};

/// Union of the local models in input order. Attributes are copied
/// unchanged; the extent is the union of the input extents.
pub fn mas_init(id: &str, locals: &[&GaussianModel]) -> Result<GaussianModel> {
    let first = locals.first().ok_or(Error::EmptyModel)?;
    let degree = locals.iter().map(|m| m.sh_degree).max().unwrap_or(first.sh_degree);
    let mut out = GaussianModel::new(id, degree)?;
    let mut extent = Aabb::empty();
    for m in locals {
        out.primitives.extend_from_slice(&m.primitives);
        extent = extent.union(&m.extent);
        out.provenance.push(m.model_id.clone());
    }
    out.extent = extent;
    out.grow_extent();
    Ok(out)
}

/// A teacher model with the cameras it was trained on.
#[derive(Clone, Debug)]
pub struct Teacher {
    pub model: GaussianModel,
    pub cameras: Vec<Camera>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DistillParams {
    pub epochs: u32,
    pub lr: LearningRates,
    /// Position step is the device starting rate divided by this.
    pub position_divisor: f64,
    pub seed: u64,
    pub render: RenderConfig,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DistillReport {
    /// Mean loss components per epoch.
    pub epochs: Vec<DistillComponents>,
    /// Primitive count after each epoch.
    pub counts: Vec<usize>,
}

/// Distillation loss of `student` against every teacher view, without updating.
pub fn distill_eval(student: &GaussianModel, teachers: &[Teacher], cfg: &RenderConfig, w: &LossWeights) -> Result<Vec<DistillComponents>> {
    let fwd = cfg.forward_only();
    let mut out = Vec::new();
    for t in teachers {
        for cam in &t.cameras {
            let tb = render(&t.model, cam, &fwd);
            let sb = render(student, cam, &fwd);
            out.push(distill_losses(student, &sb, &tb, cam, w)?.0);
        }
    }
    Ok(out)
}

/// Optimizes `global` to reproduce each teacher's RGB, depth and normal renders
/// on that teacher's cameras. Each epoch visits the union of all teacher
/// cameras once in a seeded shuffle. No primitives are added.
pub fn mas_distill(
    global: GaussianModel,
    teachers: &[Teacher],
    params: &DistillParams,
    w: &LossWeights,
) -> Result<(GaussianModel, DistillReport)> {
    let views: Vec<(usize, &Camera)> = teachers
        .iter()
        .enumerate()
        .flat_map(|(i, t)| t.cameras.iter().map(move |c| (i, c)))
        .collect();
    if views.is_empty() {
        return Err(Error::NoCameras("distillation teachers".into()));
    }
    let mut model = global;
    let mut report = DistillReport::default();
    if params.epochs == 0 || model.is_empty() {
        return Ok((model, report));
    }
    let cfg = RenderConfig {
        record_contributors: true,
        ..params.render.clone()
    };
    let fwd = params.render.forward_only();
    let mut cache: HashMap<usize, RenderBuffers> = HashMap::new();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut adam = Adam::new(model.len());
    let lr = params
        .lr
        .table(params.lr.position * scene_extent(&model) / params.position_divisor);
    let mut order: Vec<usize> = (0..views.len()).collect();

    for epoch in 0..params.epochs {
        order.shuffle(&mut rng);
        let mut sum = DistillComponents::default();
        for &vi in &order {
            let (ti, cam) = views[vi];
            let tb = cache
                .entry(vi)
                .or_insert_with(|| render(&teachers[ti].model, cam, &fwd));
            let sb = render(&model, cam, &cfg);
            let (c, g) = distill_losses(&model, &sb, tb, cam, w)?;
            if !c.total.is_finite() {
                return Err(Error::NonFiniteLoss {
                    iteration: (epoch as usize) * views.len(),
                    detail: format!("distillation on camera `{}`: {c:?}", cam.id),
                });
            }
            let mut grads = backward(&model, cam, &sb, &cfg, &g.buffers)?;
            for (pg, ls) in grads.params.iter_mut().zip(&g.log_scale) {
                pg.log_scale += ls;
            }
            adam.step(&mut model, &grads.params, &lr);
            sum.l3dgs += c.l3dgs;
            sum.scale += c.scale;
            sum.svg += c.svg;
            sum.depth += c.depth;
            sum.normal += c.normal;
            sum.total += c.total;
        }
        let n = views.len() as f64;
        report.epochs.push(DistillComponents {
            l3dgs: sum.l3dgs / n,
            scale: sum.scale / n,
            svg: sum.svg / n,
            depth: sum.depth / n,
            normal: sum.normal / n,
            total: sum.total / n,
        });
        report.counts.push(model.len());
    }
    model.grow_extent();
    Ok((model, report))
}

/// Drops primitives with opacity below `min_opacity` or a largest scale above
/// `max_scale_fraction` of the model's extent diagonal.
pub fn mas_postprune(model: &mut GaussianModel, min_opacity: f64, max_scale_fraction: f64) -> usize {
    let limit = max_scale_fraction * model.extent.diagonal();
    let keep: Vec<bool> = model
        .primitives
        .iter()
        .map(|p| p.opacity() >= min_opacity && p.scales().max() <= limit)
        .collect();
    let before = model.len();
    model.retain_mask(&keep);
    before - model.len()
}
