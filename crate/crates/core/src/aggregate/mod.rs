//! Compression of local models against the global model and their
//! aggregation by union plus self-distillation.

pub mod lmc;
pub mod mas;
pub mod overlap;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::LossWeights;
use crate::raster::RenderConfig;
use crate::scene::{Camera, GaussianModel};
use crate::train::LearningRates;

pub use lmc::{lmc_compress, lmc_scores, non_overlapping, LmcOutcome};
pub use mas::{distill_eval, mas_distill, mas_init, mas_postprune, DistillParams, DistillReport, Teacher};
pub use overlap::{camera_overlap, coverage_overlap, covered_fraction, psi, Frustum, OverlapMode, OverlapParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AggregationConfig {
    pub distill_epochs: u32,
    pub lr: LearningRates,
    pub distill_position_divisor: f64,
    pub postprune_min_opacity: f64,
    pub postprune_max_scale_fraction: f64,
    pub overlap_mode: OverlapMode,
    pub overlap_near_fraction: f64,
    pub overlap_far_diagonals: f64,
    /// Accumulated opacity at which a pixel counts as covered.
    pub overlap_min_alpha: f64,
    /// Covered share of the image at which a camera overlaps.
    pub overlap_min_fraction: f64,
    pub agp_beta: f64,
    pub seed: u64,
    pub render: RenderConfig,
}

impl Default for AggregationConfig {
    fn default() -> Self {
        AggregationConfig {
            distill_epochs: 5,
            lr: LearningRates::default(),
            distill_position_divisor: 10.0,
            postprune_min_opacity: 0.005,
            postprune_max_scale_fraction: 0.1,
            overlap_mode: OverlapMode::Coverage,
            overlap_near_fraction: 0.01,
            overlap_far_diagonals: 2.0,
            overlap_min_alpha: 0.5,
            overlap_min_fraction: 0.8,
            agp_beta: 0.1,
            seed: 0,
            render: RenderConfig::default(),
        }
    }
}

impl AggregationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.postprune_min_opacity)
            || !(self.postprune_max_scale_fraction > 0.0)
            || !(self.overlap_near_fraction > 0.0 && self.overlap_far_diagonals > self.overlap_near_fraction)
            || !(self.distill_position_divisor > 0.0)
            || !(0.0..=1.0).contains(&self.overlap_min_alpha)
            || !(0.0..=1.0).contains(&self.overlap_min_fraction)
        {
            return Err(Error::Config("aggregation thresholds out of range".into()));
        }
        Ok(())
    }

    pub fn overlap(&self) -> OverlapParams {
        OverlapParams {
            near_fraction: self.overlap_near_fraction,
            far_diagonals: self.overlap_far_diagonals,
        }
    }

    /// Cameras of `local` that overlap `global` under the configured mode.
    pub fn overlapping(&self, local: &[Camera], global: Option<&GaussianModel>) -> Vec<Camera> {
        let Some(g) = global else {
            return Vec::new();
        };
        match self.overlap_mode {
            OverlapMode::Frustum => camera_overlap(local, &g.extent, self.overlap()),
            OverlapMode::Coverage => coverage_overlap(local, g, &self.render, self.overlap_min_alpha, self.overlap_min_fraction),
        }
    }

    pub fn distill(&self) -> DistillParams {
        DistillParams {
            epochs: self.distill_epochs,
            lr: self.lr.clone(),
            position_divisor: self.distill_position_divisor,
            seed: self.seed,
            render: self.render.clone(),
        }
    }
}

/// A model to aggregate with the cameras it was trained on.
#[derive(Clone, Debug)]
pub struct LocalModel {
    pub model: GaussianModel,
    pub cameras: Vec<Camera>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalReport {
    pub id: String,
    pub psi: f64,
    pub before: usize,
    pub after: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AggregationReport {
    pub locals: Vec<LocalReport>,
    pub merged: usize,
    pub distill: DistillReport,
    pub postpruned: usize,
    pub final_count: usize,
}

impl AggregationReport {
    /// `section,key,value` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::from("section,key,value\n");
        for l in &self.locals {
            let _ = writeln!(s, "lmc,{}.psi,{}", l.id, l.psi);
            let _ = writeln!(s, "lmc,{}.before,{}", l.id, l.before);
            let _ = writeln!(s, "lmc,{}.after,{}", l.id, l.after);
        }
        let _ = writeln!(s, "mas,merged,{}", self.merged);
        for (e, c) in self.distill.epochs.iter().enumerate() {
            let _ = writeln!(s, "distill,epoch{}.total,{:e}", e + 1, c.total);
            let _ = writeln!(s, "distill,epoch{}.depth,{:e}", e + 1, c.depth);
            let _ = writeln!(s, "distill,epoch{}.normal,{:e}", e + 1, c.normal);
        }
        let _ = writeln!(s, "mas,postpruned,{}", self.postpruned);
        let _ = writeln!(s, "mas,final,{}", self.final_count);
        s
    }
}

/// Compresses the locals one at a time in id order, each against the
/// global model merged so far, then distills the union from
/// the uncompressed locals and post-prunes it.
pub fn aggregate(
    id: &str,
    locals: &[LocalModel],
    cfg: &AggregationConfig,
    w: &LossWeights,
) -> Result<(GaussianModel, Vec<Camera>, AggregationReport)> {
    cfg.validate()?;
    if locals.is_empty() {
        return Err(Error::EmptyModel);
    }
    let mut order: Vec<usize> = (0..locals.len()).collect();
    order.sort_by(|&a, &b| locals[a].model.model_id.cmp(&locals[b].model.model_id));

    let mut report = AggregationReport::default();
    let mut global: Option<GaussianModel> = None;
    for &i in &order {
        let l = &locals[i];
        let overlap = cfg.overlapping(&l.cameras, global.as_ref());
        let out = lmc_compress(&l.model, &l.cameras, &overlap, &cfg.render, cfg.agp_beta)?;
        report.locals.push(LocalReport {
            id: l.model.model_id.clone(),
            psi: out.psi,
            before: out.before,
            after: out.after,
        });
        let mut compressed = out.model;
        compressed.model_id = l.model.model_id.clone();
        global = Some(match global {
            None => mas_init(id, &[&compressed])?,
            Some(g) => {
                let mut u = mas_init(id, &[&g, &compressed])?;
                u.provenance = g.provenance.iter().cloned().chain([compressed.model_id.clone()]).collect();
                u
            }
        });
    }
    let mut global = global.expect("at least one local");
    global.model_id = id.to_string();
    report.merged = global.len();

    let teachers: Vec<Teacher> = order
        .iter()
        .map(|&i| Teacher {
            model: locals[i].model.clone(),
            cameras: locals[i].cameras.clone(),
        })
        .collect();
    let (mut global, distill) = mas_distill(global, &teachers, &cfg.distill(), w)?;
    report.distill = distill;
    report.postpruned = mas_postprune(&mut global, cfg.postprune_min_opacity, cfg.postprune_max_scale_fraction);
    report.final_count = global.len();

    let cameras = order.iter().flat_map(|&i| locals[i].cameras.iter().cloned()).collect();
    Ok((global, cameras, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Vec3;
    use crate::test_util::random_model;

    fn ring(prefix: &str, n: usize, shift: f64) -> Vec<Camera> {
        (0..n)
            .map(|i| {
                let a = i as f64 * 0.5;
                let eye = Vec3::new(shift + 3.0 * a.sin(), -1.0, -3.0 * a.cos());
                Camera::look_at(&format!("{prefix}{i}"), eye, Vec3::new(shift, 0.0, 0.0), -Vec3::y(), 20.0, 20, 20)
            })
            .collect()
    }

    #[test]
    fn singleton_aggregation_keeps_model_and_provenance() {
        let mut m = random_model(1, 15, 0);
        m.model_id = "d0".into();
        let cfg = AggregationConfig {
            distill_epochs: 0,
            postprune_max_scale_fraction: 10.0,
            ..AggregationConfig::default()
        };
        let locals = vec![LocalModel {
            model: m.clone(),
            cameras: ring("a", 3, 0.0),
        }];
        let (g, cams, rep) = aggregate("edge", &locals, &cfg, &LossWeights::default()).unwrap();
        assert_eq!(g.primitives, m.primitives);
        assert_eq!(g.provenance, vec!["d0".to_string()]);
        assert_eq!(cams.len(), 3);
        assert_eq!(rep.locals[0].psi, 0.0);
        assert!(rep.to_text().contains("lmc,d0.after,15"));
    }

    #[test]
    fn second_local_is_compressed_against_the_first() {
        let mut a = random_model(2, 30, 0);
        a.model_id = "d0".into();
        let mut b = random_model(3, 30, 0);
        b.model_id = "d1".into();
        let cfg = AggregationConfig {
            distill_epochs: 1,
            overlap_mode: OverlapMode::Frustum,
            ..AggregationConfig::default()
        };
        let locals = vec![
            LocalModel {
                model: b,
                cameras: ring("b", 4, 0.0),
            },
            LocalModel {
                model: a,
                cameras: ring("a", 4, 0.0),
            },
        ];
        let (g, _, rep) = aggregate("edge", &locals, &cfg, &LossWeights::default()).unwrap();
        assert_eq!(rep.locals[0].id, "d0");
        assert_eq!(rep.locals[0].after, 30);
        assert_eq!(rep.locals[1].psi, 1.0);
        assert_eq!(rep.locals[1].after, 0);
        assert_eq!(rep.merged, 30);
        assert!(g.len() <= 30);
        assert_eq!(g.provenance, vec!["d0".to_string(), "d1".to_string()]);
    }
}
