//! Local model compression against the global model.

use crate::raster::RenderConfig;
use crate::scene::{Camera, GaussianModel};
use crate::train::agp::{coverage_counts, prune_lowest, scores_from_hits, volume_factor, volume_p90, PriorityScores};

#[derive(Clone, Debug, PartialEq)]
pub struct LmcOutcome {
    pub model: GaussianModel,
    pub psi: f64,
    pub before: usize,
    pub after: usize,
    /// Whether scores came from the non-overlapping views (false: opacity·volume fallback).
    pub used_views: bool,
}

/// Local cameras that are not in the overlap set (matched by id).
pub fn non_overlapping(local: &[Camera], overlap: &[Camera]) -> Vec<Camera> {
    local
        .iter()
        .filter(|c| !overlap.iter().any(|o| o.id == c.id))
        .cloned()
        .collect()
}

/// Scores on the non-overlapping views, or `opacity · volume_factor` when
/// every local view overlaps.
pub fn lmc_scores(model: &GaussianModel, views: &[Camera], cfg: &RenderConfig, beta: f64) -> PriorityScores {
    if views.is_empty() {
        let p90 = volume_p90(model);
        return PriorityScores(
            model
                .primitives
                .iter()
                .map(|p| p.opacity() * volume_factor(p.scales().product(), p90, beta))
                .collect(),
        );
    }
    scores_from_hits(model, &coverage_counts(model, views, cfg), beta)
}

/// Removes the `floor(Ψ·N)` lowest-scoring primitives, `Ψ = |overlap| / |local|`.
pub fn lmc_compress(
    model: &GaussianModel,
    local: &[Camera],
    overlap: &[Camera],
    cfg: &RenderConfig,
    beta: f64,
) -> crate::Result<LmcOutcome> {
    let psi = super::psi(local, overlap)?;
    let mut out = model.clone();
    let views = non_overlapping(local, overlap);
    if psi > 0.0 {
        let scores = lmc_scores(model, &views, cfg, beta);
        prune_lowest(&mut out, &scores, psi);
    }
    Ok(LmcOutcome {
        psi,
        before: model.len(),
        after: out.len(),
        used_views: !views.is_empty(),
        model: out,
    })
}
