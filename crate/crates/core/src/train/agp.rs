//! Priority scores and score-ranked pruning.

use crate::raster::{render, RenderConfig};
use crate::scene::{Camera, GaussianModel};

/// Per-primitive priority; zero for primitives no view renders.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorityScores(pub Vec<f64>);

/// Nearest-rank 90th percentile of `s1·s2·s3` over the model.
pub fn volume_p90(model: &GaussianModel) -> f64 {
    let mut v: Vec<f64> = model.primitives.iter().map(|p| p.scales().product()).collect();
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let rank = ((0.9 * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[rank - 1]
}

/// `clamp(V / V_p90, 0, 1)^β`.
pub fn volume_factor(volume: f64, p90: f64, beta: f64) -> f64 {
    if p90 <= 0.0 {
        return 1.0;
    }
    (volume / p90).clamp(0.0, 1.0).powf(beta)
}

/// Score from per-primitive hit counts: `hits · opacity · volume_factor`.
pub fn scores_from_hits(model: &GaussianModel, hits: &[u64], beta: f64) -> PriorityScores {
    let p90 = volume_p90(model);
    PriorityScores(
        model
            .primitives
            .iter()
            .zip(hits)
            .map(|(p, &h)| h as f64 * p.opacity() * volume_factor(p.scales().product(), p90, beta))
            .collect(),
    )
}

/// Counts, over every pixel of every camera, the pixels where each primitive's
/// blend weight exceeds `cfg.contribution_floor`.
pub fn coverage_counts(model: &GaussianModel, cameras: &[Camera], cfg: &RenderConfig) -> Vec<u64> {
    let cfg = cfg.forward_only();
    let mut hits = vec![0u64; model.len()];
    for cam in cameras {
        let b = render(model, cam, &cfg);
        for (h, c) in hits.iter_mut().zip(&b.coverage) {
            *h += *c as u64;
        }
    }
    hits
}

pub fn agp_score(model: &GaussianModel, cameras: &[Camera], cfg: &RenderConfig, beta: f64) -> PriorityScores {
    scores_from_hits(model, &coverage_counts(model, cameras, cfg), beta)
}

/// Indices of the `count` lowest scores; among equal scores the higher index
/// goes first.
pub fn lowest_indices(scores: &[f64], count: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(b.cmp(&a)));
    order.truncate(count.min(scores.len()));
    order
}

/// Removes the `floor(fraction·N)` lowest-scoring primitives, keeping the
/// survivors' order. Returns the keep mask.
pub fn prune_lowest(model: &mut GaussianModel, scores: &PriorityScores, fraction: f64) -> Vec<bool> {
    let count = (fraction * model.len() as f64).floor() as usize;
    let mut keep = vec![true; model.len()];
    for i in lowest_indices(&scores.0, count) {
        keep[i] = false;
    }
    model.retain_mask(&keep);
    keep
}

pub fn agp_prune(model: &mut GaussianModel, scores: &PriorityScores, phi: f64) -> Vec<bool> {
    prune_lowest(model, scores, phi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Vec3;
    use crate::scene::GaussianPrimitive;
    use crate::test_util::{front_camera, random_model, side_camera};

    #[test]
    fn zero_opacity_and_unseen_score_zero() {
        let mut m = random_model(1, 10, 0);
        m.primitives[3].opacity_logit = f64::NEG_INFINITY;
        m.primitives[5].mean = Vec3::new(0.0, 0.0, -10.0);
        let s = agp_score(&m, &[front_camera("a", 32)], &RenderConfig::default(), 0.1);
        assert_eq!(s.0[3], 0.0);
        assert_eq!(s.0[5], 0.0);
        assert!(s.0.iter().filter(|&&v| v > 0.0).count() >= 5);
    }

    #[test]
    fn percentile_is_nearest_rank() {
        let prims = (1..=10)
            .map(|i| GaussianPrimitive::isotropic(Vec3::zeros(), (i as f64).cbrt(), 0.5, [0.5; 3]))
            .collect();
        let m = GaussianModel::from_primitives("m", 0, prims).unwrap();
        assert!((volume_p90(&m) - 9.0).abs() < 1e-9);
    }

    #[test]
    fn prune_count_and_ties() {
        let mut m = random_model(2, 10, 0);
        let orig = m.clone();
        let keep = agp_prune(&mut m, &PriorityScores(vec![1.0; 10]), 0.2);
        assert_eq!(m.len(), 8);
        assert_eq!(keep[8..], [false, false]);
        assert_eq!(m.primitives[..], orig.primitives[..8]);

        let mut m = orig.clone();
        let s = PriorityScores(vec![5.0, 0.1, 3.0, 0.2, 9.0, 1.0, 1.0, 7.0, 2.0, 4.0]);
        agp_prune(&mut m, &s, 0.2);
        assert_eq!(m.len(), 8);
        assert!(!m.primitives.contains(&orig.primitives[1]));
        assert!(!m.primitives.contains(&orig.primitives[3]));

        let mut m = orig.clone();
        agp_prune(&mut m, &s, 0.0);
        assert_eq!(m, orig);
    }

    #[test]
    fn uniform_rescale_keeps_prune_set() {
        let m = random_model(3, 30, 0);
        let cams = [front_camera("a", 32), side_camera("b", 32)];
        let cfg = RenderConfig::default();
        let base = agp_score(&m, &cams, &cfg, 0.1);
        let mut scaled = m.clone();
        for p in &mut scaled.primitives {
            p.log_scale += Vec3::repeat(0.7f64.ln());
        }
        // Coverage changes with the footprint, so compare through the volume factor only.
        let hits = coverage_counts(&m, &cams, &cfg);
        let a = scores_from_hits(&m, &hits, 0.1);
        let b = scores_from_hits(&scaled, &hits, 0.1);
        assert_eq!(lowest_indices(&a.0, 6), lowest_indices(&b.0, 6));
        assert_eq!(a, base);
    }
}
