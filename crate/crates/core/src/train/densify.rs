//! Gradient-driven cloning and splitting of primitives.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::math::Vec3;
use crate::scene::GaussianModel;
use crate::train::adam::Adam;

/// Running screen-space gradient statistics since the last densification.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DensifyStats {
    pub grad_sum: Vec<f64>,
    pub seen: Vec<u32>,
}

impl DensifyStats {
    pub fn new(n: usize) -> Self {
        DensifyStats {
            grad_sum: vec![0.0; n],
            seen: vec![0; n],
        }
    }

    /// Adds the norm of each visible primitive's mean gradient in normalized
    /// device units (pixel gradient times half the image size).
    pub fn accumulate(&mut self, mean2d: &[[f64; 2]], visible: &[bool], width: usize, height: usize) {
        let (sx, sy) = (0.5 * width as f64, 0.5 * height as f64);
        for (i, g) in mean2d.iter().enumerate() {
            if visible[i] {
                self.grad_sum[i] += (g[0] * sx).hypot(g[1] * sy);
                self.seen[i] += 1;
            }
        }
    }

    pub fn mean(&self, i: usize) -> f64 {
        if self.seen[i] == 0 {
            0.0
        } else {
            self.grad_sum[i] / self.seen[i] as f64
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DensifyParams {
    pub grad_threshold: f64,
    /// Primitives whose largest scale is at most this are cloned, larger ones split.
    pub clone_max_scale: f64,
    pub split_factor: f64,
    /// Upper bound on the primitive count after densification.
    pub max_primitives: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DensifyReport {
    pub cloned: usize,
    pub split: usize,
}

/// Clones small and splits large primitives whose mean gradient reaches the
/// threshold. Clones are appended in index order; a split primitive is
/// replaced in place by its first child and the second child is appended
/// after the clones. When the budget is short, the highest gradients win.
pub fn densify<R: Rng>(
    model: &mut GaussianModel,
    stats: &DensifyStats,
    params: &DensifyParams,
    adam: &mut Adam,
    rng: &mut R,
) -> DensifyReport {
    let n = model.len();
    let mut cand: Vec<(usize, f64)> = (0..n)
        .map(|i| (i, stats.mean(i)))
        .filter(|&(_, g)| g >= params.grad_threshold)
        .collect();
    let budget = params.max_primitives.saturating_sub(n);
    if cand.len() > budget {
        cand.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        cand.truncate(budget);
        cand.sort_by_key(|c| c.0);
    }
    let mut report = DensifyReport::default();
    let mut split_children = Vec::new();
    for &(i, _) in &cand {
        let p = model.primitives[i].clone();
        if p.scales().max() <= params.clone_max_scale {
            model.push(p);
            adam.push_zeroed();
            report.cloned += 1;
        } else {
            let s = p.scales();
            let r = p.rotation_matrix();
            let new_log = (s / params.split_factor).map(f64::ln);
            let mut children = [p.clone(), p];
            for c in &mut children {
                let z = Vec3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal));
                c.mean += r * s.component_mul(&z);
                c.log_scale = new_log;
            }
            let [first, second] = children;
            model.primitives[i] = first;
            adam.reset_row(i);
            split_children.push(second);
            report.split += 1;
        }
    }
    for c in split_children {
        model.push(c);
        adam.push_zeroed();
    }
    model.grow_extent();
    report
}
