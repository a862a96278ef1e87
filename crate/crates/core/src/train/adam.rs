//! Adam with per-group learning rates over the flat parameter layout.

use serde::{Deserialize, Serialize};

use crate::gradcheck::{active_params, param_mut};
use crate::raster::backward::PARAM_LEN;
use crate::raster::ParamGrad;
use crate::scene::sh::MAX_SH_COEFFS;
use crate::scene::GaussianModel;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-15;

/// Per-group step sizes. Positions are in units of the scene extent and decay
/// exponentially from `position` to `position_final` over training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearningRates {
    pub position: f64,
    pub position_final: f64,
    pub rotation: f64,
    pub scale: f64,
    pub opacity: f64,
    pub color: f64,
    /// Higher-order color coefficients use `color / sh_rest_divisor`.
    pub sh_rest_divisor: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        LearningRates {
            position: 1.6e-4,
            position_final: 1.6e-6,
            rotation: 1e-3,
            scale: 5e-3,
            opacity: 5e-2,
            color: 2.5e-3,
            sh_rest_divisor: 20.0,
        }
    }
}

impl LearningRates {
    /// Position step at `progress ∈ [0, 1]` of training, times `extent`.
    pub fn position_at(&self, progress: f64, extent: f64) -> f64 {
        let p = progress.clamp(0.0, 1.0);
        let ln = (1.0 - p) * self.position.ln() + p * self.position_final.ln();
        ln.exp() * extent
    }

    /// Learning rates in the flat parameter order, given the current position rate.
    pub fn table(&self, position: f64) -> [f64; PARAM_LEN] {
        let mut t = [0.0; PARAM_LEN];
        for (j, v) in t.iter_mut().enumerate() {
            *v = match j {
                0..=2 => position,
                3..=6 => self.rotation,
                7..=9 => self.scale,
                10 => self.opacity,
                _ if (j - 11) % MAX_SH_COEFFS == 0 => self.color,
                _ => self.color / self.sh_rest_divisor,
            };
        }
        t
    }
}

/// First and second moments per primitive; rows follow the model's primitive order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Adam {
    m: Vec<[f64; PARAM_LEN]>,
    v: Vec<[f64; PARAM_LEN]>,
    steps: Vec<u32>,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Adam {
            m: vec![[0.0; PARAM_LEN]; n],
            v: vec![[0.0; PARAM_LEN]; n],
            steps: vec![0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// Appends a row with zeroed moments.
    pub fn push_zeroed(&mut self) {
        self.m.push([0.0; PARAM_LEN]);
        self.v.push([0.0; PARAM_LEN]);
        self.steps.push(0);
    }

    pub fn reset_row(&mut self, i: usize) {
        self.m[i] = [0.0; PARAM_LEN];
        self.v[i] = [0.0; PARAM_LEN];
        self.steps[i] = 0;
    }

    pub fn retain_mask(&mut self, keep: &[bool]) {
        let mut k = keep.iter();
        self.m.retain(|_| *k.next().unwrap());
        let mut k = keep.iter();
        self.v.retain(|_| *k.next().unwrap());
        let mut k = keep.iter();
        self.steps.retain(|_| *k.next().unwrap());
    }

    /// One update. Rows whose gradient is exactly zero (primitive not seen in
    /// this view) keep their moments and parameters.
    pub fn step(&mut self, model: &mut GaussianModel, grads: &[ParamGrad], lr: &[f64; PARAM_LEN]) {
        let active = active_params(model.sh_degree);
        for (i, (p, g)) in model.primitives.iter_mut().zip(grads).enumerate() {
            let g = g.to_array();
            if g.iter().all(|&x| x == 0.0) {
                continue;
            }
            self.steps[i] += 1;
            let t = self.steps[i] as i32;
            let c1 = 1.0 - BETA1.powi(t);
            let c2 = 1.0 - BETA2.powi(t);
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for &j in &active {
                m[j] = BETA1 * m[j] + (1.0 - BETA1) * g[j];
                v[j] = BETA2 * v[j] + (1.0 - BETA2) * g[j] * g[j];
                let mh = m[j] / c1;
                let vh = v[j] / c2;
                *param_mut(p, j) -= lr[j] * mh / (vh.sqrt() + EPS);
            }
            p.renormalize();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Vec3;
    use crate::scene::GaussianPrimitive;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut m = GaussianModel::from_primitives(
            "m",
            0,
            vec![GaussianPrimitive::isotropic(Vec3::zeros(), 0.1, 0.5, [0.5; 3])],
        )
        .unwrap();
        let mut g = ParamGrad::default();
        g.mean = Vec3::new(3.0, -0.5, 0.0);
        g.opacity_logit = 1e-3;
        let mut adam = Adam::new(1);
        let lr = LearningRates::default().table(0.01);
        adam.step(&mut m, &[g], &lr);
        let p = &m.primitives[0];
        assert!((p.mean.x + 0.01).abs() < 1e-12);
        assert!((p.mean.y - 0.01).abs() < 1e-12);
        assert_eq!(p.mean.z, 0.0);
        assert!((p.opacity_logit + 0.05).abs() < 1e-9);
    }

    #[test]
    fn position_rate_decays_between_endpoints() {
        let lr = LearningRates::default();
        assert!((lr.position_at(0.0, 2.0) - 3.2e-4).abs() < 1e-15);
        assert!((lr.position_at(1.0, 2.0) - 3.2e-6).abs() < 1e-17);
        assert!((lr.position_at(0.5, 1.0) - 1.6e-5).abs() < 1e-16);
    }

    #[test]
    fn untouched_rows_are_skipped() {
        let prim = GaussianPrimitive::isotropic(Vec3::new(1.0, 2.0, 3.0), 0.1, 0.5, [0.5; 3]);
        let mut m = GaussianModel::from_primitives("m", 1, vec![prim.clone(), prim.clone()]).unwrap();
        let mut adam = Adam::new(2);
        let mut g = ParamGrad::default();
        g.sh[0][0] = 1.0;
        adam.step(&mut m, &[ParamGrad::default(), g], &LearningRates::default().table(1e-4));
        assert_eq!(m.primitives[0], prim);
        assert!((m.primitives[1].sh[0][0] - prim.sh[0][0] + 2.5e-3).abs() < 1e-12);
    }
}
