//! Initial primitives from a colored point cloud.

use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::scene::{GaussianModel, GaussianPrimitive};

pub const INIT_OPACITY: f64 = 0.1;
const MIN_INIT_SCALE: f64 = 1e-7;

/// Root of the mean squared distance to the three nearest other points.
pub fn knn3_scales(points: &[Vec3]) -> Vec<f64> {
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut best = [f64::INFINITY; 3];
            for (j, q) in points.iter().enumerate() {
                if i == j {
                    continue;
                }
                let d = (p - q).norm_squared();
                if d < best[2] {
                    best[2] = d;
                    best.sort_by(f64::total_cmp);
                }
            }
            let found: Vec<f64> = best.into_iter().filter(|d| d.is_finite()).collect();
            if found.is_empty() {
                return 1.0;
            }
            (found.iter().sum::<f64>() / found.len() as f64).sqrt().max(MIN_INIT_SCALE)
        })
        .collect()
}

/// One isotropic primitive per point with opacity 0.1.
pub fn init_from_points(id: &str, sh_degree: u8, points: &[Vec3], colors: &[[f64; 3]]) -> Result<GaussianModel> {
    if points.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if colors.len() != points.len() {
        return Err(Error::ShapeMismatch(format!("{} points, {} colors", points.len(), colors.len())));
    }
    let scales = knn3_scales(points);
    let prims = points
        .iter()
        .zip(colors)
        .zip(scales)
        .map(|((p, c), s)| GaussianPrimitive::isotropic(*p, s, INIT_OPACITY, *c))
        .collect();
    GaussianModel::from_primitives(id, sh_degree, prims)
}
