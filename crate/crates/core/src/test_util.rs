//! Random scenes for unit tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::math::{normalize_quat, Vec3};
use crate::scene::sh::{rgb_to_dc, MAX_SH_COEFFS};
use crate::scene::{Camera, GaussianModel, GaussianPrimitive};

pub(crate) fn front_camera(id: &str, size: u32) -> Camera {
    Camera::look_at(id, Vec3::new(0.0, 0.0, -4.0), Vec3::zeros(), -Vec3::y(), size as f64 * 1.4, size, size)
}

pub(crate) fn side_camera(id: &str, size: u32) -> Camera {
    Camera::look_at(id, Vec3::new(0.8, -0.3, -3.9), Vec3::zeros(), -Vec3::y(), size as f64 * 1.4, size, size)
}

/// Anisotropic primitives in a box around the origin, colors well inside [0, 1].
pub(crate) fn random_model(seed: u64, count: usize, degree: u8) -> GaussianModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prims = (0..count)
        .map(|_| {
            let mut sh = [[0.0; MAX_SH_COEFFS]; 3];
            for row in &mut sh {
                row[0] = rgb_to_dc(rng.random_range(0.25..0.75));
                for v in row.iter_mut().skip(1) {
                    *v = rng.random_range(-0.1..0.1);
                }
            }
            GaussianPrimitive {
                mean: Vec3::new(
                    rng.random_range(-0.8..0.8),
                    rng.random_range(-0.8..0.8),
                    rng.random_range(-0.5..0.5),
                ),
                rotation: normalize_quat([
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ]),
                log_scale: Vec3::new(
                    rng.random_range(0.15f64..0.4).ln(),
                    rng.random_range(0.15f64..0.4).ln(),
                    rng.random_range(0.03f64..0.08).ln(),
                ),
                opacity_logit: rng.random_range(-1.5..1.5),
                sh,
            }
        })
        .collect();
    GaussianModel::from_primitives("rand", degree, prims).unwrap()
}
