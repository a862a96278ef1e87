use crate::error::{Error, Result};
use crate::math::{normalize_quat, quat_to_matrix, sigmoid, Mat3, Vec3};
use crate::scene::camera::Camera;
use crate::scene::sh::{self, MAX_SH_COEFFS};

/// Floor on activated scales; keeps the covariance invertible.
pub const SCALE_FLOOR: f64 = 1e-7;

/// One anisotropic 3D Gaussian.
///
/// All parameters are stored unconstrained: scales in log space, opacity as a
/// logit, rotation as a (renormalized) quaternion in `w, x, y, z` order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianPrimitive {
    pub mean: Vec3,
    pub rotation: [f64; 4],
    pub log_scale: Vec3,
    pub opacity_logit: f64,
    /// Spherical-harmonic coefficients, one row per color channel. Only the
    /// first `coeff_count(degree)` entries of each row are meaningful.
    pub sh: [[f64; MAX_SH_COEFFS]; 3],
}

impl GaussianPrimitive {
    /// Isotropic primitive of the given scale, opacity and base color.
    pub fn isotropic(mean: Vec3, scale: f64, opacity: f64, rgb: [f64; 3]) -> Self {
        let mut sh = [[0.0; MAX_SH_COEFFS]; 3];
        for c in 0..3 {
            sh[c][0] = sh::rgb_to_dc(rgb[c]);
        }
        GaussianPrimitive {
            mean,
            rotation: [1.0, 0.0, 0.0, 0.0],
            log_scale: Vec3::repeat(scale.ln()),
            opacity_logit: crate::math::logit(opacity),
            sh,
        }
    }

    #[inline]
    pub fn scales(&self) -> Vec3 {
        self.log_scale.map(f64::exp)
    }

    #[inline]
    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    #[inline]
    pub fn rotation_matrix(&self) -> Mat3 {
        quat_to_matrix(self.rotation)
    }

    pub fn renormalize(&mut self) {
        self.rotation = normalize_quat(self.rotation);
    }

    /// `R diag(s²) Rᵀ`.
    pub fn covariance(&self) -> Mat3 {
        let r = self.rotation_matrix();
        let s = self.scales();
        let s2 = Mat3::from_diagonal(&s.component_mul(&s));
        r * s2 * r.transpose()
    }

    /// Unnormalized Gaussian density `exp(-½ (x-μ)ᵀ Σ⁻¹ (x-μ))`.
    pub fn evaluate(&self, x: &Vec3) -> Result<f64> {
        let s = self.scales();
        let min = s.min();
        if min < SCALE_FLOOR {
            return Err(Error::DegenerateScale {
                scale: min,
                floor: SCALE_FLOOR,
            });
        }
        // Σ⁻¹ = R diag(1/s²) Rᵀ, so the quadratic form is |diag(1/s) Rᵀ d|².
        let local = self.rotation_matrix().transpose() * (x - self.mean);
        let q: f64 = (0..3).map(|i| (local[i] / s[i]).powi(2)).sum();
        Ok((-0.5 * q).exp())
    }

    /// Index of the smallest activated scale; ties go to the lowest axis.
    pub fn min_scale_axis(&self) -> usize {
        let mut k = 0;
        for i in 1..3 {
            if self.log_scale[i] < self.log_scale[k] {
                k = i;
            }
        }
        k
    }

    /// Normal of the flattened disk in world space, oriented toward the camera center.
    pub fn flat_normal(&self, cam: &Camera) -> Vec3 {
        let (n, _) = self.flat_normal_with_sign(&cam.center());
        n
    }

    /// Flat normal plus the sign (±1) applied to the rotation column.
    pub(crate) fn flat_normal_with_sign(&self, cam_center: &Vec3) -> (Vec3, f64) {
        let axis = self.rotation_matrix().column(self.min_scale_axis()).into_owned();
        let sign = if axis.dot(&(cam_center - self.mean)) < 0.0 { -1.0 } else { 1.0 };
        (axis * sign, sign)
    }

    /// Base color seen from `dir` (unit vector from camera to primitive), before clamping.
    pub fn raw_color(&self, degree: u8, dir: &Vec3) -> [f64; 3] {
        let b = sh::basis(degree, dir);
        let n = sh::coeff_count(degree);
        let mut out = [0.5; 3];
        for c in 0..3 {
            for k in 0..n {
                out[c] += self.sh[c][k] * b[k];
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.mean.iter().all(|v| v.is_finite())
            && self.rotation.iter().all(|v| v.is_finite())
            && self.log_scale.iter().all(|v| v.is_finite())
            && self.opacity_logit.is_finite()
            && self.sh.iter().flatten().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::quat_from_axis_angle;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn prim(rotation: [f64; 4], scales: [f64; 3]) -> GaussianPrimitive {
        GaussianPrimitive {
            mean: Vec3::zeros(),
            rotation,
            log_scale: Vec3::new(scales[0].ln(), scales[1].ln(), scales[2].ln()),
            opacity_logit: 0.0,
            sh: [[0.0; MAX_SH_COEFFS]; 3],
        }
    }

    fn look_at_origin(center: Vec3) -> Camera {
        Camera::look_at("c", center, Vec3::zeros(), Vec3::new(0.0, 1.0, 0.0), 100.0, 64, 64)
    }

    #[test]
    fn covariance_identity_case() {
        let p = prim([1.0, 0.0, 0.0, 0.0], [1.0, 1.0, 1.0]);
        assert!((p.covariance() - Mat3::identity()).norm() < 1e-15);
    }

    #[test]
    fn covariance_isotropic_is_rotation_invariant() {
        let p = prim(quat_from_axis_angle(Vec3::new(1.0, 2.0, -0.5), 0.9), [0.7, 0.7, 0.7]);
        assert!((p.covariance() - Mat3::identity() * 0.49).norm() < 1e-12);
    }

    #[test]
    fn covariance_matches_explicit_product_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let q: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            let q = normalize_quat(q);
            let s: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.01..3.0));
            let p = prim(q, s);
            // Oracle: explicit Hamilton-product rotation of basis vectors, then
            // Σ = Σ_i s_i² r_i r_iᵀ.
            let rot = |v: [f64; 3]| {
                let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
                let qv = Vec3::new(x, y, z);
                let v = Vec3::from(v);
                let t = qv.cross(&v) * 2.0;
                v + t * w + qv.cross(&t)
            };
            let mut oracle = Mat3::zeros();
            for i in 0..3 {
                let mut e = [0.0; 3];
                e[i] = 1.0;
                let r = rot(e);
                oracle += r * r.transpose() * s[i] * s[i];
            }
            let cov = p.covariance();
            assert!((cov - oracle).norm() < 1e-12 * (1.0 + oracle.norm()));
            assert!((cov - cov.transpose()).norm() < 1e-12);
        }
    }

    #[test]
    fn evaluate_closed_forms() {
        let p = prim([1.0, 0.0, 0.0, 0.0], [1.0, 1.0, 1.0]);
        assert_eq!(p.evaluate(&Vec3::zeros()).unwrap(), 1.0);
        let v = p.evaluate(&Vec3::new(1.0, 1.0, 0.0)).unwrap();
        assert!((v - (-1.0f64).exp()).abs() < 1e-15);
        let p = prim([1.0, 0.0, 0.0, 0.0], [2.0, 1.0, 1.0]);
        let v = p.evaluate(&Vec3::new(2.0, 0.0, 0.0)).unwrap();
        assert!((v - (-0.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn evaluate_rejects_degenerate_scale() {
        let p = prim([1.0, 0.0, 0.0, 0.0], [1.0, 1.0, 1e-9]);
        assert!(matches!(p.evaluate(&Vec3::zeros()), Err(Error::DegenerateScale { .. })));
    }

    #[test]
    fn flat_normal_points_at_camera() {
        let p = prim([1.0, 0.0, 0.0, 0.0], [1.0, 1.0, 0.01]);
        let n = p.flat_normal(&look_at_origin(Vec3::new(0.0, 0.0, 5.0)));
        assert!((n - Vec3::new(0.0, 0.0, 1.0)).norm() < 1e-12);
        let n = p.flat_normal(&look_at_origin(Vec3::new(0.0, 0.0, -5.0)));
        assert!((n - Vec3::new(0.0, 0.0, -1.0)).norm() < 1e-12);
    }

    #[test]
    fn flat_normal_follows_rotation() {
        let q = quat_from_axis_angle(Vec3::x(), std::f64::consts::FRAC_PI_2);
        let p = prim(q, [1.0, 0.01, 1.0]);
        // Oracle: rotate the local y axis by the quaternion (v' = q v q*).
        let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
        let qv = Vec3::new(x, y, z);
        let t = qv.cross(&Vec3::y()) * 2.0;
        let expected = Vec3::y() + t * w + qv.cross(&t);
        let cam = look_at_origin(expected * 5.0 + Vec3::new(0.1, 0.0, 0.0));
        let n = p.flat_normal(&cam);
        assert!((n - expected).norm() < 1e-12);
        assert!((n.norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn min_axis_ties_break_low() {
        let p = prim([1.0, 0.0, 0.0, 0.0], [0.5, 0.5, 0.5]);
        assert_eq!(p.min_scale_axis(), 0);
        let p = prim([1.0, 0.0, 0.0, 0.0], [0.5, 0.2, 0.2]);
        assert_eq!(p.min_scale_axis(), 1);
    }
}
