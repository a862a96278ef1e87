use crate::image::{tonemap_depth, ImageBuf};
use crate::raster::backward::BufferGrads;
use crate::raster::render::RenderBuffers;
use crate::scene::Camera;

/// Pixels with less accumulated opacity than this carry no depth.
pub const DEPTH_MIN_ALPHA: f64 = 1e-3;
/// Pixels whose normal is this close to perpendicular to the ray carry no depth.
pub const DEPTH_MIN_COS: f64 = 1e-4;

/// Ray-distance depth recovered from the plane buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub depth: Vec<f64>,
    pub valid: Vec<bool>,
}

impl DepthMap {
    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    pub fn tonemap(&self) -> ImageBuf {
        tonemap_depth(&self.depth, &self.valid, self.width, self.height)
    }

    /// Single-channel image with invalid pixels set to zero.
    pub fn as_image(&self) -> ImageBuf {
        ImageBuf {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self.depth.iter().zip(&self.valid).map(|(d, &v)| if v { *d } else { 0.0 }).collect(),
        }
    }
}

/// `D(p) = P(p) / (N(p) · r(p))` with `r` the unit pixel ray. `N` is the
/// blended normal before normalization, so the accumulated opacity cancels
/// between numerator and denominator.
pub fn unbiased_depth(buffers: &RenderBuffers, cam: &Camera) -> DepthMap {
    let (w, h) = (buffers.width, buffers.height);
    let mut depth = vec![0.0; w * h];
    let mut valid = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if buffers.alpha[i] < DEPTH_MIN_ALPHA {
                continue;
            }
            let cos = buffers.normal_raw[i].dot(&cam.pixel_ray(x, y));
            if cos.abs() < DEPTH_MIN_COS {
                continue;
            }
            let d = buffers.plane_distance[i] / cos;
            if d > 0.0 && d.is_finite() {
                depth[i] = d;
                valid[i] = true;
            }
        }
    }
    DepthMap {
        width: w,
        height: h,
        depth,
        valid,
    }
}

/// Adds the pull-back of `g_depth` (ignored on invalid pixels) to the plane
/// and raw-normal gradients.
pub fn unbiased_depth_backward(
    buffers: &RenderBuffers,
    cam: &Camera,
    depth: &DepthMap,
    g_depth: &[f64],
    out: &mut BufferGrads,
) {
    let w = buffers.width;
    for (i, &g) in g_depth.iter().enumerate() {
        if g == 0.0 || !depth.valid[i] {
            continue;
        }
        let r = cam.pixel_ray(i % w, i / w);
        let cos = buffers.normal_raw[i].dot(&r);
        out.plane_distance[i] += g / cos;
        let k = -g * buffers.plane_distance[i] / (cos * cos);
        for c in 0..3 {
            out.normal_raw[3 * i + c] += k * r[c];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{quat_from_axis_angle, Vec3};
    use crate::raster::{render, RenderConfig};
    use crate::scene::{GaussianModel, GaussianPrimitive};
    use crate::test_util::front_camera;

    fn disk(center: Vec3, rotation: [f64; 4], radius: f64, opacity: f64) -> GaussianPrimitive {
        let mut p = GaussianPrimitive::isotropic(center, radius, opacity, [0.5; 3]);
        p.rotation = rotation;
        p.log_scale.z = (1e-4f64).ln();
        p
    }

    #[test]
    fn fronto_parallel_disk_gives_its_depth() {
        let cam = front_camera("c", 32);
        let m = GaussianModel::from_primitives("m", 0, vec![disk(Vec3::zeros(), [1.0, 0.0, 0.0, 0.0], 2.0, 0.99)]).unwrap();
        let b = render(&m, &cam, &RenderConfig::default());
        let d = unbiased_depth(&b, &cam);
        for (x, y) in [(15, 15), (16, 16), (3, 20)] {
            let i = y * 32 + x;
            assert!(d.valid[i]);
            // Ray distance to z = 4 along the pixel ray.
            let expect = 4.0 / cam.pixel_ray(x, y).z;
            assert!((d.depth[i] - expect).abs() < 1e-3);
        }
        assert!((d.depth[15 * 32 + 15] - 4.0).abs() < 1e-3);
    }

    #[test]
    fn empty_pixel_is_invalid() {
        let cam = front_camera("c", 16);
        let m = GaussianModel::new("e", 0).unwrap();
        let d = unbiased_depth(&render(&m, &cam, &RenderConfig::default()), &cam);
        assert_eq!(d.valid_count(), 0);
    }

    #[test]
    fn tilted_plane_matches_ray_plane_oracle() {
        let cam = front_camera("c", 32);
        let q = quat_from_axis_angle(Vec3::new(1.0, 0.5, 0.0), 0.5);
        let rot = crate::math::quat_to_matrix(q);
        let normal = rot.column(2).into_owned();
        let (u_axis, v_axis) = (rot.column(0).into_owned(), rot.column(1).into_owned());
        let mut prims = Vec::new();
        for i in -4..=4 {
            for j in -4..=4 {
                let c = u_axis * (0.3 * i as f64) + v_axis * (0.3 * j as f64);
                prims.push(disk(c, q, 0.25, 0.9));
            }
        }
        let m = GaussianModel::from_primitives("m", 0, prims).unwrap();
        let b = render(&m, &cam, &RenderConfig::default());
        let d = unbiased_depth(&b, &cam);
        let center = cam.center();
        let mut checked = 0;
        for y in 0..32 {
            for x in 0..32 {
                let i = y * 32 + x;
                if !d.valid[i] {
                    continue;
                }
                let r = cam.rotation.transpose() * cam.pixel_ray(x, y);
                let t = normal.dot(&(-center)) / normal.dot(&r);
                assert!((d.depth[i] - t).abs() <= 0.01 * t, "pixel ({x},{y}): {} vs {t}", d.depth[i]);
                checked += 1;
            }
        }
        assert!(checked > 500);
    }
}
