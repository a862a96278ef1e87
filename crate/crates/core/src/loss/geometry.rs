//! Flattening and single-view geometric losses.

use crate::error::{Error, Result};
use crate::image::ImageBuf;
use crate::math::Vec3;
use crate::raster::{unbiased_depth, unbiased_depth_backward, BufferGrads, DepthMap, RenderBuffers};
use crate::scene::{Camera, GaussianModel};

/// Mean over primitives of the smallest activated scale.
pub fn scale_loss(model: &GaussianModel) -> Result<f64> {
    if model.is_empty() {
        return Err(Error::EmptyModel);
    }
    let s: f64 = model.primitives.iter().map(|p| p.scales().min()).sum();
    Ok(s / model.len() as f64)
}

/// Gradient of `weight · scale_loss` with respect to each primitive's log-scales.
pub fn scale_loss_grad(model: &GaussianModel, weight: f64) -> Vec<Vec3> {
    let k = weight / model.len().max(1) as f64;
    model
        .primitives
        .iter()
        .map(|p| {
            let mut g = Vec3::zeros();
            let a = p.min_scale_axis();
            g[a] = k * p.log_scale[a].exp();
            g
        })
        .collect()
}

/// Normals estimated from a depth map by finite differences of back-projected points.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthNormals {
    pub width: usize,
    pub height: usize,
    pub normal: Vec<Vec3>,
    pub valid: Vec<bool>,
}

/// `N_s = normalize(dy × dx)` with central differences of the camera-frame
/// back-projections; points toward the camera for visible surfaces. Border
/// pixels and pixels next to invalid depth are invalid.
pub fn depth_to_normal(depth: &DepthMap, cam: &Camera) -> DepthNormals {
    let (w, h) = (depth.width, depth.height);
    let mut normal = vec![Vec3::zeros(); w * h];
    let mut valid = vec![false; w * h];
    let point = |x: usize, y: usize| cam.pixel_ray(x, y) * depth.depth[y * w + x];
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            let i = y * w + x;
            if !(depth.valid[i]
                && depth.valid[i - 1]
                && depth.valid[i + 1]
                && depth.valid[i - w]
                && depth.valid[i + w])
            {
                continue;
            }
            let dx = point(x + 1, y) - point(x - 1, y);
            let dy = point(x, y + 1) - point(x, y - 1);
            let c = dy.cross(&dx);
            let len = c.norm();
            if len > 1e-20 {
                normal[i] = c / len;
                valid[i] = true;
            }
        }
    }
    DepthNormals {
        width: w,
        height: h,
        normal,
        valid,
    }
}

/// Pulls a gradient on the estimated normals back to the depth map.
pub fn depth_to_normal_backward(depth: &DepthMap, cam: &Camera, g_normal: &[Vec3]) -> Vec<f64> {
    let (w, h) = (depth.width, depth.height);
    let mut g_point = vec![Vec3::zeros(); w * h];
    let point = |x: usize, y: usize| cam.pixel_ray(x, y) * depth.depth[y * w + x];
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            let i = y * w + x;
            let g = g_normal[i];
            if g == Vec3::zeros() {
                continue;
            }
            let dx = point(x + 1, y) - point(x - 1, y);
            let dy = point(x, y + 1) - point(x, y - 1);
            let c = dy.cross(&dx);
            let len = c.norm();
            let n = c / len;
            let g_c = (g - n * n.dot(&g)) / len;
            let g_dy = dx.cross(&g_c);
            let g_dx = g_c.cross(&dy);
            g_point[i + 1] += g_dx;
            g_point[i - 1] -= g_dx;
            g_point[i + w] += g_dy;
            g_point[i - w] -= g_dy;
        }
    }
    (0..w * h)
        .map(|i| g_point[i].dot(&cam.pixel_ray(i % w, i / w)))
        .collect()
}

fn normal_at(img: &ImageBuf, i: usize) -> Vec3 {
    Vec3::new(img.data[3 * i], img.data[3 * i + 1], img.data[3 * i + 2])
}

#[inline]
fn sgn(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Mean over valid `N_s` pixels of `|N_s·N| · ‖N_s − N‖₁`, plus the pixel count.
pub fn svg_value(ns: &DepthNormals, normal: &ImageBuf) -> (f64, usize) {
    let mut sum = 0.0;
    let mut count = 0;
    for i in 0..ns.normal.len() {
        if !ns.valid[i] {
            continue;
        }
        let a = ns.normal[i];
        let b = normal_at(normal, i);
        sum += a.dot(&b).abs() * (a - b).abs().sum();
        count += 1;
    }
    (if count > 0 { sum / count as f64 } else { 0.0 }, count)
}

pub fn svg_loss(buffers: &RenderBuffers, cam: &Camera) -> f64 {
    let depth = unbiased_depth(buffers, cam);
    svg_value(&depth_to_normal(&depth, cam), &buffers.normal).0
}

/// Evaluates the single-view loss and adds `weight ·` its gradient to `out`.
pub fn svg_loss_with_grad(buffers: &RenderBuffers, cam: &Camera, weight: f64, out: &mut BufferGrads) -> f64 {
    let depth = unbiased_depth(buffers, cam);
    let ns = depth_to_normal(&depth, cam);
    let (value, count) = svg_value(&ns, &buffers.normal);
    if count == 0 || weight == 0.0 {
        return value;
    }
    let k = weight / count as f64;
    let mut g_ns = vec![Vec3::zeros(); ns.normal.len()];
    for i in 0..ns.normal.len() {
        if !ns.valid[i] {
            continue;
        }
        let a = ns.normal[i];
        let b = normal_at(&buffers.normal, i);
        let dot = a.dot(&b);
        let diff = a - b;
        let l1 = diff.abs().sum();
        let sd = diff.map(sgn);
        g_ns[i] = (b * (sgn(dot) * l1) + sd * dot.abs()) * k;
        let gb = (a * (sgn(dot) * l1) - sd * dot.abs()) * k;
        for c in 0..3 {
            out.normal[3 * i + c] += gb[c];
        }
    }
    let g_depth = depth_to_normal_backward(&depth, cam, &g_ns);
    unbiased_depth_backward(buffers, cam, &depth, &g_depth, out);
    value
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::GaussianPrimitive;
    use crate::test_util::front_camera;

    fn depth_from(cam: &Camera, f: impl Fn(Vec3) -> Option<f64>) -> DepthMap {
        let (w, h) = (cam.width as usize, cam.height as usize);
        let mut depth = vec![0.0; w * h];
        let mut valid = vec![false; w * h];
        for y in 0..h {
            for x in 0..w {
                if let Some(d) = f(cam.pixel_ray(x, y)) {
                    depth[y * w + x] = d;
                    valid[y * w + x] = true;
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

    #[test]
    fn scale_loss_examples() {
        let mut p = GaussianPrimitive::isotropic(Vec3::zeros(), 1.0, 0.5, [0.5; 3]);
        p.log_scale = Vec3::new(1f64.ln(), 2f64.ln(), 3f64.ln());
        let m = GaussianModel::from_primitives("m", 0, vec![p]).unwrap();
        assert!((scale_loss(&m).unwrap() - 1.0).abs() < 1e-15);
        p.log_scale.y = crate::scene::SCALE_FLOOR.ln();
        let m = GaussianModel::from_primitives("m", 0, vec![p]).unwrap();
        assert!((scale_loss(&m).unwrap() - crate::scene::SCALE_FLOOR).abs() < 1e-18);
        assert!(matches!(scale_loss(&GaussianModel::new("e", 0).unwrap()), Err(Error::EmptyModel)));
    }

    #[test]
    fn scale_loss_matches_brute_force_mean() {
        let m = crate::test_util::random_model(9, 30, 1);
        let mut sum = 0.0;
        for p in &m.primitives {
            let s = [p.log_scale.x.exp(), p.log_scale.y.exp(), p.log_scale.z.exp()];
            sum += s[0].min(s[1]).min(s[2]);
        }
        assert!((scale_loss(&m).unwrap() - sum / 30.0).abs() < 1e-15);
    }

    #[test]
    fn flat_depth_gives_view_axis_normal() {
        let cam = front_camera("c", 16);
        let d = depth_from(&cam, |r| Some(3.0 / r.z));
        let ns = depth_to_normal(&d, &cam);
        for y in 1..15 {
            for x in 1..15 {
                let n = ns.normal[y * 16 + x];
                assert!(ns.valid[y * 16 + x]);
                assert!((n - Vec3::new(0.0, 0.0, -1.0)).norm() < 1e-9);
            }
        }
        assert!(!ns.valid[0] && !ns.valid[15] && !ns.valid[16 * 8]);
    }

    #[test]
    fn tilted_plane_normal_matches_plane() {
        let cam = front_camera("c", 24);
        // Plane n·X = -2 in the camera frame with n facing the camera.
        let n = Vec3::new(0.3, -0.2, -1.0).normalize();
        let d = depth_from(&cam, |r| Some(-2.0 / n.dot(&r)));
        let ns = depth_to_normal(&d, &cam);
        for i in 0..ns.normal.len() {
            if ns.valid[i] {
                assert!((ns.normal[i] - n).norm() < 1e-3);
            }
        }
    }

    #[test]
    fn svg_examples() {
        let cam = front_camera("c", 8);
        let d = depth_from(&cam, |r| Some(3.0 / r.z));
        let ns = depth_to_normal(&d, &cam);
        let mut same = ImageBuf::new(8, 8, 3);
        let mut perp = ImageBuf::new(8, 8, 3);
        for i in 0..64 {
            same.data[3 * i + 2] = -1.0;
            perp.data[3 * i] = 1.0;
        }
        assert_eq!(svg_value(&ns, &same).0, 0.0);
        assert_eq!(svg_value(&ns, &perp).0, 0.0);
    }

    #[test]
    fn svg_matches_per_pixel_oracle() {
        let cam = front_camera("c", 12);
        let n = Vec3::new(0.1, 0.2, -1.0).normalize();
        let d = depth_from(&cam, |r| Some(-2.0 / n.dot(&r)));
        let ns = depth_to_normal(&d, &cam);
        let mut img = ImageBuf::new(12, 12, 3);
        for i in 0..144 {
            let v = Vec3::new((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos(), -1.0).normalize();
            img.data[3 * i..3 * i + 3].copy_from_slice(v.as_slice());
        }
        let mut sum = 0.0;
        let mut cnt = 0;
        for i in 0..144 {
            if ns.valid[i] {
                let a = ns.normal[i];
                let b = Vec3::new(img.data[3 * i], img.data[3 * i + 1], img.data[3 * i + 2]);
                let l1 = (a.x - b.x).abs() + (a.y - b.y).abs() + (a.z - b.z).abs();
                sum += (a.x * b.x + a.y * b.y + a.z * b.z).abs() * l1;
                cnt += 1;
            }
        }
        assert_eq!(cnt, 100);
        assert!((svg_value(&ns, &img).0 - sum / cnt as f64).abs() < 1e-12);
    }

    #[test]
    fn depth_normal_backward_matches_finite_differences() {
        let cam = front_camera("c", 10);
        let n = Vec3::new(0.2, 0.1, -1.0).normalize();
        let mut d = depth_from(&cam, |r| Some(-2.0 / n.dot(&r)));
        for (i, v) in d.depth.iter_mut().enumerate() {
            *v += 0.05 * (i as f64 * 1.7).sin();
        }
        let probe: Vec<Vec3> = (0..100).map(|i| Vec3::new((i as f64).sin(), (i as f64 * 0.3).cos(), 0.5)).collect();
        let f = |dm: &DepthMap| {
            let ns = depth_to_normal(dm, &cam);
            (0..100).filter(|&i| ns.valid[i]).map(|i| ns.normal[i].dot(&probe[i])).sum::<f64>()
        };
        let ns = depth_to_normal(&d, &cam);
        let g: Vec<Vec3> = (0..100).map(|i| if ns.valid[i] { probe[i] } else { Vec3::zeros() }).collect();
        let grad = depth_to_normal_backward(&d, &cam, &g);
        let h = 1e-6;
        for i in 0..100 {
            let mut up = d.clone();
            up.depth[i] += h;
            let mut dn = d.clone();
            dn.depth[i] -= h;
            let fd = (f(&up) - f(&dn)) / (2.0 * h);
            assert!((grad[i] - fd).abs() < 1e-6 + 1e-5 * fd.abs(), "{i}: {} vs {fd}", grad[i]);
        }
    }
}
