use crate::math::{Mat3, Vec3};
use crate::raster::RenderConfig;
use crate::scene::{Camera, GaussianPrimitive};

/// Screen-space footprint of one primitive.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectedGaussian {
    pub mean2d: [f64; 2],
    /// `[xx, xy, yy]`, low-pass included.
    pub cov2d: [f64; 3],
    pub view_depth: f64,
    /// Kernel cutoff radius in pixels (3σ of the major axis by default).
    pub footprint_radius: f64,
}

/// Everything the compositor and the backward pass need about one visible primitive.
#[derive(Clone, Debug)]
pub(crate) struct Splat {
    pub index: u32,
    pub mean2d: [f64; 2],
    /// Inverse of the 2D covariance, `[a, b, c]` for `[[a, b], [b, c]]`.
    pub conic: [f64; 3],
    pub opacity: f64,
    pub color: [f64; 3],
    /// Raw color was inside [0, 1] (gradient passes through the clamp).
    pub color_active: [bool; 3],
    pub normal_cam: Vec3,
    pub plane_distance: f64,
    pub depth: f64,
    /// Inclusive pixel rectangle `[x0, x1, y0, y1]`.
    pub bbox: [usize; 4],
    pub footprint_radius: f64,
    pub cov2d: [f64; 3],
    pub mean_cam: Vec3,
    pub view_dir: Vec3,
    pub view_dist: f64,
    pub normal_sign: f64,
    pub normal_axis: usize,
}

impl Splat {
    pub fn projected(&self) -> ProjectedGaussian {
        ProjectedGaussian {
            mean2d: self.mean2d,
            cov2d: self.cov2d,
            view_depth: self.depth,
            footprint_radius: self.footprint_radius,
        }
    }

    /// Truncated kernel value at continuous pixel coordinates; zero outside the cutoff ellipse.
    #[inline]
    pub fn kernel(&self, u: f64, v: f64, cutoff_sq: f64) -> f64 {
        kernel(self.mean2d, self.conic, u, v, cutoff_sq)
    }
}

#[inline]
pub(crate) fn kernel(mean: [f64; 2], conic: [f64; 3], u: f64, v: f64, cutoff_sq: f64) -> f64 {
    let dx = u - mean[0];
    let dy = v - mean[1];
    let power = conic[0] * dx * dx + 2.0 * conic[1] * dx * dy + conic[2] * dy * dy;
    if power > cutoff_sq {
        0.0
    } else {
        (-0.5 * power).exp()
    }
}

/// First-order (EWA) projection of a primitive; `None` when culled by the
/// near plane or when its footprint misses the image.
pub fn project(p: &GaussianPrimitive, cam: &Camera, cfg: &RenderConfig) -> Option<ProjectedGaussian> {
    project_splat(p, 0, cam, 0, cfg).map(|s| s.projected())
}

pub(crate) fn project_splat(
    p: &GaussianPrimitive,
    index: u32,
    cam: &Camera,
    sh_degree: u8,
    cfg: &RenderConfig,
) -> Option<Splat> {
    let w = &cam.rotation;
    let mc = cam.to_camera(&p.mean);
    if mc.z <= cfg.near {
        return None;
    }
    let (x, y, z) = (mc.x, mc.y, mc.z);
    let (fx, fy) = (cam.fx, cam.fy);
    let jac = nalgebra::Matrix2x3::new(fx / z, 0.0, -fx * x / (z * z), 0.0, fy / z, -fy * y / (z * z));
    let sigma = p.covariance();
    let m: Mat3 = w * sigma * w.transpose();
    let c2 = jac * m * jac.transpose();
    let cov2d = [c2[(0, 0)] + cfg.lowpass, c2[(0, 1)], c2[(1, 1)] + cfg.lowpass];
    let det = cov2d[0] * cov2d[2] - cov2d[1] * cov2d[1];
    if !(det > 0.0) {
        return None;
    }
    let conic = [cov2d[2] / det, -cov2d[1] / det, cov2d[0] / det];
    let mid = 0.5 * (cov2d[0] + cov2d[2]);
    let lambda_max = mid + (mid * mid - det).max(0.0).sqrt();
    let radius = cfg.kernel_cutoff * lambda_max.sqrt();
    let u = fx * x / z + cam.cx;
    let v = fy * y / z + cam.cy;

    // Pixel (i, j) is sampled at (i + 0.5, j + 0.5). The rectangle is padded
    // slightly so rounding never drops a pixel the kernel would reach.
    let r = radius * (1.0 + 1e-9) + 1e-9;
    let x0 = (u - r - 0.5).ceil().max(0.0);
    let x1 = (u + r - 0.5).floor().min(cam.width as f64 - 1.0);
    let y0 = (v - r - 0.5).ceil().max(0.0);
    let y1 = (v + r - 0.5).floor().min(cam.height as f64 - 1.0);
    if !(x0 <= x1 && y0 <= y1) {
        return None;
    }

    let center = cam.center();
    let (normal_world, normal_sign) = p.flat_normal_with_sign(&center);
    let normal_axis = p.min_scale_axis();
    let normal_cam = w * normal_world;
    let offset = p.mean - center;
    let view_dist = offset.norm();
    let view_dir = offset / view_dist;
    let raw = p.raw_color(sh_degree, &view_dir);
    let mut color = [0.0; 3];
    let mut color_active = [false; 3];
    for c in 0..3 {
        color[c] = raw[c].clamp(0.0, 1.0);
        color_active[c] = (0.0..=1.0).contains(&raw[c]);
    }

    Some(Splat {
        index,
        mean2d: [u, v],
        conic,
        opacity: p.opacity(),
        color,
        color_active,
        normal_cam,
        plane_distance: normal_cam.dot(&mc),
        depth: z,
        bbox: [x0 as usize, x1 as usize, y0 as usize, y1 as usize],
        footprint_radius: radius,
        cov2d,
        mean_cam: mc,
        view_dir,
        view_dist,
        normal_sign,
        normal_axis,
    })
}
