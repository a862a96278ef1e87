//! Camera covisibility with the global model, by frustum against its
//! bounding box or by the share of a view the model already covers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{Aabb, Vec3};
use crate::raster::{render, RenderConfig};
use crate::scene::{Camera, GaussianModel};

/// How a local camera is judged to overlap the global model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapMode {
    /// The camera frustum meets the global bounding box.
    Frustum,
    /// The global model renders opaque over a minimum share of the image.
    #[default]
    Coverage,
}

/// Closed viewing frustum between two depths along the optical axis.
#[derive(Clone, Debug, PartialEq)]
pub struct Frustum {
    /// Near corners then far corners, each in image order (0,0) (W,0) (W,H) (0,H).
    pub corners: [Vec3; 8],
    pub near: f64,
    pub far: f64,
}

impl Frustum {
    pub fn new(cam: &Camera, near: f64, far: f64) -> Frustum {
        let kinv = cam.intrinsics_inverse();
        let rt = cam.rotation.transpose();
        let (w, h) = (cam.width as f64, cam.height as f64);
        let img = [(0.0, 0.0), (w, 0.0), (w, h), (0.0, h)];
        let mut corners = [Vec3::zeros(); 8];
        for (k, z) in [near, far].into_iter().enumerate() {
            for (i, &(u, v)) in img.iter().enumerate() {
                let xc = kinv * Vec3::new(u, v, 1.0) * z;
                corners[4 * k + i] = rt * (xc - cam.translation);
            }
        }
        Frustum { corners, near, far }
    }

    /// Point-in-frustum test in the camera's own coordinates.
    pub fn contains(cam: &Camera, near: f64, far: f64, p: &Vec3) -> bool {
        let c = cam.to_camera(p);
        if c.z < near || c.z > far {
            return false;
        }
        let u = cam.fx * c.x / c.z + cam.cx;
        let v = cam.fy * c.y / c.z + cam.cy;
        (0.0..=cam.width as f64).contains(&u) && (0.0..=cam.height as f64).contains(&v)
    }

    fn face_normals(&self) -> [Vec3; 5] {
        let c = &self.corners;
        let face = |a: usize, b: usize, d: usize| (c[b] - c[a]).cross(&(c[d] - c[a]));
        [
            face(0, 1, 3),
            face(0, 4, 1),
            face(1, 5, 2),
            face(2, 6, 3),
            face(3, 7, 0),
        ]
    }

    fn edge_dirs(&self) -> [Vec3; 6] {
        let c = &self.corners;
        [c[4] - c[0], c[5] - c[1], c[6] - c[2], c[7] - c[3], c[1] - c[0], c[3] - c[0]]
    }

    /// Exact convex intersection test against a box (separating axes).
    pub fn intersects(&self, b: &Aabb) -> bool {
        if b.is_empty() {
            return false;
        }
        let box_pts = b.corners();
        let mut axes: Vec<Vec3> = vec![Vec3::x(), Vec3::y(), Vec3::z()];
        axes.extend(self.face_normals());
        for e in self.edge_dirs() {
            for a in [Vec3::x(), Vec3::y(), Vec3::z()] {
                axes.push(a.cross(&e));
            }
        }
        for axis in axes {
            let len = axis.norm();
            if len < 1e-12 {
                continue;
            }
            let axis = axis / len;
            let span = |pts: &[Vec3]| {
                pts.iter()
                    .map(|p| p.dot(&axis))
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), d| (lo.min(d), hi.max(d)))
            };
            let (a0, a1) = span(&self.corners);
            let (b0, b1) = span(&box_pts);
            if a1 < b0 || b1 < a0 {
                return false;
            }
        }
        true
    }
}

/// Frustum depth range used for covisibility: `near_fraction·D` to
/// `far_diagonals·D` for the box diagonal `D`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OverlapParams {
    pub near_fraction: f64,
    pub far_diagonals: f64,
}

impl Default for OverlapParams {
    fn default() -> Self {
        OverlapParams {
            near_fraction: 0.01,
            far_diagonals: 2.0,
        }
    }
}

/// Cameras of `local` whose frustum meets `global_extent`; empty for an empty box.
pub fn camera_overlap(local: &[Camera], global_extent: &Aabb, params: OverlapParams) -> Vec<Camera> {
    if global_extent.is_empty() {
        return Vec::new();
    }
    let d = global_extent.diagonal().max(1e-9);
    let (near, far) = (params.near_fraction * d, params.far_diagonals * d);
    local
        .iter()
        .filter(|c| Frustum::new(c, near, far).intersects(global_extent))
        .cloned()
        .collect()
}

/// Share of pixels of `cam` where `global` accumulates at least `min_alpha`.
pub fn covered_fraction(global: &GaussianModel, cam: &Camera, cfg: &RenderConfig, min_alpha: f64) -> f64 {
    if global.is_empty() {
        return 0.0;
    }
    let b = render(global, cam, &cfg.forward_only());
    let n = b.alpha.iter().filter(|&&a| a >= min_alpha).count();
    n as f64 / b.alpha.len().max(1) as f64
}

/// Cameras of `local` for which `global` covers at least `min_fraction` of
/// the pixels with accumulated opacity `min_alpha` or more.
pub fn coverage_overlap(local: &[Camera], global: &GaussianModel, cfg: &RenderConfig, min_alpha: f64, min_fraction: f64) -> Vec<Camera> {
    local
        .iter()
        .filter(|c| !global.is_empty() && covered_fraction(global, c, cfg, min_alpha) >= min_fraction)
        .cloned()
        .collect()
}

/// Share of the local cameras that overlap the global model.
pub fn psi(local: &[Camera], overlap: &[Camera]) -> Result<f64> {
    if local.is_empty() {
        return Err(Error::NoCameras("local camera set for the overlap ratio".into()));
    }
    Ok(overlap.len() as f64 / local.len() as f64)
}
