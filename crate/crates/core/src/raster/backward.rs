use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::math::{quat_to_matrix_backward, Mat3, Vec3};
use crate::raster::project::Splat;
use crate::raster::render::{RenderBuffers, RenderTrace, TileTrace};
use crate::raster::RenderConfig;
use crate::scene::sh::{self, MAX_SH_COEFFS};
use crate::scene::{Camera, GaussianModel, GaussianPrimitive};

/// Upstream gradients, one entry per pixel (three for color and normals).
#[derive(Clone, Debug, PartialEq)]
pub struct BufferGrads {
    pub rgb: Vec<f64>,
    pub alpha: Vec<f64>,
    /// With respect to the unit normal buffer.
    pub normal: Vec<f64>,
    /// With respect to the blended normal before normalization.
    pub normal_raw: Vec<f64>,
    pub plane_distance: Vec<f64>,
}

impl BufferGrads {
    pub fn zeros(width: usize, height: usize) -> Self {
        let n = width * height;
        BufferGrads {
            rgb: vec![0.0; 3 * n],
            alpha: vec![0.0; n],
            normal: vec![0.0; 3 * n],
            normal_raw: vec![0.0; 3 * n],
            plane_distance: vec![0.0; n],
        }
    }

    pub fn add_assign(&mut self, other: &BufferGrads) {
        let add = |a: &mut Vec<f64>, b: &Vec<f64>| a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        add(&mut self.rgb, &other.rgb);
        add(&mut self.alpha, &other.alpha);
        add(&mut self.normal, &other.normal);
        add(&mut self.normal_raw, &other.normal_raw);
        add(&mut self.plane_distance, &other.plane_distance);
    }
}

/// Number of scalars in one primitive's parameter vector.
pub const PARAM_LEN: usize = 11 + 3 * MAX_SH_COEFFS;

/// Gradient with the same layout as [`GaussianPrimitive`]'s parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ParamGrad {
    pub mean: Vec3,
    pub rotation: [f64; 4],
    pub log_scale: Vec3,
    pub opacity_logit: f64,
    pub sh: [[f64; MAX_SH_COEFFS]; 3],
}

impl Default for ParamGrad {
    fn default() -> Self {
        ParamGrad {
            mean: Vec3::zeros(),
            rotation: [0.0; 4],
            log_scale: Vec3::zeros(),
            opacity_logit: 0.0,
            sh: [[0.0; MAX_SH_COEFFS]; 3],
        }
    }
}

impl ParamGrad {
    pub fn add_scaled(&mut self, other: &ParamGrad, k: f64) {
        self.mean += other.mean * k;
        for i in 0..4 {
            self.rotation[i] += other.rotation[i] * k;
        }
        self.log_scale += other.log_scale * k;
        self.opacity_logit += other.opacity_logit * k;
        for c in 0..3 {
            for j in 0..MAX_SH_COEFFS {
                self.sh[c][j] += other.sh[c][j] * k;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.mean.iter().all(|v| v.is_finite())
            && self.rotation.iter().all(|v| v.is_finite())
            && self.log_scale.iter().all(|v| v.is_finite())
            && self.opacity_logit.is_finite()
            && self.sh.iter().flatten().all(|v| v.is_finite())
    }

    /// Parameters in the fixed order mean, rotation, log_scale, opacity, color.
    pub fn to_array(&self) -> [f64; PARAM_LEN] {
        let mut out = [0.0; PARAM_LEN];
        out[..3].copy_from_slice(self.mean.as_slice());
        out[3..7].copy_from_slice(&self.rotation);
        out[7..10].copy_from_slice(self.log_scale.as_slice());
        out[10] = self.opacity_logit;
        for c in 0..3 {
            out[11 + c * MAX_SH_COEFFS..11 + (c + 1) * MAX_SH_COEFFS].copy_from_slice(&self.sh[c]);
        }
        out
    }
}

/// Parameter gradients plus the screen-space mean gradient used by densification.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub params: Vec<ParamGrad>,
    /// Gradient with respect to the projected mean, in pixels.
    pub mean2d: Vec<[f64; 2]>,
}

impl Gradients {
    pub fn zeros(n: usize) -> Self {
        Gradients {
            params: vec![ParamGrad::default(); n],
            mean2d: vec![[0.0; 2]; n],
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.params.iter_mut().zip(&other.params) {
            a.add_scaled(b, 1.0);
        }
        for (a, b) in self.mean2d.iter_mut().zip(&other.mean2d) {
            a[0] += b[0];
            a[1] += b[1];
        }
    }
}

// Per-splat screen-space accumulator layout.
const M2X: usize = 0;
const M2Y: usize = 1;
const Q00: usize = 2;
const Q01: usize = 3;
const Q11: usize = 4;
const OPA: usize = 5;
const COL: usize = 6;
const NRM: usize = 9;
const PLN: usize = 12;
const ACC: usize = 13;

/// Reverse pass of [`crate::raster::render`]. `buffers` must have been rendered
/// with contributor recording enabled, from the same model, camera and config.
pub fn backward(
    model: &GaussianModel,
    cam: &Camera,
    buffers: &RenderBuffers,
    cfg: &RenderConfig,
    grads: &BufferGrads,
) -> Result<Gradients> {
    let trace = buffers.trace.as_ref().ok_or(Error::MissingContributorLists)?;
    let n_pix = buffers.pixel_count();
    if grads.alpha.len() != n_pix || grads.rgb.len() != 3 * n_pix {
        return Err(Error::ShapeMismatch(format!(
            "gradient buffers sized for {} pixels, render has {n_pix}",
            grads.alpha.len()
        )));
    }

    // Upstream normal gradient through the normalization of the blended normal.
    let g_nraw: Vec<Vec3> = (0..n_pix)
        .map(|i| {
            let direct = Vec3::new(grads.normal_raw[3 * i], grads.normal_raw[3 * i + 1], grads.normal_raw[3 * i + 2]);
            let v = buffers.normal_raw[i];
            let len = v.norm();
            if len <= 1e-12 {
                return direct;
            }
            let n = v / len;
            let g = Vec3::new(grads.normal[3 * i], grads.normal[3 * i + 1], grads.normal[3 * i + 2]);
            direct + (g - n * n.dot(&g)) / len
        })
        .collect();

    let tile_accs: Vec<Vec<[f64; ACC]>> = trace
        .tiles
        .par_iter()
        .map(|tile| tile_backward(trace, tile, buffers.width, cfg, grads, &g_nraw))
        .collect();
    let mut acc = vec![[0.0; ACC]; trace.splats.len()];
    for (tile, local) in trace.tiles.iter().zip(tile_accs) {
        for (slot, vals) in local.iter().enumerate() {
            let dst = &mut acc[tile.bin[slot] as usize];
            for k in 0..ACC {
                dst[k] += vals[k];
            }
        }
    }

    let per_splat: Vec<(u32, ParamGrad, [f64; 2])> = trace
        .splats
        .par_iter()
        .zip(acc.par_iter())
        .map(|(s, a)| {
            let p = &model.primitives[s.index as usize];
            (s.index, splat_backward(p, s, cam, model.sh_degree, a), [a[M2X], a[M2Y]])
        })
        .collect();
    let mut out = Gradients::zeros(model.len());
    for (i, g, m2) in per_splat {
        out.params[i as usize] = g;
        out.mean2d[i as usize] = m2;
    }
    Ok(out)
}

fn tile_backward(
    trace: &RenderTrace,
    tile: &TileTrace,
    width: usize,
    cfg: &RenderConfig,
    grads: &BufferGrads,
    g_nraw: &[Vec3],
) -> Vec<[f64; ACC]> {
    let [x0, x1, y0, y1] = tile.rect;
    let tw = x1 - x0;
    let bg = cfg.background;
    let mut local = vec![[0.0; ACC]; tile.bin.len()];
    for y in y0..y1 {
        for x in x0..x1 {
            let l = (y - y0) * tw + (x - x0);
            let i = y * width + x;
            let range = tile.offsets[l] as usize..tile.offsets[l + 1] as usize;
            if range.is_empty() {
                continue;
            }
            let g_rgb = [grads.rgb[3 * i], grads.rgb[3 * i + 1], grads.rgb[3 * i + 2]];
            let g_n = g_nraw[i];
            let g_p = grads.plane_distance[i];
            let g_a = grads.alpha[i];
            let (u, v) = (x as f64 + 0.5, y as f64 + 0.5);
            // S accumulates g·f over everything behind the current entry, weighted
            // by what that entry lets through.
            let mut behind = 0.0;
            for e in tile.entries[range].iter().rev() {
                let s: &Splat = &trace.splats[e.splat as usize];
                let gf = g_rgb[0] * (s.color[0] - bg[0])
                    + g_rgb[1] * (s.color[1] - bg[1])
                    + g_rgb[2] * (s.color[2] - bg[2])
                    + g_n.dot(&s.normal_cam)
                    + g_p * s.plane_distance
                    + g_a;
                let d_alpha = e.transmittance * (gf - behind);
                behind = e.alpha * gf + (1.0 - e.alpha) * behind;
                let wgt = e.alpha * e.transmittance;
                let a = &mut local[e.slot as usize];
                for c in 0..3 {
                    a[COL + c] += wgt * g_rgb[c];
                    a[NRM + c] += wgt * g_n[c];
                }
                a[PLN] += wgt * g_p;
                a[OPA] += e.kernel * d_alpha;
                let d_kernel = s.opacity * d_alpha;
                let dx = u - s.mean2d[0];
                let dy = v - s.mean2d[1];
                let q = s.conic;
                a[M2X] += d_kernel * e.kernel * (q[0] * dx + q[1] * dy);
                a[M2Y] += d_kernel * e.kernel * (q[1] * dx + q[2] * dy);
                let k = -0.5 * d_kernel * e.kernel;
                a[Q00] += k * dx * dx;
                a[Q01] += k * dx * dy;
                a[Q11] += k * dy * dy;
            }
        }
    }
    local
}

/// Chains screen-space gradients of one splat back to its parameters.
fn splat_backward(p: &GaussianPrimitive, s: &Splat, cam: &Camera, degree: u8, a: &[f64; ACC]) -> ParamGrad {
    let mut g = ParamGrad::default();
    let w = &cam.rotation;
    let mc = s.mean_cam;
    let (x, y, z) = (mc.x, mc.y, mc.z);
    let (fx, fy) = (cam.fx, cam.fy);

    // Conic → 2D covariance: dΣ = -Q dQ Q in matrix form.
    let q = nalgebra::Matrix2::new(s.conic[0], s.conic[1], s.conic[1], s.conic[2]);
    let gq = nalgebra::Matrix2::new(a[Q00], a[Q01], a[Q01], a[Q11]);
    let g_cov = -(q * gq * q);

    let jac = nalgebra::Matrix2x3::new(fx / z, 0.0, -fx * x / (z * z), 0.0, fy / z, -fy * y / (z * z));
    let r = p.rotation_matrix();
    let sc = p.scales();
    let s2 = Mat3::from_diagonal(&sc.component_mul(&sc));
    let sigma = r * s2 * r.transpose();
    let m = w * sigma * w.transpose();
    let g_m = jac.transpose() * g_cov * jac;
    let g_j = 2.0 * g_cov * jac * m;
    let g_sigma = w.transpose() * g_m * w;

    let mut g_r = 2.0 * g_sigma * r * s2;
    let rgr = r.transpose() * g_sigma * r;
    for j in 0..3 {
        g.log_scale[j] = rgr[(j, j)] * 2.0 * sc[j] * sc[j];
    }

    // Camera-space mean through the projection and the Jacobian.
    let z2 = z * z;
    let z3 = z2 * z;
    let mut g_mc = Vec3::new(
        a[M2X] * fx / z - g_j[(0, 2)] * fx / z2,
        a[M2Y] * fy / z - g_j[(1, 2)] * fy / z2,
        -a[M2X] * fx * x / z2 - a[M2Y] * fy * y / z2 - g_j[(0, 0)] * fx / z2
            + g_j[(0, 2)] * 2.0 * fx * x / z3
            - g_j[(1, 1)] * fy / z2
            + g_j[(1, 2)] * 2.0 * fy * y / z3,
    );

    // Plane distance d = n_c · μ_c and the flat normal n_w = ±R e_k.
    let g_nc = Vec3::new(a[NRM], a[NRM + 1], a[NRM + 2]) + mc * a[PLN];
    g_mc += s.normal_cam * a[PLN];
    let g_nw = w.transpose() * g_nc;
    for row in 0..3 {
        g_r[(row, s.normal_axis)] += s.normal_sign * g_nw[row];
    }

    g.mean = w.transpose() * g_mc;
    g.rotation = quat_to_matrix_backward(p.rotation, &g_r);
    let o = s.opacity;
    g.opacity_logit = a[OPA] * o * (1.0 - o);

    // Color through the clamp and the view-dependent basis.
    let dir = s.view_dir;
    let b = sh::basis(degree, &dir);
    let bg = sh::basis_grad(degree, &dir);
    let n_coeff = sh::coeff_count(degree);
    let mut g_dir = Vec3::zeros();
    for c in 0..3 {
        if !s.color_active[c] {
            continue;
        }
        let gc = a[COL + c];
        for k in 0..n_coeff {
            g.sh[c][k] = gc * b[k];
            g_dir += Vec3::from(bg[k]) * (gc * p.sh[c][k]);
        }
    }
    if degree > 0 {
        g.mean += (g_dir - dir * dir.dot(&g_dir)) / s.view_dist;
    }
    g
}
