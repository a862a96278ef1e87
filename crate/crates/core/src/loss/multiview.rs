//! Plane-induced homographies and the multi-view geometric and photometric
//! consistency terms.

use crate::error::{Error, Result};
use crate::image::{bilinear_taps, ImageBuf};
use crate::loss::jet::{Jet, Scalar};
use crate::math::{Mat3, Vec3};
use crate::raster::{unbiased_depth, RenderBuffers};
use crate::scene::Camera;

/// Plane `{X : n·X = −distance}` in a camera frame, with `n` facing the camera.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlaneHypothesis {
    pub normal: Vec3,
    pub distance: f64,
}

impl PlaneHypothesis {
    /// Plane through the blended raw normal `n_raw` and blended plane distance `p`.
    pub fn from_blend(n_raw: &Vec3, p: f64) -> Option<PlaneHypothesis> {
        let len = n_raw.norm();
        if len <= 1e-12 {
            return None;
        }
        let h = PlaneHypothesis {
            normal: n_raw / len,
            distance: -p / len,
        };
        (h.distance > 1e-9).then_some(h)
    }
}

/// Pose of `to` relative to `from`: `X_to = R X_from + t`.
pub fn relative_pose(from: &Camera, to: &Camera) -> (Mat3, Vec3) {
    let r = to.rotation * from.rotation.transpose();
    (r, to.translation - r * from.translation)
}

/// `H_rn = K_n (R − t nᵀ / d) K_r⁻¹`, scaled so `H[2,2] = 1` when it is nonzero.
pub fn plane_homography(h: &PlaneHypothesis, cam_r: &Camera, cam_n: &Camera) -> Result<Mat3> {
    if !(h.distance.abs() > 1e-12) {
        return Err(Error::DegeneratePlane(h.distance));
    }
    let (r, t) = relative_pose(cam_r, cam_n);
    let m = r - t * h.normal.transpose() / h.distance;
    let mut hm = cam_n.intrinsics() * m * cam_r.intrinsics_inverse();
    let s = hm[(2, 2)];
    if s.abs() > 1e-15 {
        hm /= s;
    }
    Ok(hm)
}

/// Applies a homography to continuous pixel coordinates.
pub fn apply_homography(h: &Mat3, u: f64, v: f64) -> Option<(f64, f64)> {
    let p = h * Vec3::new(u, v, 1.0);
    (p.z.abs() > 1e-12).then(|| (p.x / p.z, p.y / p.z))
}

struct Warp {
    /// Source and destination are the same view, so every plane maps
    /// pixels onto themselves.
    identity: bool,
    rot: Mat3,
    trans: Vec3,
    k_src_inv: Mat3,
    k_dst: Mat3,
}

impl Warp {
    fn new(src: &Camera, dst: &Camera) -> Warp {
        let (rot, trans) = relative_pose(src, dst);
        Warp {
            identity: src.same_geometry(dst),
            rot,
            trans,
            k_src_inv: src.intrinsics_inverse(),
            k_dst: dst.intrinsics(),
        }
    }

    /// Maps `(u, v)` through the plane `(n, dist)` of the source view.
    #[inline]
    fn apply<S: Scalar>(&self, n: &[S; 3], dist: S, u: S, v: S) -> Option<(S, S)> {
        if self.identity {
            return Some((u, v));
        }
        let k = &self.k_src_inv;
        let q: [S; 3] = std::array::from_fn(|i| u * k[(i, 0)] + v * k[(i, 1)] + k[(i, 2)]);
        let nq = n[0] * q[0] + n[1] * q[1] + n[2] * q[2];
        let s = nq / dist;
        let m: [S; 3] = std::array::from_fn(|i| {
            q[0] * self.rot[(i, 0)] + q[1] * self.rot[(i, 1)] + q[2] * self.rot[(i, 2)] - s * self.trans[i]
        });
        let kd = &self.k_dst;
        let h: [S; 3] = std::array::from_fn(|i| m[0] * kd[(i, 0)] + m[1] * kd[(i, 1)] + m[2] * kd[(i, 2)]);
        if h[2].value() <= 1e-12 {
            return None;
        }
        Some((h[0] / h[2], h[1] / h[2]))
    }
}

#[inline]
fn plane_of<S: Scalar>(n_raw: [S; 3], p: S) -> Option<([S; 3], S)> {
    let len = (n_raw[0] * n_raw[0] + n_raw[1] * n_raw[1] + n_raw[2] * n_raw[2]).sqrt();
    if len.value() <= 1e-12 {
        return None;
    }
    let dist = -p / len;
    if dist.value() <= 1e-9 {
        return None;
    }
    Some((n_raw.map(|c| c / len), dist))
}

/// Per-pixel plane parameters of one rendered view: the blended raw normal,
/// the blended plane distance, and where the unbiased depth is defined.
#[derive(Clone, Debug, PartialEq)]
pub struct PlaneMap {
    pub width: usize,
    pub height: usize,
    pub normal: Vec<Vec3>,
    pub distance: Vec<f64>,
    pub valid: Vec<bool>,
}

impl PlaneMap {
    pub fn from_buffers(b: &RenderBuffers, cam: &Camera) -> PlaneMap {
        PlaneMap {
            width: b.width,
            height: b.height,
            normal: b.normal_raw.clone(),
            distance: b.plane_distance.clone(),
            valid: unbiased_depth(b, cam).valid,
        }
    }

    /// Analytic map of a single world plane `{X : n_w·X = c}` seen from `cam`.
    pub fn from_world_plane(cam: &Camera, n_w: &Vec3, c: f64) -> PlaneMap {
        let (w, h) = (cam.width as usize, cam.height as usize);
        let mut n = cam.rotation * n_w;
        let mut d = c - n_w.dot(&cam.center());
        if d > 0.0 {
            n = -n;
            d = -d;
        }
        let mut map = PlaneMap {
            width: w,
            height: h,
            normal: vec![n; w * h],
            distance: vec![d; w * h],
            valid: vec![false; w * h],
        };
        for y in 0..h {
            for x in 0..w {
                let cos = n.dot(&cam.pixel_ray(x, y));
                map.valid[y * w + x] = cos < -1e-4 && d < 0.0;
            }
        }
        map
    }
}

/// Which reference pixels to evaluate: every `stride`-th pixel starting at `offset`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PixelGrid {
    pub stride: usize,
    pub offset: (usize, usize),
}

impl PixelGrid {
    pub const ALL: PixelGrid = PixelGrid {
        stride: 1,
        offset: (0, 0),
    };

    fn pixels(&self, w: usize, h: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        let s = self.stride.max(1);
        (self.offset.1..h)
            .step_by(s)
            .flat_map(move |y| (self.offset.0..w).step_by(s).map(move |x| (x, y)))
    }
}

/// Reference pixels in the valid set with their forward-backward error.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GeoResult {
    pub value: f64,
    pub pixels: Vec<(usize, usize)>,
    pub errors: Vec<f64>,
}

impl GeoResult {
    pub fn count(&self) -> usize {
        self.pixels.len()
    }
}

/// Gradients of a multi-view term with respect to a view's [`PlaneMap`].
#[derive(Clone, Debug, PartialEq)]
pub struct PlaneGrads {
    pub normal: Vec<Vec3>,
    pub distance: Vec<f64>,
}

impl PlaneGrads {
    pub fn zeros(n: usize) -> PlaneGrads {
        PlaneGrads {
            normal: vec![Vec3::zeros(); n],
            distance: vec![0.0; n],
        }
    }
}

const GEO_VARS: usize = 20;

/// Forward-backward reprojection error of reference pixel `(x, y)` and the
/// neighbor pixel indices of the bilinear taps. `None` when the pixel is not
/// usable (invalid plane in either view, or the warp leaves the neighbor).
fn geo_pixel<S: Scalar>(
    x: usize,
    y: usize,
    rmap: &PlaneMap,
    nmap: &PlaneMap,
    fwd: &Warp,
    bwd: &Warp,
) -> Option<(S, [usize; 4])> {
    let i = y * rmap.width + x;
    if !rmap.valid[i] {
        return None;
    }
    let nr = rmap.normal[i];
    let (n, dist) = plane_of(
        [S::seed(nr.x, 0), S::seed(nr.y, 1), S::seed(nr.z, 2)],
        S::seed(rmap.distance[i], 3),
    )?;
    let (u, v) = (x as f64 + 0.5, y as f64 + 0.5);
    let (un, vn) = fwd.apply(&n, dist, S::cst(u), S::cst(v))?;
    let (x0, y0, _, _) = bilinear_taps(un.value(), vn.value(), nmap.width, nmap.height)?;
    let w = nmap.width;
    let taps = [y0 * w + x0, y0 * w + x0 + 1, (y0 + 1) * w + x0, (y0 + 1) * w + x0 + 1];
    if !taps.iter().all(|&t| nmap.valid[t]) {
        return None;
    }
    let fx = un - (x0 as f64 + 0.5);
    let fy = vn - (y0 as f64 + 0.5);
    let one = S::cst(1.0);
    let wts = [(one - fx) * (one - fy), fx * (one - fy), (one - fx) * fy, fx * fy];
    let mut nn = [S::cst(0.0); 3];
    let mut pn = S::cst(0.0);
    for (k, &t) in taps.iter().enumerate() {
        let base = 4 + 4 * k;
        let tn = nmap.normal[t];
        for c in 0..3 {
            nn[c] = nn[c] + wts[k] * S::seed(tn[c], base + c);
        }
        pn = pn + wts[k] * S::seed(nmap.distance[t], base + 3);
    }
    let (n2, dist2) = plane_of(nn, pn)?;
    let (ur, vr) = bwd.apply(&n2, dist2, un, vn)?;
    let du = ur - u;
    let dv = vr - v;
    let e2 = du * du + dv * dv;
    // Below a nanopixel the error is treated as exactly zero (the norm is not
    // differentiable there).
    let e = if e2.value() < 1e-18 { S::cst(0.0) } else { e2.sqrt() };
    Some((e, taps))
}

/// Mean forward-backward reprojection error over the valid set: pixels valid
/// in both views whose error does not exceed `theta`.
pub fn mv_geo_loss(
    rmap: &PlaneMap,
    cam_r: &Camera,
    nmap: &PlaneMap,
    cam_n: &Camera,
    theta: f64,
    grid: PixelGrid,
) -> GeoResult {
    let fwd = Warp::new(cam_r, cam_n);
    let bwd = Warp::new(cam_n, cam_r);
    let mut out = GeoResult::default();
    let mut sum = 0.0;
    for (x, y) in grid.pixels(rmap.width, rmap.height) {
        if let Some((e, _)) = geo_pixel::<f64>(x, y, rmap, nmap, &fwd, &bwd) {
            if e <= theta {
                sum += e;
                out.pixels.push((x, y));
                out.errors.push(e);
            }
        }
    }
    if out.count() > 0 {
        out.value = sum / out.count() as f64;
    }
    out
}

/// [`mv_geo_loss`] plus `weight ·` its gradient with respect to both plane maps.
#[allow(clippy::too_many_arguments)]
pub fn mv_geo_loss_with_grad(
    rmap: &PlaneMap,
    cam_r: &Camera,
    nmap: &PlaneMap,
    cam_n: &Camera,
    theta: f64,
    grid: PixelGrid,
    weight: f64,
    g_ref: &mut PlaneGrads,
    g_nbr: &mut PlaneGrads,
) -> GeoResult {
    let fwd = Warp::new(cam_r, cam_n);
    let bwd = Warp::new(cam_n, cam_r);
    let mut out = GeoResult::default();
    let mut kept: Vec<(usize, Jet<GEO_VARS>, [usize; 4])> = Vec::new();
    for (x, y) in grid.pixels(rmap.width, rmap.height) {
        if let Some((e, taps)) = geo_pixel::<Jet<GEO_VARS>>(x, y, rmap, nmap, &fwd, &bwd) {
            if e.v <= theta {
                out.pixels.push((x, y));
                out.errors.push(e.v);
                kept.push((y * rmap.width + x, e, taps));
            }
        }
    }
    if kept.is_empty() {
        return out;
    }
    out.value = out.errors.iter().sum::<f64>() / kept.len() as f64;
    let k = weight / kept.len() as f64;
    for (i, e, taps) in kept {
        for c in 0..3 {
            g_ref.normal[i][c] += k * e.d[c];
        }
        g_ref.distance[i] += k * e.d[3];
        for (t, &p) in taps.iter().enumerate() {
            let base = 4 + 4 * t;
            for c in 0..3 {
                g_nbr.normal[p][c] += k * e.d[base + c];
            }
            g_nbr.distance[p] += k * e.d[base + 3];
        }
    }
    out
}

/// Zero-mean normalized cross correlation with a variance floor of 1e-8.
pub fn ncc(a: &[f64], b: &[f64]) -> f64 {
    ncc_generic::<f64>(a, b)
}

fn ncc_generic<S: Scalar>(a: &[f64], b: &[S]) -> S {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mut mb = S::cst(0.0);
    for v in b {
        mb = mb + *v;
    }
    let mb = mb / n;
    let mut va = 0.0;
    let mut vb = S::cst(0.0);
    let mut cov = S::cst(0.0);
    for (x, y) in a.iter().zip(b) {
        let da = x - ma;
        let db = *y - mb;
        va += da * da;
        vb = vb + db * db;
        cov = cov + db * da;
    }
    let va = (va / n).max(NCC_VAR_FLOOR);
    let vb = vb / n;
    let vb = if vb.value() < NCC_VAR_FLOOR { S::cst(NCC_VAR_FLOOR) } else { vb };
    cov / n / (vb * va).sqrt()
}

pub const NCC_VAR_FLOOR: f64 = 1e-8;

fn sample<S: Scalar>(img: &ImageBuf, u: S, v: S) -> Option<S> {
    let (x0, y0, _, _) = bilinear_taps(u.value(), v.value(), img.width, img.height)?;
    let fx = u - (x0 as f64 + 0.5);
    let fy = v - (y0 as f64 + 0.5);
    let one = S::cst(1.0);
    let a = img.at(x0, y0, 0);
    let b = img.at(x0 + 1, y0, 0);
    let c = img.at(x0, y0 + 1, 0);
    let d = img.at(x0 + 1, y0 + 1, 0);
    Some((one - fx) * (one - fy) * a + fx * (one - fy) * b + (one - fx) * fy * c + fx * fy * d)
}

/// `1 − NCC` between the reference patch around `(x, y)` and the neighbor
/// patch warped through the plane of that pixel. `None` if the patch leaves
/// either image.
fn rgb_pixel<S: Scalar>(
    x: usize,
    y: usize,
    plane: ([S; 3], S),
    ref_gray: &ImageBuf,
    nbr_gray: &ImageBuf,
    warp: &Warp,
    patch: usize,
    scratch: &mut (Vec<f64>, Vec<S>),
) -> Option<S> {
    let h = (patch / 2) as isize;
    let (w, hh) = (ref_gray.width as isize, ref_gray.height as isize);
    let (xi, yi) = (x as isize, y as isize);
    if xi - h < 0 || yi - h < 0 || xi + h >= w || yi + h >= hh {
        return None;
    }
    scratch.0.clear();
    scratch.1.clear();
    for dy in -h..=h {
        for dx in -h..=h {
            let (px, py) = ((xi + dx) as usize, (yi + dy) as usize);
            let (un, vn) = warp.apply(&plane.0, plane.1, S::cst(px as f64 + 0.5), S::cst(py as f64 + 0.5))?;
            scratch.1.push(sample(nbr_gray, un, vn)?);
            scratch.0.push(ref_gray.at(px, py, 0));
        }
    }
    // NCC never exceeds 1; clamp the rounding excess.
    let loss = S::cst(1.0) - ncc_generic(&scratch.0, &scratch.1);
    Some(if loss.value() < 0.0 { S::cst(0.0) } else { loss })
}

/// Mean of `1 − NCC` over the given reference pixels, each warped through its
/// own plane. Pixels whose patch leaves either image are skipped.
pub fn mv_rgb_loss(
    ref_gray: &ImageBuf,
    cam_r: &Camera,
    nbr_gray: &ImageBuf,
    cam_n: &Camera,
    pixels: &[(usize, usize, PlaneHypothesis)],
    patch: usize,
) -> (f64, usize) {
    let warp = Warp::new(cam_r, cam_n);
    let mut scratch = (Vec::new(), Vec::new());
    let mut sum = 0.0;
    let mut count = 0;
    for &(x, y, pl) in pixels {
        let plane = ([pl.normal.x, pl.normal.y, pl.normal.z], pl.distance);
        if let Some(l) = rgb_pixel::<f64>(x, y, plane, ref_gray, nbr_gray, &warp, patch, &mut scratch) {
            sum += l;
            count += 1;
        }
    }
    (if count > 0 { sum / count as f64 } else { 0.0 }, count)
}

/// [`mv_rgb_loss`] with planes taken from the reference plane map, adding
/// `weight ·` the gradient with respect to that map.
#[allow(clippy::too_many_arguments)]
pub fn mv_rgb_loss_with_grad(
    rmap: &PlaneMap,
    ref_gray: &ImageBuf,
    cam_r: &Camera,
    nbr_gray: &ImageBuf,
    cam_n: &Camera,
    pixels: &[(usize, usize)],
    patch: usize,
    weight: f64,
    g_ref: &mut PlaneGrads,
) -> (f64, usize) {
    let warp = Warp::new(cam_r, cam_n);
    let mut scratch = (Vec::new(), Vec::new());
    let mut kept: Vec<(usize, Jet<4>)> = Vec::new();
    for &(x, y) in pixels {
        let i = y * rmap.width + x;
        let nr = rmap.normal[i];
        let Some(plane) = plane_of(
            [Jet::var(nr.x, 0), Jet::var(nr.y, 1), Jet::var(nr.z, 2)],
            Jet::var(rmap.distance[i], 3),
        ) else {
            continue;
        };
        if let Some(l) = rgb_pixel(x, y, plane, ref_gray, nbr_gray, &warp, patch, &mut scratch) {
            kept.push((i, l));
        }
    }
    if kept.is_empty() {
        return (0.0, 0);
    }
    let n = kept.len();
    let k = weight / n as f64;
    let mut sum = 0.0;
    for (i, l) in kept {
        sum += l.v;
        for c in 0..3 {
            g_ref.normal[i][c] += k * l.d[c];
        }
        g_ref.distance[i] += k * l.d[3];
    }
    (sum / n as f64, n)
}

/// Closest other camera by center distance whose viewing direction is within
/// `max_angle_deg` of `cam`'s. Ties go to the earlier camera.
pub fn select_neighbor(cam: &Camera, candidates: &[Camera], max_angle_deg: f64) -> Option<usize> {
    let cos_max = max_angle_deg.to_radians().cos();
    let c = cam.center();
    let f = cam.forward();
    let mut best: Option<(usize, f64)> = None;
    for (i, other) in candidates.iter().enumerate() {
        if other.id == cam.id || other.forward().dot(&f) <= cos_max {
            continue;
        }
        let d = (other.center() - c).norm();
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    best.map(|(i, _)| i)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cams() -> (Camera, Camera) {
        let a = Camera::look_at("a", Vec3::new(0.0, 0.0, -5.0), Vec3::zeros(), -Vec3::y(), 40.0, 32, 32);
        let b = Camera::look_at("b", Vec3::new(1.0, 0.4, -4.8), Vec3::new(0.1, 0.0, 0.0), -Vec3::y(), 42.0, 32, 30);
        (a, b)
    }

    fn world_plane() -> (Vec3, f64) {
        let n = Vec3::new(0.2, -0.1, 1.0).normalize();
        (n, 0.3)
    }

    /// Intersect the reference ray with the world plane and project into the neighbor.
    fn ray_plane_oracle(cam_r: &Camera, cam_n: &Camera, u: f64, v: f64) -> (f64, f64) {
        let (n, c) = world_plane();
        let o = cam_r.center();
        let d = cam_r.ray_world(u, v);
        let t = (c - n.dot(&o)) / n.dot(&d);
        let (pu, pv, _) = cam_n.project(&(o + d * t)).unwrap();
        (pu, pv)
    }

    fn hypothesis(cam: &Camera) -> PlaneHypothesis {
        let (n, c) = world_plane();
        let map = PlaneMap::from_world_plane(cam, &n, c);
        PlaneHypothesis::from_blend(&map.normal[0], map.distance[0]).unwrap()
    }

    #[test]
    fn same_camera_gives_identity() {
        let (a, _) = cams();
        let h = plane_homography(&hypothesis(&a), &a, &a).unwrap();
        assert!((h - Mat3::identity()).norm() < 1e-12);
    }

    #[test]
    fn homography_matches_ray_plane_oracle_and_inverts() {
        let (a, b) = cams();
        let h_rn = plane_homography(&hypothesis(&a), &a, &b).unwrap();
        let h_nr = plane_homography(&hypothesis(&b), &b, &a).unwrap();
        for (u, v) in [(3.5, 4.5), (16.0, 16.0), (28.25, 9.75), (10.0, 30.0)] {
            let (pu, pv) = apply_homography(&h_rn, u, v).unwrap();
            let (ou, ov) = ray_plane_oracle(&a, &b, u, v);
            assert!((pu - ou).abs() < 1e-6 && (pv - ov).abs() < 1e-6);
            let (bu, bv) = apply_homography(&h_nr, pu, pv).unwrap();
            assert!((bu - u).abs() < 1e-6 && (bv - v).abs() < 1e-6);
        }
    }

    #[test]
    fn degenerate_plane_is_an_error() {
        let (a, b) = cams();
        let h = PlaneHypothesis {
            normal: Vec3::z(),
            distance: 0.0,
        };
        assert!(matches!(plane_homography(&h, &a, &b), Err(Error::DegeneratePlane(_))));
    }

    #[test]
    fn perfect_two_view_plane_has_zero_geo_loss() {
        let (a, b) = cams();
        let (n, c) = world_plane();
        let ra = PlaneMap::from_world_plane(&a, &n, c);
        let rb = PlaneMap::from_world_plane(&b, &n, c);
        let res = mv_geo_loss(&ra, &a, &rb, &b, 1.0, PixelGrid::ALL);
        assert_eq!(res.value, 0.0);
        assert!(res.count() > 500);
        // Every reference pixel whose warp lands inside the neighbor is kept.
        let h = plane_homography(&hypothesis(&a), &a, &b).unwrap();
        let inside = (0..32 * 32)
            .filter(|&i| {
                let (u, v) = ((i % 32) as f64 + 0.5, (i / 32) as f64 + 0.5);
                let (pu, pv) = apply_homography(&h, u, v).unwrap();
                bilinear_taps(pu, pv, 32, 30).is_some()
            })
            .count();
        assert_eq!(res.count(), inside);
    }

    #[test]
    fn large_reprojection_error_is_excluded() {
        let (a, b) = cams();
        let (n, c) = world_plane();
        let ra = PlaneMap::from_world_plane(&a, &n, c);
        // The neighbor sees a shifted plane, so round trips miss by a few pixels.
        let rb = PlaneMap::from_world_plane(&b, &n, c + 1.5);
        let loose = mv_geo_loss(&ra, &a, &rb, &b, 100.0, PixelGrid::ALL);
        let strict = mv_geo_loss(&ra, &a, &rb, &b, 1.0, PixelGrid::ALL);
        let big: Vec<_> = loose.errors.iter().filter(|&&e| e > 1.0).collect();
        assert!(!big.is_empty());
        assert_eq!(strict.count(), loose.count() - big.len());
        assert!(strict.errors.iter().all(|&e| e <= 1.0));
    }

    #[test]
    fn geo_loss_matches_per_pixel_oracle_on_perturbed_planes() {
        let (a, b) = cams();
        let (n, c) = world_plane();
        let mut ra = PlaneMap::from_world_plane(&a, &n, c);
        let rb = PlaneMap::from_world_plane(&b, &n, c);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for d in &mut ra.distance {
            *d *= 1.0 + rng.random_range(-0.01..0.01);
        }
        let res = mv_geo_loss(&ra, &a, &rb, &b, 1.0, PixelGrid::ALL);
        // Oracle: explicit homographies per pixel, bilinear neighbor plane.
        let mut sum = 0.0;
        let mut cnt = 0;
        for y in 0..32 {
            for x in 0..32 {
                let i = y * 32 + x;
                let hr = PlaneHypothesis::from_blend(&ra.normal[i], ra.distance[i]).unwrap();
                let (u, v) = (x as f64 + 0.5, y as f64 + 0.5);
                let (pu, pv) = apply_homography(&plane_homography(&hr, &a, &b).unwrap(), u, v).unwrap();
                let Some((x0, y0, fx, fy)) = bilinear_taps(pu, pv, 32, 30) else { continue };
                let lerp = |f: &dyn Fn(usize) -> f64| {
                    let t = |xx: usize, yy: usize| f(yy * 32 + xx);
                    (1.0 - fx) * (1.0 - fy) * t(x0, y0)
                        + fx * (1.0 - fy) * t(x0 + 1, y0)
                        + (1.0 - fx) * fy * t(x0, y0 + 1)
                        + fx * fy * t(x0 + 1, y0 + 1)
                };
                let nn = Vec3::new(lerp(&|j| rb.normal[j].x), lerp(&|j| rb.normal[j].y), lerp(&|j| rb.normal[j].z));
                let hn = PlaneHypothesis::from_blend(&nn, lerp(&|j| rb.distance[j])).unwrap();
                let (bu, bv) = apply_homography(&plane_homography(&hn, &b, &a).unwrap(), pu, pv).unwrap();
                let e = ((bu - u).powi(2) + (bv - v).powi(2)).sqrt();
                if e <= 1.0 {
                    sum += e;
                    cnt += 1;
                }
            }
        }
        assert_eq!(cnt, res.count());
        assert!((res.value - sum / cnt as f64).abs() < 1e-9);
    }

    #[test]
    fn geo_gradient_matches_finite_differences() {
        let (a, b) = cams();
        let (n, c) = world_plane();
        let mut ra = PlaneMap::from_world_plane(&a, &n, c);
        let mut rb = PlaneMap::from_world_plane(&b, &n, c);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for m in [&mut ra, &mut rb] {
            for (nv, d) in m.normal.iter_mut().zip(m.distance.iter_mut()) {
                *nv *= 0.9;
                nv.x += rng.random_range(-0.02..0.02);
                *d *= 0.9 * (1.0 + rng.random_range(-0.004..0.004));
            }
        }
        let grid = PixelGrid { stride: 3, offset: (1, 2) };
        let mut gr = PlaneGrads::zeros(32 * 32);
        let mut gn = PlaneGrads::zeros(32 * 30);
        let base = mv_geo_loss_with_grad(&ra, &a, &rb, &b, 5.0, grid, 1.0, &mut gr, &mut gn);
        assert!(base.count() > 50);
        let f = |ra: &PlaneMap, rb: &PlaneMap| mv_geo_loss(ra, &a, rb, &b, 5.0, grid).value;
        let h = 1e-7;
        for i in (0..32 * 30).step_by(37) {
            let mut up = rb.clone();
            up.distance[i] += h;
            let mut dn = rb.clone();
            dn.distance[i] -= h;
            let fd = (f(&ra, &up) - f(&ra, &dn)) / (2.0 * h);
            assert!((gn.distance[i] - fd).abs() < 1e-6 + 1e-4 * fd.abs(), "nbr {i}: {} {fd}", gn.distance[i]);
            let mut up = ra.clone();
            up.normal[i].y += h;
            let mut dn = ra.clone();
            dn.normal[i].y -= h;
            let fd = (f(&up, &rb) - f(&dn, &rb)) / (2.0 * h);
            assert!((gr.normal[i].y - fd).abs() < 1e-6 + 1e-4 * fd.abs(), "ref {i}: {} {fd}", gr.normal[i].y);
        }
    }

    fn random_gray(seed: u64, w: usize, h: usize) -> ImageBuf {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageBuf::from_vec(w, h, 1, (0..w * h).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn identity_warp_gives_zero_rgb_loss() {
        let (a, _) = cams();
        let img = random_gray(5, 32, 32);
        let pl = hypothesis(&a);
        let pixels: Vec<_> = (0..32).flat_map(|y| (0..32).map(move |x| (x, y, pl))).collect();
        let (v, n) = mv_rgb_loss(&img, &a, &img, &a, &pixels, 7);
        assert_eq!(n, 26 * 26);
        assert!(v.abs() < 1e-12);
    }

    #[test]
    fn ncc_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a: Vec<f64> = (0..49).map(|_| rng.random_range(0.0..1.0)).collect();
        let b: Vec<f64> = a.iter().map(|v| 2.0 * v + 5.0).collect();
        assert!((ncc(&a, &b) - 1.0).abs() < 1e-9);
        let c: Vec<f64> = (0..49).map(|_| rng.random_range(0.0..1.0)).collect();
        let r = ncc(&a, &c);
        assert!((-1.0..=1.0).contains(&r));
        let c2: Vec<f64> = c.iter().map(|v| 0.3 * v - 1.0).collect();
        assert!((ncc(&a, &c2) - r).abs() < 1e-9);
        // Direct formula.
        let ma = a.iter().sum::<f64>() / 49.0;
        let mc = c.iter().sum::<f64>() / 49.0;
        let cov: f64 = a.iter().zip(&c).map(|(x, y)| (x - ma) * (y - mc)).sum::<f64>() / 49.0;
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum::<f64>() / 49.0;
        let vc: f64 = c.iter().map(|y| (y - mc).powi(2)).sum::<f64>() / 49.0;
        assert!((r - cov / (va * vc).sqrt()).abs() < 1e-9);
        assert_eq!(ncc(&a, &[0.5; 49]), 0.0);
    }

    #[test]
    fn rgb_gradient_matches_finite_differences() {
        let (a, b) = cams();
        let (n, c) = world_plane();
        let ra = PlaneMap::from_world_plane(&a, &n, c);
        // Smooth images so the warp derivatives are well conditioned.
        let smooth = |w: usize, h: usize, k: f64| {
            let data = (0..w * h).map(|i| ((i % w) as f64 * 0.3 * k).sin() * ((i / w) as f64 * 0.2).cos() * 0.4 + 0.5).collect();
            ImageBuf::from_vec(w, h, 1, data).unwrap()
        };
        let ga = smooth(32, 32, 1.0);
        let gb = smooth(32, 30, 1.1);
        let pixels: Vec<(usize, usize)> = (6..26).step_by(3).flat_map(|y| (6..26).step_by(3).map(move |x| (x, y))).collect();
        let mut g = PlaneGrads::zeros(32 * 32);
        let (_, cnt) = mv_rgb_loss_with_grad(&ra, &ga, &a, &gb, &b, &pixels, 7, 1.0, &mut g);
        assert!(cnt > 10);
        let f = |m: &PlaneMap| {
            let mut scratch = PlaneGrads::zeros(32 * 32);
            mv_rgb_loss_with_grad(m, &ga, &a, &gb, &b, &pixels, 7, 1.0, &mut scratch).0
        };
        let h = 1e-7;
        for &(x, y) in pixels.iter().step_by(5) {
            let i = y * 32 + x;
            let mut up = ra.clone();
            up.distance[i] += h;
            let mut dn = ra.clone();
            dn.distance[i] -= h;
            let fd = (f(&up) - f(&dn)) / (2.0 * h);
            assert!((g.distance[i] - fd).abs() < 1e-6 + 1e-4 * fd.abs(), "{i}: {} {fd}", g.distance[i]);
        }
    }

    #[test]
    fn neighbor_is_nearest_within_angle() {
        let up = -Vec3::y();
        let c0 = Camera::look_at("0", Vec3::new(0.0, 0.0, -5.0), Vec3::zeros(), up, 30.0, 8, 8);
        let c1 = Camera::look_at("1", Vec3::new(3.0, 0.0, -5.0), Vec3::new(3.0, 0.0, 0.0), up, 30.0, 8, 8);
        let c2 = Camera::look_at("2", Vec3::new(1.0, 0.0, -5.0), Vec3::new(1.0, 0.0, 0.0), up, 30.0, 8, 8);
        let c3 = Camera::look_at("3", Vec3::new(0.5, 0.0, 0.0), Vec3::new(0.5, 0.0, -5.0), up, 30.0, 8, 8);
        let all = vec![c0.clone(), c1, c2, c3];
        assert_eq!(select_neighbor(&c0, &all, 60.0), Some(2));
    }
}
