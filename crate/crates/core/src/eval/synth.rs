//! Analytic ground-truth scenes: a textured ground rectangle with boxes on
//! it, seen from an aerial grid of cameras. Images come from exact ray
//! casting, so they are independent of the splatting renderer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageBuf;
use crate::math::{Aabb, Vec3};
use crate::scene::Camera;

/// Color returned for rays that hit nothing.
pub const SKY: [f64; 3] = [0.5, 0.5, 0.5];

#[derive(Clone, Debug, PartialEq)]
pub enum Texture {
    /// Alternating squares of side `cell` in surface coordinates.
    Checker { a: [f64; 3], b: [f64; 3], cell: f64 },
    /// Linear blend from `from` to `to` along world z between `z0` and `z1`.
    Gradient { from: [f64; 3], to: [f64; 3], z0: f64, z1: f64 },
}

impl Texture {
    fn color(&self, s: f64, t: f64, p: &Vec3) -> [f64; 3] {
        match *self {
            Texture::Checker { a, b, cell } => {
                let parity = ((s / cell).floor() as i64 + (t / cell).floor() as i64).rem_euclid(2);
                if parity == 0 {
                    a
                } else {
                    b
                }
            }
            Texture::Gradient { from, to, z0, z1 } => {
                let k = ((p.z - z0) / (z1 - z0)).clamp(0.0, 1.0);
                [0, 1, 2].map(|c| from[c] + k * (to[c] - from[c]))
            }
        }
    }
}

/// Planar rectangle `center + s·u + t·v`, `|s| ≤ half[0]`, `|t| ≤ half[1]`,
/// facing `u × v`.
#[derive(Clone, Debug, PartialEq)]
pub struct Rect {
    pub center: Vec3,
    pub u: Vec3,
    pub v: Vec3,
    pub half: [f64; 2],
    pub texture: Texture,
}

impl Rect {
    pub fn normal(&self) -> Vec3 {
        self.u.cross(&self.v)
    }

    fn intersect(&self, o: &Vec3, d: &Vec3) -> Option<(f64, Vec3, [f64; 3])> {
        let n = self.normal();
        let denom = d.dot(&n);
        if denom.abs() < 1e-12 {
            return None;
        }
        let t = (self.center - o).dot(&n) / denom;
        if t <= 1e-9 {
            return None;
        }
        let p = o + d * t;
        let r = p - self.center;
        let (s, tt) = (r.dot(&self.u), r.dot(&self.v));
        if s.abs() > self.half[0] || tt.abs() > self.half[1] {
            return None;
        }
        let normal = if denom < 0.0 { n } else { -n };
        Some((t, normal, self.texture.color(s, tt, &p)))
    }
}

/// Axis-aligned box.
#[derive(Clone, Debug, PartialEq)]
pub struct BoxSurface {
    pub min: Vec3,
    pub max: Vec3,
    pub texture: Texture,
}

impl BoxSurface {
    fn intersect(&self, o: &Vec3, d: &Vec3) -> Option<(f64, Vec3, [f64; 3])> {
        let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
        let mut axis = 0;
        for a in 0..3 {
            if d[a].abs() < 1e-15 {
                if o[a] < self.min[a] || o[a] > self.max[a] {
                    return None;
                }
                continue;
            }
            let (mut lo, mut hi) = ((self.min[a] - o[a]) / d[a], (self.max[a] - o[a]) / d[a]);
            if lo > hi {
                std::mem::swap(&mut lo, &mut hi);
            }
            if lo > t0 {
                t0 = lo;
                axis = a;
            }
            t1 = t1.min(hi);
        }
        if t0 > t1 || t0 <= 1e-9 {
            return None;
        }
        let p = o + d * t0;
        let mut normal = Vec3::zeros();
        normal[axis] = -d[axis].signum();
        let (s, t) = match axis {
            0 => (p.y, p.z),
            1 => (p.x, p.z),
            _ => (p.x, p.y),
        };
        Some((t0, normal, self.texture.color(s, t, &p)))
    }

    /// Footprint test on the ground plane, open interval.
    fn covers_xy(&self, p: &Vec3) -> bool {
        p.x > self.min.x && p.x < self.max.x && p.y > self.min.y && p.y < self.max.y
    }
}

/// Scene and camera-rig parameters, world z up.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub ground_half: f64,
    pub checker_cell: f64,
    pub boxes: usize,
    pub box_half: [f64; 2],
    pub box_height: [f64; 2],
    /// Box centers are drawn from `[-placement_half, placement_half]²`.
    pub placement_half: f64,
    /// Training cameras form a `camera_grid × camera_grid` lattice.
    pub camera_grid: usize,
    pub camera_span: f64,
    pub altitude: f64,
    /// Cameras look at their own ground position scaled by `1 - inward_tilt`.
    pub inward_tilt: f64,
    pub focal: f64,
    pub width: u32,
    pub height: u32,
    pub holdout: usize,
    /// Rays per pixel side for ground-truth color.
    pub supersample: usize,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            ground_half: 2.0,
            checker_cell: 0.25,
            boxes: 4,
            box_half: [0.15, 0.35],
            box_height: [0.25, 0.7],
            placement_half: 1.2,
            camera_grid: 8,
            camera_span: 1.4,
            altitude: 2.0,
            inward_tilt: 0.5,
            focal: 128.0,
            width: 128,
            height: 128,
            holdout: 8,
            supersample: 3,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = self.ground_half > 0.0
            && self.checker_cell > 0.0
            && self.box_half[0] > 0.0
            && self.box_half[0] <= self.box_half[1]
            && self.box_height[0] > 0.0
            && self.box_height[0] <= self.box_height[1]
            && self.placement_half + self.box_half[1] <= self.ground_half
            && self.camera_grid >= 1
            && self.camera_span >= 0.0
            && self.altitude > self.box_height[1]
            && (0.0..=1.0).contains(&self.inward_tilt)
            && self.focal > 0.0
            && self.width > 0
            && self.height > 0
            && self.supersample >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::Config("scene spec out of range".into()))
        }
    }
}

/// A ray-cast hit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub point: Vec3,
    /// Unit surface normal facing the ray origin.
    pub normal: Vec3,
    pub color: [f64; 3],
}

/// Ground-truth images of one camera. Depth is distance along the unit ray;
/// normals are in world coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct GtView {
    pub camera: Camera,
    pub rgb: ImageBuf,
    pub depth: Vec<f64>,
    pub normal: ImageBuf,
    pub valid: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticScene {
    pub seed: u64,
    pub spec: SceneSpec,
    pub rects: Vec<Rect>,
    pub boxes: Vec<BoxSurface>,
    pub cameras: Vec<Camera>,
    pub holdout: Vec<Camera>,
}

fn random_color(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> [f64; 3] {
    [rng.random_range(lo..hi), rng.random_range(lo..hi), rng.random_range(lo..hi)]
}

/// Builds the scene for `seed`. Fails if any camera sees no surface.
pub fn synth_scene(seed: u64, spec: &SceneSpec) -> Result<SyntheticScene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ground = Rect {
        center: Vec3::zeros(),
        u: Vec3::x(),
        v: Vec3::y(),
        half: [spec.ground_half; 2],
        texture: Texture::Checker {
            a: random_color(&mut rng, 0.55, 0.8),
            b: random_color(&mut rng, 0.2, 0.45),
            cell: spec.checker_cell,
        },
    };
    let mut boxes: Vec<BoxSurface> = Vec::new();
    let mut attempts = 0;
    while boxes.len() < spec.boxes && attempts < 1000 {
        attempts += 1;
        let c = [
            rng.random_range(-spec.placement_half..=spec.placement_half),
            rng.random_range(-spec.placement_half..=spec.placement_half),
        ];
        let hx = rng.random_range(spec.box_half[0]..=spec.box_half[1]);
        let hy = rng.random_range(spec.box_half[0]..=spec.box_half[1]);
        let h = rng.random_range(spec.box_height[0]..=spec.box_height[1]);
        let from = random_color(&mut rng, 0.1, 0.5);
        let to = random_color(&mut rng, 0.5, 0.9);
        let b = BoxSurface {
            min: Vec3::new(c[0] - hx, c[1] - hy, 0.0),
            max: Vec3::new(c[0] + hx, c[1] + hy, h),
            texture: Texture::Gradient { from, to, z0: 0.0, z1: h },
        };
        let gap = 0.1;
        let clear = boxes.iter().all(|o| {
            b.min.x > o.max.x + gap || o.min.x > b.max.x + gap || b.min.y > o.max.y + gap || o.min.y > b.max.y + gap
        });
        if clear {
            boxes.push(b);
        }
    }

    let g = spec.camera_grid;
    let mut cameras = Vec::with_capacity(g * g);
    for row in 0..g {
        for col in 0..g {
            let at = |k: usize| {
                if g == 1 {
                    0.0
                } else {
                    -spec.camera_span + 2.0 * spec.camera_span * k as f64 / (g - 1) as f64
                }
            };
            cameras.push(rig_camera(&format!("v{row:02}_{col:02}"), at(col), at(row), spec));
        }
    }
    let holdout = (0..spec.holdout)
        .map(|k| {
            let x = rng.random_range(-spec.camera_span..=spec.camera_span);
            let y = rng.random_range(-spec.camera_span..=spec.camera_span);
            rig_camera(&format!("h{k:02}"), x, y, spec)
        })
        .collect();

    let scene = SyntheticScene {
        seed,
        spec: spec.clone(),
        rects: vec![ground],
        boxes,
        cameras,
        holdout,
    };
    for cam in scene.all_cameras() {
        if !scene.sees_any(cam) {
            return Err(Error::CameraSeesNothing(cam.id.clone()));
        }
    }
    Ok(scene)
}

/// Aerial camera above `(x, y)` tilted toward the scene center.
pub fn rig_camera(id: &str, x: f64, y: f64, spec: &SceneSpec) -> Camera {
    let eye = Vec3::new(x, y, spec.altitude);
    let k = 1.0 - spec.inward_tilt;
    let target = Vec3::new(k * x, k * y, 0.0);
    Camera::look_at(id, eye, target, Vec3::y(), spec.focal, spec.width, spec.height)
}

impl SyntheticScene {
    /// Nearest hit along the ray `o + t·d`, `d` unit.
    pub fn trace(&self, o: &Vec3, d: &Vec3) -> Option<Hit> {
        let mut best: Option<(f64, Vec3, [f64; 3])> = None;
        let hits = self
            .rects
            .iter()
            .filter_map(|r| r.intersect(o, d))
            .chain(self.boxes.iter().filter_map(|b| b.intersect(o, d)));
        for h in hits {
            if best.is_none_or(|b| h.0 < b.0) {
                best = Some(h);
            }
        }
        best.map(|(t, normal, color)| Hit {
            t,
            point: o + d * t,
            normal,
            color,
        })
    }

    /// Bounding box of every surface.
    pub fn extent(&self) -> Aabb {
        let mut b = Aabb::empty();
        for r in &self.rects {
            for (s, t) in [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)] {
                b.include(&(r.center + r.u * (s * r.half[0]) + r.v * (t * r.half[1])));
            }
        }
        for x in &self.boxes {
            b.include(&x.min);
            b.include(&x.max);
        }
        b
    }

    /// Whether any pixel-center ray of `cam` hits a surface.
    pub fn sees_any(&self, cam: &Camera) -> bool {
        let o = cam.center();
        (0..cam.height as usize).any(|y| {
            (0..cam.width as usize).any(|x| self.trace(&o, &cam.ray_world(x as f64 + 0.5, y as f64 + 0.5)).is_some())
        })
    }

    pub fn all_cameras(&self) -> impl Iterator<Item = &Camera> {
        self.cameras.iter().chain(&self.holdout)
    }

    /// Ray-cast ground truth: color averaged over a regular subpixel grid,
    /// depth and normal from the pixel-center ray.
    pub fn render_gt(&self, cam: &Camera) -> Result<GtView> {
        let (w, h) = (cam.width as usize, cam.height as usize);
        let o = cam.center();
        let ss = self.spec.supersample.max(1);
        let mut rgb = ImageBuf::new(w, h, 3);
        let mut normal = ImageBuf::new(w, h, 3);
        let mut depth = vec![0.0; w * h];
        let mut valid = vec![false; w * h];
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if let Some(hit) = self.trace(&o, &cam.ray_world(x as f64 + 0.5, y as f64 + 0.5)) {
                    depth[i] = hit.t;
                    valid[i] = true;
                    for c in 0..3 {
                        normal.set(x, y, c, hit.normal[c]);
                    }
                }
                let mut acc = [0.0; 3];
                for sy in 0..ss {
                    for sx in 0..ss {
                        let u = x as f64 + (sx as f64 + 0.5) / ss as f64;
                        let v = y as f64 + (sy as f64 + 0.5) / ss as f64;
                        let c = self.trace(&o, &cam.ray_world(u, v)).map_or(SKY, |h| h.color);
                        for k in 0..3 {
                            acc[k] += c[k];
                        }
                    }
                }
                for (k, a) in acc.iter().enumerate() {
                    rgb.set(x, y, k, a / (ss * ss) as f64);
                }
            }
        }
        if !valid.iter().any(|v| *v) {
            return Err(Error::CameraSeesNothing(cam.id.clone()));
        }
        Ok(GtView {
            camera: cam.clone(),
            rgb,
            depth,
            normal,
            valid,
        })
    }

    /// Noisy colored surface points seen by `cams` on a jittered pixel grid,
    /// standing in for a structure-from-motion cloud.
    pub fn observed_points(&self, cams: &[Camera], stride: usize, noise: f64, seed: u64) -> (Vec<Vec3>, Vec<[f64; 3]>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stride = stride.max(1);
        let (mut pts, mut cols) = (Vec::new(), Vec::new());
        for cam in cams {
            let o = cam.center();
            for y in (0..cam.height as usize).step_by(stride) {
                for x in (0..cam.width as usize).step_by(stride) {
                    let u = x as f64 + rng.random_range(0.0..stride as f64);
                    let v = y as f64 + rng.random_range(0.0..stride as f64);
                    if let Some(hit) = self.trace(&o, &cam.ray_world(u, v)) {
                        let n = Vec3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal));
                        pts.push(hit.point + n * noise);
                        cols.push(hit.color);
                    }
                }
            }
        }
        (pts, cols)
    }

    /// Points on every exposed surface at `spacing` in surface coordinates:
    /// the ground outside the box footprints plus the box tops and sides.
    pub fn surface_samples(&self, spacing: f64) -> Vec<Vec3> {
        let mut out = Vec::new();
        let steps = |len: f64| ((len / spacing).ceil() as usize).max(1);
        let mut face = |origin: Vec3, a: Vec3, b: Vec3, skip: &dyn Fn(&Vec3) -> bool| {
            let (na, nb) = (steps(a.norm()), steps(b.norm()));
            for i in 0..=na {
                for j in 0..=nb {
                    let p = origin + a * (i as f64 / na as f64) + b * (j as f64 / nb as f64);
                    if !skip(&p) {
                        out.push(p);
                    }
                }
            }
        };
        for r in &self.rects {
            let origin = r.center - r.u * r.half[0] - r.v * r.half[1];
            face(origin, r.u * (2.0 * r.half[0]), r.v * (2.0 * r.half[1]), &|p| {
                self.boxes.iter().any(|b| b.covers_xy(p) && p.z.abs() < 1e-9)
            });
        }
        for b in &self.boxes {
            let s = b.max - b.min;
            let (ex, ey, ez) = (Vec3::new(s.x, 0.0, 0.0), Vec3::new(0.0, s.y, 0.0), Vec3::new(0.0, 0.0, s.z));
            let none = |_: &Vec3| false;
            face(b.min + ez, ex, ey, &none);
            face(b.min, ex, ez, &none);
            face(b.min + ey, ex, ez, &none);
            face(b.min, ey, ez, &none);
            face(b.min + ex, ey, ez, &none);
        }
        out
    }

    /// Whether some camera has `p` inside its image with nothing in front of it.
    pub fn is_visible(&self, p: &Vec3, cams: &[Camera]) -> bool {
        cams.iter().any(|c| {
            let Some((u, v, _)) = c.project(p) else {
                return false;
            };
            if !(0.0..c.width as f64).contains(&u) || !(0.0..c.height as f64).contains(&v) {
                return false;
            }
            let o = c.center();
            let dist = (p - o).norm();
            let d = (p - o) / dist;
            self.trace(&o, &d).is_none_or(|h| h.t >= dist - 1e-6 * (1.0 + dist))
        })
    }

    /// [`Self::surface_samples`] restricted to points some camera sees.
    pub fn visible_samples(&self, spacing: f64, cams: &[Camera]) -> Vec<Vec3> {
        self.surface_samples(spacing)
            .into_iter()
            .filter(|p| self.is_visible(p, cams))
            .collect()
    }
}
