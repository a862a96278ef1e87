use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{tonemap_normal, ImageBuf};
use crate::math::Vec3;
use crate::raster::depth::{unbiased_depth, DepthMap};
use crate::raster::project::{project_splat, Splat};
use crate::raster::RenderConfig;
use crate::scene::{Camera, GaussianModel};

/// One entry of a pixel's front-to-back contributor list.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Contributor {
    pub index: u32,
    /// `a_i = o_i G_i`.
    pub alpha: f64,
    /// Transmittance in front of this primitive.
    pub transmittance: f64,
}

impl Contributor {
    #[inline]
    pub fn weight(&self) -> f64 {
        self.alpha * self.transmittance
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct TraceEntry {
    /// Position in the tile bin.
    pub slot: u32,
    /// Position in the sorted splat list.
    pub splat: u32,
    pub alpha: f64,
    pub transmittance: f64,
    pub kernel: f64,
}

#[derive(Clone, Debug)]
pub(crate) struct TileTrace {
    pub rect: [usize; 4],
    pub bin: Vec<u32>,
    /// CSR offsets into `entries`, one row per tile pixel (row-major).
    pub offsets: Vec<u32>,
    pub entries: Vec<TraceEntry>,
}

#[derive(Clone, Debug)]
pub(crate) struct RenderTrace {
    /// Visible primitives, front to back.
    pub splats: Vec<Splat>,
    pub tiles: Vec<TileTrace>,
    pub tiles_x: usize,
    pub tile_size: usize,
}

#[derive(Clone, Debug)]
pub struct RenderBuffers {
    pub camera_id: String,
    pub width: usize,
    pub height: usize,
    pub rgb: ImageBuf,
    pub alpha: Vec<f64>,
    /// Camera-frame unit normals; pixels with no normal mass get `(0, 0, -1)`.
    pub normal: ImageBuf,
    pub plane_distance: Vec<f64>,
    /// Per primitive: pixels where its blend weight exceeds the contribution floor.
    pub coverage: Vec<u32>,
    pub(crate) normal_raw: Vec<Vec3>,
    pub(crate) trace: Option<RenderTrace>,
}

pub(crate) const VIEW_AXIS_NORMAL: [f64; 3] = [0.0, 0.0, -1.0];

impl RenderBuffers {
    pub fn has_contributors(&self) -> bool {
        self.trace.is_some()
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Ordered contributor list of pixel `(x, y)`.
    pub fn contributors(&self, x: usize, y: usize) -> Result<Vec<Contributor>> {
        let trace = self.trace.as_ref().ok_or(Error::MissingContributorLists)?;
        let ts = trace.tile_size;
        let tile = &trace.tiles[(y / ts) * trace.tiles_x + x / ts];
        let tw = tile.rect[1] - tile.rect[0];
        let local = (y - tile.rect[2]) * tw + (x - tile.rect[0]);
        let range = tile.offsets[local] as usize..tile.offsets[local + 1] as usize;
        Ok(tile.entries[range]
            .iter()
            .map(|e| Contributor {
                index: trace.splats[e.splat as usize].index,
                alpha: e.alpha,
                transmittance: e.transmittance,
            })
            .collect())
    }

    pub fn normal_at(&self, i: usize) -> Vec3 {
        Vec3::new(self.normal.data[3 * i], self.normal.data[3 * i + 1], self.normal.data[3 * i + 2])
    }

    pub fn depth(&self, cam: &Camera) -> DepthMap {
        unbiased_depth(self, cam)
    }

    /// Writes `<stem>_{rgb,normal,depth}.png` plus lossless `.raw` copies of every buffer.
    pub fn save_dumps(&self, cam: &Camera, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let depth = self.depth(cam);
        self.rgb.save_png(&dir.join(format!("{stem}_rgb.png")))?;
        tonemap_normal(&self.normal).save_png(&dir.join(format!("{stem}_normal.png")))?;
        depth.tonemap().save_png(&dir.join(format!("{stem}_depth.png")))?;
        self.rgb.write_raw(&dir.join(format!("{stem}_rgb.raw")))?;
        self.normal.write_raw(&dir.join(format!("{stem}_normal.raw")))?;
        ImageBuf::from_vec(self.width, self.height, 1, self.alpha.clone())?
            .write_raw(&dir.join(format!("{stem}_alpha.raw")))?;
        ImageBuf::from_vec(self.width, self.height, 1, self.plane_distance.clone())?
            .write_raw(&dir.join(format!("{stem}_plane.raw")))?;
        depth.as_image().write_raw(&dir.join(format!("{stem}_depth.raw")))?;
        Ok(())
    }
}

struct TileOutput {
    rgb: Vec<f64>,
    alpha: Vec<f64>,
    normal: Vec<Vec3>,
    plane: Vec<f64>,
    /// `(splat, pixel count)` pairs.
    cover: Vec<(u32, u32)>,
    trace: Option<TileTrace>,
}

/// Projects, sorts and front-to-back composites `model` as seen from `cam`.
pub fn render(model: &GaussianModel, cam: &Camera, cfg: &RenderConfig) -> RenderBuffers {
    let splats = visible_splats(model, cam, cfg);
    let (w, h) = (cam.width as usize, cam.height as usize);
    let ts = cfg.tile_size.max(1);
    let tiles_x = w.div_ceil(ts);
    let tiles_y = h.div_ceil(ts);
    let mut bins: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
    for (si, s) in splats.iter().enumerate() {
        for ty in s.bbox[2] / ts..=s.bbox[3] / ts {
            for tx in s.bbox[0] / ts..=s.bbox[1] / ts {
                bins[ty * tiles_x + tx].push(si as u32);
            }
        }
    }

    let outputs: Vec<TileOutput> = bins
        .into_par_iter()
        .enumerate()
        .map(|(t, bin)| {
            let x0 = (t % tiles_x) * ts;
            let y0 = (t / tiles_x) * ts;
            let rect = [x0, (x0 + ts).min(w), y0, (y0 + ts).min(h)];
            render_tile(&splats, bin, rect, cfg)
        })
        .collect();

    let n = w * h;
    let mut rgb = ImageBuf::new(w, h, 3);
    let mut alpha = vec![0.0; n];
    let mut normal = ImageBuf::new(w, h, 3);
    let mut normal_raw = vec![Vec3::zeros(); n];
    let mut plane = vec![0.0; n];
    let mut coverage = vec![0u32; model.len()];
    let mut traces = Vec::with_capacity(outputs.len());
    for (t, out) in outputs.into_iter().enumerate() {
        let x0 = (t % tiles_x) * ts;
        let y0 = (t / tiles_x) * ts;
        let x1 = (x0 + ts).min(w);
        let y1 = (y0 + ts).min(h);
        let tw = x1 - x0;
        for y in y0..y1 {
            for x in x0..x1 {
                let l = (y - y0) * tw + (x - x0);
                let i = y * w + x;
                rgb.data[3 * i..3 * i + 3].copy_from_slice(&out.rgb[3 * l..3 * l + 3]);
                alpha[i] = out.alpha[l];
                plane[i] = out.plane[l];
                let v = out.normal[l];
                normal_raw[i] = v;
                let nrm = v.norm();
                let nn = if nrm > 1e-12 {
                    v / nrm
                } else {
                    Vec3::from(VIEW_AXIS_NORMAL)
                };
                normal.data[3 * i..3 * i + 3].copy_from_slice(nn.as_slice());
            }
        }
        for (si, c) in out.cover {
            coverage[splats[si as usize].index as usize] += c;
        }
        if let Some(tr) = out.trace {
            traces.push(tr);
        }
    }

    let trace = cfg.record_contributors.then(|| RenderTrace {
        splats,
        tiles: traces,
        tiles_x,
        tile_size: ts,
    });
    RenderBuffers {
        camera_id: cam.id.clone(),
        width: w,
        height: h,
        rgb,
        alpha,
        normal,
        plane_distance: plane,
        coverage,
        normal_raw,
        trace,
    }
}

pub(crate) fn visible_splats(model: &GaussianModel, cam: &Camera, cfg: &RenderConfig) -> Vec<Splat> {
    let mut splats: Vec<Splat> = model
        .primitives
        .par_iter()
        .enumerate()
        .filter_map(|(i, p)| project_splat(p, i as u32, cam, model.sh_degree, cfg))
        .collect();
    splats.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.index.cmp(&b.index)));
    splats
}

fn render_tile(splats: &[Splat], bin: Vec<u32>, rect: [usize; 4], cfg: &RenderConfig) -> TileOutput {
    let [x0, x1, y0, y1] = rect;
    let tw = x1 - x0;
    let n = tw * (y1 - y0);
    let cut2 = cfg.kernel_cutoff * cfg.kernel_cutoff;
    let bg = cfg.background;
    let mut rgb = vec![0.0; 3 * n];
    let mut alpha = vec![0.0; n];
    let mut normal = vec![Vec3::zeros(); n];
    let mut plane = vec![0.0; n];
    let mut cover = vec![0u32; bin.len()];
    let record = cfg.record_contributors;
    let mut offsets = Vec::with_capacity(if record { n + 1 } else { 0 });
    let mut entries = Vec::new();
    if record {
        offsets.push(0u32);
    }
    for y in y0..y1 {
        for x in x0..x1 {
            let l = (y - y0) * tw + (x - x0);
            let (u, v) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut t = 1.0;
            let mut c = [0.0; 3];
            let mut a_sum = 0.0;
            let mut nv = Vec3::zeros();
            let mut d = 0.0;
            for (slot, &si) in bin.iter().enumerate() {
                let s = &splats[si as usize];
                if x < s.bbox[0] || x > s.bbox[1] || y < s.bbox[2] || y > s.bbox[3] {
                    continue;
                }
                let g = s.kernel(u, v, cut2);
                if g == 0.0 {
                    continue;
                }
                let a = s.opacity * g;
                let wgt = a * t;
                for k in 0..3 {
                    c[k] += wgt * (s.color[k] - bg[k]);
                }
                a_sum += wgt;
                nv += wgt * s.normal_cam;
                d += wgt * s.plane_distance;
                if wgt > cfg.contribution_floor {
                    cover[slot] += 1;
                }
                if record {
                    entries.push(TraceEntry {
                        slot: slot as u32,
                        splat: si,
                        alpha: a,
                        transmittance: t,
                        kernel: g,
                    });
                }
                t *= 1.0 - a;
                if t < cfg.transmittance_floor {
                    break;
                }
            }
            for k in 0..3 {
                rgb[3 * l + k] = bg[k] + c[k];
            }
            alpha[l] = a_sum;
            normal[l] = nv;
            plane[l] = d;
            if record {
                offsets.push(entries.len() as u32);
            }
        }
    }
    let cover_sparse: Vec<(u32, u32)> = cover
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(slot, &c)| (bin[slot], c))
        .collect();
    TileOutput {
        rgb,
        alpha,
        normal,
        plane,
        cover: cover_sparse,
        trace: record.then(|| TileTrace {
            rect,
            bin,
            offsets,
            entries,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Vec3;
    use crate::raster::project::project;
    use crate::scene::GaussianPrimitive;
    use crate::test_util::{front_camera, random_model};

    fn odd_camera() -> Camera {
        // 63 px wide, so pixel 31 is sampled exactly at the principal point.
        Camera::look_at("c", Vec3::new(0.0, 0.0, -4.0), Vec3::zeros(), -Vec3::y(), 80.0, 63, 63)
    }

    #[test]
    fn empty_model_renders_background() {
        let cam = front_camera("c", 16);
        let m = GaussianModel::new("e", 1).unwrap();
        let b = render(&m, &cam, &RenderConfig::default());
        assert!(b.rgb.data.iter().all(|&v| v == 0.5));
        assert!(b.alpha.iter().all(|&a| a == 0.0));
        assert!(b.coverage.is_empty());
    }

    #[test]
    fn single_primitive_center_pixel_closed_form() {
        let cam = odd_camera();
        let o = 0.6;
        let c = [0.9, 0.2, 0.4];
        let p = GaussianPrimitive::isotropic(Vec3::zeros(), 0.2, o, c);
        let m = GaussianModel::from_primitives("m", 0, vec![p]).unwrap();
        let b = render(&m, &cam, &RenderConfig::default());
        let i = 31 * 63 + 31;
        assert!((b.alpha[i] - o).abs() < 1e-12);
        for k in 0..3 {
            assert!((b.rgb.data[3 * i + k] - (o * c[k] + (1.0 - o) * 0.5)).abs() < 1e-12);
        }
        assert!(b.coverage[0] > 0);
    }

    #[test]
    fn two_primitive_manual_composite() {
        let cam = odd_camera();
        let cfg = RenderConfig::default();
        let near = GaussianPrimitive::isotropic(Vec3::new(0.05, 0.0, -0.5), 0.2, 0.5, [1.0, 0.0, 0.0]);
        let far = GaussianPrimitive::isotropic(Vec3::new(-0.05, 0.03, 0.5), 0.3, 0.7, [0.0, 0.0, 1.0]);
        // Far first in the model: sorting must still put `near` in front.
        let m = GaussianModel::from_primitives("m", 0, vec![far, near]).unwrap();
        let b = render(&m, &cam, &cfg);
        let g = |p: &GaussianPrimitive, x: f64, y: f64| {
            let pg = project(p, &cam, &cfg).unwrap();
            let [a, bb, c] = pg.cov2d;
            let det = a * c - bb * bb;
            let (dx, dy) = (x - pg.mean2d[0], y - pg.mean2d[1]);
            (-0.5 * (c * dx * dx - 2.0 * bb * dx * dy + a * dy * dy) / det).exp()
        };
        for (x, y) in [(31usize, 31usize), (29, 33), (35, 30)] {
            let (u, v) = (x as f64 + 0.5, y as f64 + 0.5);
            let a1 = 0.5 * g(&near, u, v);
            let a2 = 0.7 * g(&far, u, v);
            let w1 = a1;
            let w2 = a2 * (1.0 - a1);
            let i = y * 63 + x;
            let expect_r = w1 * 1.0 + w2 * 0.0 + (1.0 - w1 - w2) * 0.5;
            let expect_b = w1 * 0.0 + w2 * 1.0 + (1.0 - w1 - w2) * 0.5;
            assert!((b.rgb.data[3 * i] - expect_r).abs() < 1e-12);
            assert!((b.rgb.data[3 * i + 2] - expect_b).abs() < 1e-12);
            assert!((b.alpha[i] - (w1 + w2)).abs() < 1e-12);
            let list = b.contributors(x, y).unwrap();
            assert_eq!(list.iter().map(|c| c.index).collect::<Vec<_>>(), vec![1, 0]);
        }
    }

    #[test]
    fn zero_opacity_renders_exact_background() {
        let cam = front_camera("c", 32);
        let mut m = random_model(3, 20, 1);
        for p in &mut m.primitives {
            p.opacity_logit = f64::NEG_INFINITY;
        }
        let b = render(&m, &cam, &RenderConfig::default());
        assert!(b.rgb.data.iter().all(|&v| v == 0.5));
        assert!(b.coverage.iter().all(|&c| c == 0));
    }

    #[test]
    fn weights_sum_to_alpha_and_transmittance_decreases() {
        let cam = front_camera("c", 32);
        let m = random_model(4, 20, 1);
        let b = render(&m, &cam, &RenderConfig::default());
        for y in 0..32 {
            for x in 0..32 {
                let list = b.contributors(x, y).unwrap();
                let sum: f64 = list.iter().map(|c| c.weight()).sum();
                let i = y * 32 + x;
                assert!((sum - b.alpha[i]).abs() < 1e-12);
                assert!((0.0..=1.0).contains(&b.alpha[i]));
                assert!(list.windows(2).all(|w| w[1].transmittance <= w[0].transmittance));
            }
        }
    }

    #[test]
    fn output_independent_of_tile_size_and_threads() {
        let cam = front_camera("c", 40);
        let m = random_model(5, 30, 2);
        let base = render(&m, &cam, &RenderConfig::default());
        let small = render(&m, &cam, &RenderConfig { tile_size: 7, ..Default::default() });
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let serial = pool.install(|| render(&m, &cam, &RenderConfig::default()));
        for other in [&small, &serial] {
            assert_eq!(other.rgb, base.rgb);
            assert_eq!(other.alpha, base.alpha);
            assert_eq!(other.normal, base.normal);
            assert_eq!(other.plane_distance, base.plane_distance);
            assert_eq!(other.coverage, base.coverage);
        }
    }

    #[test]
    fn coverage_matches_exhaustive_pixel_loop() {
        let cam = front_camera("c", 24);
        let cfg = RenderConfig::default();
        let m = random_model(6, 25, 1);
        let b = render(&m, &cam, &cfg);
        let mut order: Vec<usize> = (0..m.len())
            .filter(|&i| project(&m.primitives[i], &cam, &cfg).is_some())
            .collect();
        order.sort_by(|&a, &b| {
            let za = cam.to_camera(&m.primitives[a].mean).z;
            let zb = cam.to_camera(&m.primitives[b].mean).z;
            za.total_cmp(&zb).then(a.cmp(&b))
        });
        let mut cover = vec![0u32; m.len()];
        for y in 0..24 {
            for x in 0..24 {
                let mut t = 1.0;
                for &k in &order {
                    let s = project_splat(&m.primitives[k], k as u32, &cam, 1, &cfg).unwrap();
                    let g = s.kernel(x as f64 + 0.5, y as f64 + 0.5, 9.0);
                    let a = s.opacity * g;
                    if a == 0.0 {
                        continue;
                    }
                    if a * t > cfg.contribution_floor {
                        cover[k] += 1;
                    }
                    t *= 1.0 - a;
                    if t < cfg.transmittance_floor {
                        break;
                    }
                }
            }
        }
        assert_eq!(cover, b.coverage);
    }

    #[test]
    fn culled_primitive_has_zero_coverage() {
        let cam = front_camera("c", 16);
        let mut m = random_model(7, 5, 1);
        m.primitives[2].mean = Vec3::new(0.0, 0.0, -10.0);
        let b = render(&m, &cam, &RenderConfig::default());
        assert_eq!(b.coverage[2], 0);
    }

    #[test]
    fn forward_only_render_has_no_contributors() {
        let cam = front_camera("c", 16);
        let m = random_model(8, 5, 1);
        let b = render(&m, &cam, &RenderConfig::default().forward_only());
        assert!(matches!(b.contributors(0, 0), Err(Error::MissingContributorLists)));
    }
}
