//! The per-iteration device objective and the distillation objective.

use crate::error::{Error, Result};
use crate::image::ImageBuf;
use crate::loss::geometry::{scale_loss, scale_loss_grad, svg_loss, svg_loss_with_grad};
use crate::loss::multiview::{mv_geo_loss_with_grad, mv_rgb_loss_with_grad, PixelGrid, PlaneGrads, PlaneMap};
use crate::loss::photometric::l1_ssim_with_grad;
use crate::loss::LossWeights;
use crate::math::Vec3;
use crate::raster::{unbiased_depth, unbiased_depth_backward, BufferGrads, DepthMap, RenderBuffers};
use crate::scene::{Camera, GaussianModel};

/// A rendered view together with its ground truth.
#[derive(Clone, Copy)]
pub struct LossView<'a> {
    pub cam: &'a Camera,
    pub buffers: &'a RenderBuffers,
    pub gt: &'a ImageBuf,
}

pub type ReferenceView<'a> = LossView<'a>;
pub type NeighborView<'a> = LossView<'a>;

/// Individual terms of the device loss and the weights they entered with.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossComponents {
    pub l1: f64,
    pub ssim: f64,
    pub l3dgs: f64,
    pub scale: f64,
    pub svg: f64,
    pub mv_geo: f64,
    pub mv_rgb: f64,
    pub mv_pixels: usize,
    pub lambda2: f64,
    pub lambda3_geo: f64,
    pub lambda3_rgb: f64,
    pub total: f64,
}

impl LossComponents {
    pub fn named(&self) -> [(&'static str, f64); 8] {
        [
            ("l1", self.l1),
            ("ssim", self.ssim),
            ("l3dgs", self.l3dgs),
            ("scale", self.scale),
            ("svg", self.svg),
            ("mv_geo", self.mv_geo),
            ("mv_rgb", self.mv_rgb),
            ("total", self.total),
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.named().iter().all(|(_, v)| v.is_finite())
    }
}

/// Gradients of the device loss with respect to the render buffers of both
/// views and, directly, to the log-scales (from the scale term).
#[derive(Clone, Debug)]
pub struct DeviceLossGrads {
    pub reference: BufferGrads,
    pub neighbor: Option<BufferGrads>,
    pub log_scale: Vec<Vec3>,
}

fn scatter_plane(g: &PlaneGrads, out: &mut BufferGrads) {
    for (i, (n, d)) in g.normal.iter().zip(&g.distance).enumerate() {
        for c in 0..3 {
            out.normal_raw[3 * i + c] += n[c];
        }
        out.plane_distance[i] += d;
    }
}

/// `L_3dgs + λ1·L_s + λ2(t)·L_svg + λ3(t)·(L_mvgeo + L_mvrgb)` with separate
/// caps for the two multi-view terms. The multi-view terms are evaluated
/// only after the first stage and only when a neighbor view is given; `grid`
/// selects the reference pixels they use.
pub fn device_loss(
    model: &GaussianModel,
    reference: &LossView,
    neighbor: Option<&LossView>,
    t: u32,
    w: &LossWeights,
    grid: PixelGrid,
) -> Result<(LossComponents, DeviceLossGrads)> {
    let rb = reference.buffers;
    let mut g_ref = BufferGrads::zeros(rb.width, rb.height);
    let photo = l1_ssim_with_grad(&rb.rgb, reference.gt, w.lambda)?;
    g_ref.rgb.iter_mut().zip(&photo.grad).for_each(|(a, b)| *a += b);

    let mut c = LossComponents {
        l1: photo.l1,
        ssim: photo.ssim,
        l3dgs: photo.value,
        scale: scale_loss(model)?,
        lambda2: w.lambda2(t),
        lambda3_geo: w.lambda3_geo(t),
        lambda3_rgb: w.lambda3_rgb(t),
        ..Default::default()
    };
    let log_scale = scale_loss_grad(model, w.lambda1);

    c.svg = if c.lambda2 > 0.0 {
        svg_loss_with_grad(rb, reference.cam, c.lambda2, &mut g_ref)
    } else {
        svg_loss(rb, reference.cam)
    };

    let mut g_nbr = None;
    if let Some(nb) = neighbor.filter(|_| c.lambda3_geo > 0.0 || c.lambda3_rgb > 0.0) {
        let nbuf = nb.buffers;
        let rmap = PlaneMap::from_buffers(rb, reference.cam);
        let nmap = PlaneMap::from_buffers(nbuf, nb.cam);
        let mut pr = PlaneGrads::zeros(rmap.normal.len());
        let mut pn = PlaneGrads::zeros(nmap.normal.len());
        let geo = mv_geo_loss_with_grad(
            &rmap,
            reference.cam,
            &nmap,
            nb.cam,
            w.theta,
            grid,
            c.lambda3_geo,
            &mut pr,
            &mut pn,
        );
        c.mv_geo = geo.value;
        c.mv_pixels = geo.count();
        let (rgb, _) = mv_rgb_loss_with_grad(
            &rmap,
            &reference.gt.to_gray(),
            reference.cam,
            &nb.gt.to_gray(),
            nb.cam,
            &geo.pixels,
            w.patch_size(t),
            c.lambda3_rgb,
            &mut pr,
        );
        c.mv_rgb = rgb;
        scatter_plane(&pr, &mut g_ref);
        let mut gn = BufferGrads::zeros(nbuf.width, nbuf.height);
        scatter_plane(&pn, &mut gn);
        g_nbr = Some(gn);
    }

    c.total = c.l3dgs + w.lambda1 * c.scale + c.lambda2 * c.svg + c.lambda3_geo * c.mv_geo + c.lambda3_rgb * c.mv_rgb;
    Ok((
        c,
        DeviceLossGrads {
            reference: g_ref,
            neighbor: g_nbr,
            log_scale,
        },
    ))
}

/// Terms of the distillation loss.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DistillComponents {
    pub l3dgs: f64,
    pub scale: f64,
    pub svg: f64,
    pub depth: f64,
    pub normal: f64,
    pub total: f64,
}

#[derive(Clone, Debug)]
pub struct DistillGrads {
    pub buffers: BufferGrads,
    pub log_scale: Vec<Vec3>,
}

/// Mean `|D_s − D_t|` over pixels where both depths are defined, with the
/// pixel count.
pub fn depth_l1(student: &DepthMap, teacher: &DepthMap) -> (f64, usize) {
    let mut sum = 0.0;
    let mut n = 0;
    for i in 0..student.depth.len() {
        if student.valid[i] && teacher.valid[i] {
            sum += (student.depth[i] - teacher.depth[i]).abs();
            n += 1;
        }
    }
    (if n > 0 { sum / n as f64 } else { 0.0 }, n)
}

/// Mean `‖N_s − N_t‖₁` over the pixels in `mask`, with the pixel count.
pub fn normal_l1(student: &ImageBuf, teacher: &ImageBuf, mask: &[bool]) -> (f64, usize) {
    let mut sum = 0.0;
    let mut n = 0;
    for (i, _) in mask.iter().enumerate().filter(|(_, m)| **m) {
        sum += (0..3).map(|c| (student.data[3 * i + c] - teacher.data[3 * i + c]).abs()).sum::<f64>();
        n += 1;
    }
    (if n > 0 { sum / n as f64 } else { 0.0 }, n)
}

fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Student-versus-teacher objective on one camera:
/// `L_3dgs(student, teacher rgb) + λ1·L_s + λ2·L_svg + λ_d·|D_s − D_t| + λ_n·‖N_s − N_t‖₁`.
/// `λ2` is the single-view weight at the end of the device schedule. Depth
/// and normal terms are restricted to pixels where the teacher depth is
/// defined (the depth term also needs the student depth).
pub fn distill_losses(
    student_model: &GaussianModel,
    student: &RenderBuffers,
    teacher: &RenderBuffers,
    cam: &Camera,
    w: &LossWeights,
) -> Result<(DistillComponents, DistillGrads)> {
    if student.camera_id != teacher.camera_id
        || student.width != teacher.width
        || student.height != teacher.height
        || student.camera_id != cam.id
    {
        return Err(Error::CameraMismatch {
            student: student.camera_id.clone(),
            teacher: teacher.camera_id.clone(),
        });
    }
    let mut g = BufferGrads::zeros(student.width, student.height);
    let photo = l1_ssim_with_grad(&student.rgb, &teacher.rgb, w.lambda)?;
    g.rgb.iter_mut().zip(&photo.grad).for_each(|(a, b)| *a += b);
    let lambda2 = w.lambda2_final();
    let svg = if lambda2 > 0.0 {
        svg_loss_with_grad(student, cam, lambda2, &mut g)
    } else {
        svg_loss(student, cam)
    };

    let ds = unbiased_depth(student, cam);
    let dt = unbiased_depth(teacher, cam);
    let (depth, nd) = depth_l1(&ds, &dt);
    if nd > 0 && w.lambda_d > 0.0 {
        let k = w.lambda_d / nd as f64;
        let g_depth: Vec<f64> = (0..ds.depth.len())
            .map(|i| {
                if ds.valid[i] && dt.valid[i] {
                    k * sgn(ds.depth[i] - dt.depth[i])
                } else {
                    0.0
                }
            })
            .collect();
        unbiased_depth_backward(student, cam, &ds, &g_depth, &mut g);
    }
    let (normal, nn) = normal_l1(&student.normal, &teacher.normal, &dt.valid);
    if nn > 0 && w.lambda_n > 0.0 {
        let k = w.lambda_n / nn as f64;
        for i in (0..dt.valid.len()).filter(|&i| dt.valid[i]) {
            for c in 0..3 {
                g.normal[3 * i + c] += k * sgn(student.normal.data[3 * i + c] - teacher.normal.data[3 * i + c]);
            }
        }
    }

    let scale = scale_loss(student_model)?;
    let c = DistillComponents {
        l3dgs: photo.value,
        scale,
        svg,
        depth,
        normal,
        total: photo.value + w.lambda1 * scale + lambda2 * svg + w.lambda_d * depth + w.lambda_n * normal,
    };
    Ok((
        c,
        DistillGrads {
            buffers: g,
            log_scale: scale_loss_grad(student_model, w.lambda1),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::geometry::svg_loss;
    use crate::loss::multiview::{mv_geo_loss, mv_rgb_loss, PlaneHypothesis};
    use crate::loss::photometric::l1_ssim;
    use crate::raster::{render, RenderConfig};
    use crate::test_util::{front_camera, random_model, side_camera};

    fn setup() -> (GaussianModel, GaussianModel, Camera, Camera) {
        let m = random_model(11, 14, 1);
        let gt_model = random_model(12, 14, 1);
        (m, gt_model, front_camera("a", 24), side_camera("b", 24))
    }

    #[test]
    fn first_stage_reduces_to_photometric_plus_scale() {
        let (m, gt_m, a, b) = setup();
        let cfg = RenderConfig::default();
        let ra = render(&m, &a, &cfg);
        let rb = render(&m, &b, &cfg);
        let ga = render(&gt_m, &a, &cfg).rgb;
        let gb = render(&gt_m, &b, &cfg).rgb;
        let w = LossWeights::default();
        let rv = LossView { cam: &a, buffers: &ra, gt: &ga };
        let nv = LossView { cam: &b, buffers: &rb, gt: &gb };
        let (c, g) = device_loss(&m, &rv, Some(&nv), w.tau, &w, PixelGrid::ALL).unwrap();
        let expect = l1_ssim(&ra.rgb, &ga, 0.2).unwrap() + 25.0 * scale_loss(&m).unwrap();
        assert_eq!(c.total, expect);
        assert!(g.neighbor.is_none());
        assert!(g.reference.normal.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn total_is_weighted_sum_of_independent_components() {
        let (m, gt_m, a, b) = setup();
        let cfg = RenderConfig::default();
        let ra = render(&m, &a, &cfg);
        let rb = render(&m, &b, &cfg);
        let ga = render(&gt_m, &a, &cfg).rgb;
        let gb = render(&gt_m, &b, &cfg).rgb;
        let w = LossWeights {
            theta: 50.0,
            ..LossWeights::default()
        };
        let t = 2500;
        let rv = LossView { cam: &a, buffers: &ra, gt: &ga };
        let nv = LossView { cam: &b, buffers: &rb, gt: &gb };
        let (c, _) = device_loss(&m, &rv, Some(&nv), t, &w, PixelGrid::ALL).unwrap();

        let rmap = PlaneMap::from_buffers(&ra, &a);
        let nmap = PlaneMap::from_buffers(&rb, &b);
        let geo = mv_geo_loss(&rmap, &a, &nmap, &b, 50.0, PixelGrid::ALL);
        assert!(geo.count() > 20);
        let planes: Vec<_> = geo
            .pixels
            .iter()
            .map(|&(x, y)| {
                let i = y * 24 + x;
                (x, y, PlaneHypothesis::from_blend(&rmap.normal[i], rmap.distance[i]).unwrap())
            })
            .collect();
        let (rgb, _) = mv_rgb_loss(&ga.to_gray(), &a, &gb.to_gray(), &b, &planes, w.patch_size(t));
        let expect = l1_ssim(&ra.rgb, &ga, 0.2).unwrap()
            + 25.0 * scale_loss(&m).unwrap()
            + w.lambda2(t) * svg_loss(&ra, &a)
            + w.lambda3_geo(t) * geo.value
            + w.lambda3_rgb(t) * rgb;
        assert!((c.total - expect).abs() < 1e-12, "{} vs {expect}", c.total);
        assert!(c.mv_geo > 0.0 && c.mv_rgb > 0.0);
    }

    #[test]
    fn self_distillation_terms_vanish() {
        let (m, _, a, _) = setup();
        let cfg = RenderConfig::default();
        let r = render(&m, &a, &cfg);
        let (c, _) = distill_losses(&m, &r, &r, &a, &LossWeights::default()).unwrap();
        assert_eq!(c.depth, 0.0);
        assert_eq!(c.normal, 0.0);
        assert_eq!(c.l3dgs, 0.0);
    }

    #[test]
    fn constant_depth_offset_gives_that_offset() {
        let mut rng_depth: Vec<f64> = (0..64).map(|i| 1.0 + (i as f64 * 0.37).sin().abs()).collect();
        let valid: Vec<bool> = (0..64).map(|i| i % 5 != 0).collect();
        let teacher = DepthMap {
            width: 8,
            height: 8,
            depth: rng_depth.clone(),
            valid: valid.clone(),
        };
        rng_depth.iter_mut().for_each(|d| *d += 0.125);
        let student = DepthMap {
            width: 8,
            height: 8,
            depth: rng_depth,
            valid,
        };
        let (v, n) = depth_l1(&student, &teacher);
        assert!((v - 0.125).abs() < 1e-15);
        assert_eq!(n, 51);
    }

    #[test]
    fn distill_matches_per_pixel_oracle() {
        let (m, t_m, a, _) = setup();
        let cfg = RenderConfig::default();
        let s = render(&m, &a, &cfg);
        let t = render(&t_m, &a, &cfg);
        let w = LossWeights::default();
        let (c, _) = distill_losses(&m, &s, &t, &a, &w).unwrap();
        let ds = unbiased_depth(&s, &a);
        let dt = unbiased_depth(&t, &a);
        let (mut dsum, mut dn, mut nsum, mut nn) = (0.0, 0, 0.0, 0);
        for i in 0..24 * 24 {
            if dt.valid[i] {
                let ns = s.normal_at(i);
                let nt = t.normal_at(i);
                nsum += (ns - nt).abs().sum();
                nn += 1;
                if ds.valid[i] {
                    dsum += (ds.depth[i] - dt.depth[i]).abs();
                    dn += 1;
                }
            }
        }
        assert!(dn > 50 && nn >= dn);
        assert!((c.depth - dsum / dn as f64).abs() < 1e-12);
        assert!((c.normal - nsum / nn as f64).abs() < 1e-12);
        let expect = l1_ssim(&s.rgb, &t.rgb, 0.2).unwrap()
            + 25.0 * scale_loss(&m).unwrap()
            + w.lambda2_final() * svg_loss(&s, &a)
            + 0.015 * c.depth
            + 0.015 * c.normal;
        assert!((c.total - expect).abs() < 1e-12);
    }

    #[test]
    fn mismatched_cameras_are_rejected() {
        let (m, _, a, b) = setup();
        let cfg = RenderConfig::default();
        let s = render(&m, &a, &cfg);
        let t = render(&m, &b, &cfg);
        assert!(matches!(
            distill_losses(&m, &s, &t, &a, &LossWeights::default()),
            Err(Error::CameraMismatch { .. })
        ));
    }
}
