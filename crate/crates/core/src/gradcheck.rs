//! Central finite-difference checks of analytic parameter gradients.

use crate::error::Result;
use crate::image::ImageBuf;
use crate::loss::{device_loss, LossView, LossWeights, PixelGrid};
use crate::raster::backward::PARAM_LEN;
use crate::raster::{render, ParamGrad, RenderConfig};
use crate::scene::sh::{coeff_count, MAX_SH_COEFFS};
use crate::scene::{Camera, GaussianModel, GaussianPrimitive};
use crate::train::device_gradients;

/// Mutable access to parameter `j` in the [`ParamGrad::to_array`] order.
pub fn param_mut(p: &mut GaussianPrimitive, j: usize) -> &mut f64 {
    match j {
        0..=2 => &mut p.mean[j],
        3..=6 => &mut p.rotation[j - 3],
        7..=9 => &mut p.log_scale[j - 7],
        10 => &mut p.opacity_logit,
        _ => {
            let k = j - 11;
            &mut p.sh[k / MAX_SH_COEFFS][k % MAX_SH_COEFFS]
        }
    }
}

/// Parameter indices that exist at the given color degree.
pub fn active_params(sh_degree: u8) -> Vec<usize> {
    let n = coeff_count(sh_degree);
    (0..PARAM_LEN)
        .filter(|&j| j < 11 || (j - 11) % MAX_SH_COEFFS < n)
        .collect()
}

/// Pass rule: relative error within `rel`, or absolute error within `abs`
/// when the finite difference itself is below `tiny`.
pub fn agrees(analytic: f64, fd: f64, rel: f64, tiny: f64, abs: f64) -> bool {
    let err = (analytic - fd).abs();
    if fd.abs() < tiny {
        err <= abs
    } else {
        err <= rel * fd.abs()
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub passed: usize,
    /// `(primitive, parameter, analytic, finite difference)` of failures.
    pub failures: Vec<(usize, usize, f64, f64)>,
}

impl GradCheckReport {
    pub fn pass_rate(&self) -> f64 {
        if self.checked == 0 {
            1.0
        } else {
            self.passed as f64 / self.checked as f64
        }
    }

    pub fn merge(&mut self, other: GradCheckReport) {
        self.checked += other.checked;
        self.passed += other.passed;
        self.failures.extend(other.failures);
    }
}

/// Compares `analytic` against central differences of `loss` for every
/// active parameter of every primitive, with step `h`.
pub fn check_model(
    model: &GaussianModel,
    analytic: &[ParamGrad],
    h: f64,
    mut loss: impl FnMut(&GaussianModel) -> f64,
) -> GradCheckReport {
    let mut report = GradCheckReport::default();
    let mut work = model.clone();
    for k in 0..model.len() {
        let a = analytic[k].to_array();
        for j in active_params(model.sh_degree) {
            let orig = *param_mut(&mut work.primitives[k], j);
            *param_mut(&mut work.primitives[k], j) = orig + h;
            let up = loss(&work);
            *param_mut(&mut work.primitives[k], j) = orig - h;
            let down = loss(&work);
            *param_mut(&mut work.primitives[k], j) = orig;
            let fd = (up - down) / (2.0 * h);
            report.checked += 1;
            if agrees(a[j], fd, 1e-3, 1e-8, 1e-6) {
                report.passed += 1;
            } else {
                report.failures.push((k, j, a[j], fd));
            }
        }
    }
    report
}

/// Checks the parameter gradient of the full device loss (rendering, every
/// loss term, and the backward pass) at iteration `t`. The neighbor view is
/// used by the multi-view terms once `t` exceeds the first stage.
#[allow(clippy::too_many_arguments)]
pub fn check_device_loss(
    model: &GaussianModel,
    reference: (&Camera, &ImageBuf),
    neighbor: (&Camera, &ImageBuf),
    t: u32,
    w: &LossWeights,
    grid: PixelGrid,
    cfg: &RenderConfig,
    h: f64,
) -> Result<GradCheckReport> {
    let cfg = RenderConfig {
        record_contributors: true,
        ..cfg.clone()
    };
    let eval = |m: &GaussianModel, with_grad: bool| -> Result<(f64, Vec<ParamGrad>)> {
        let rb = render(m, reference.0, &cfg);
        let nb = render(m, neighbor.0, &cfg);
        let rv = LossView {
            cam: reference.0,
            buffers: &rb,
            gt: reference.1,
        };
        let nv = LossView {
            cam: neighbor.0,
            buffers: &nb,
            gt: neighbor.1,
        };
        if with_grad {
            let step = device_gradients(m, &rv, Some(&nv), t, w, grid, &cfg)?;
            Ok((step.components.total, step.grads.params))
        } else {
            Ok((device_loss(m, &rv, Some(&nv), t, w, grid)?.0.total, Vec::new()))
        }
    };
    let (_, analytic) = eval(model, true)?;
    let mut err = None;
    let report = check_model(model, &analytic, h, |m| match eval(m, false) {
        Ok((v, _)) => v,
        Err(e) => {
            err.get_or_insert(e);
            f64::NAN
        }
    });
    match err {
        Some(e) => Err(e),
        None => Ok(report),
    }
}
