//! L1 and windowed SSIM image losses with their gradients.

use crate::error::Result;
use crate::image::ImageBuf;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// Normalized 1D Gaussian taps; the 2D window is their outer product.
pub fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let r = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let x = i as f64 - r;
        *v = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Separable Gaussian filter with zero padding (window centered on each pixel).
fn blur(src: &[f64], w: usize, h: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as isize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                let xx = x as isize + k as isize - r;
                if xx >= 0 && (xx as usize) < w {
                    acc += t * row[xx as usize];
                }
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                let yy = y as isize + k as isize - r;
                if yy >= 0 && (yy as usize) < h {
                    acc += t * tmp[yy as usize * w + x];
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Mean SSIM over all pixels and channels.
pub fn ssim(a: &ImageBuf, b: &ImageBuf) -> Result<f64> {
    Ok(ssim_impl(a, b, false)?.0)
}

/// Mean SSIM and its gradient with respect to `a` (same layout as `a.data`).
pub fn ssim_with_grad(a: &ImageBuf, b: &ImageBuf) -> Result<(f64, Vec<f64>)> {
    ssim_impl(a, b, true)
}

fn ssim_impl(a: &ImageBuf, b: &ImageBuf, want_grad: bool) -> Result<(f64, Vec<f64>)> {
    a.check_same_shape(b)?;
    let (w, h, nc) = (a.width, a.height, a.channels);
    let n = w * h;
    let taps = gaussian_window();
    let norm = 1.0 / (n * nc) as f64;
    let mut total = 0.0;
    let mut grad = if want_grad { vec![0.0; a.data.len()] } else { Vec::new() };
    for c in 0..nc {
        let x: Vec<f64> = (0..n).map(|i| a.data[i * nc + c]).collect();
        let y: Vec<f64> = (0..n).map(|i| b.data[i * nc + c]).collect();
        let mx = blur(&x, w, h, &taps);
        let my = blur(&y, w, h, &taps);
        let xx = blur(&x.iter().map(|v| v * v).collect::<Vec<_>>(), w, h, &taps);
        let yy = blur(&y.iter().map(|v| v * v).collect::<Vec<_>>(), w, h, &taps);
        let xy = blur(&x.iter().zip(&y).map(|(p, q)| p * q).collect::<Vec<_>>(), w, h, &taps);
        let mut d_mu = vec![0.0; if want_grad { n } else { 0 }];
        let mut d_var = d_mu.clone();
        let mut d_cov = d_mu.clone();
        for i in 0..n {
            let vx = xx[i] - mx[i] * mx[i];
            let vy = yy[i] - my[i] * my[i];
            let cxy = xy[i] - mx[i] * my[i];
            let n1 = 2.0 * mx[i] * my[i] + SSIM_C1;
            let n2 = 2.0 * cxy + SSIM_C2;
            let d1 = mx[i] * mx[i] + my[i] * my[i] + SSIM_C1;
            let d2 = vx + vy + SSIM_C2;
            let s = n1 * n2 / (d1 * d2);
            total += s;
            if want_grad {
                let a_ = (2.0 * my[i] * n2 / (d1 * d2) - s * 2.0 * mx[i] / d1) * norm;
                let b_ = -s / d2 * norm;
                let c_ = 2.0 * n1 / (d1 * d2) * norm;
                d_mu[i] = a_ - 2.0 * mx[i] * b_ - my[i] * c_;
                d_var[i] = b_;
                d_cov[i] = c_;
            }
        }
        if want_grad {
            // The zero-padded symmetric filter is its own adjoint.
            let g_mu = blur(&d_mu, w, h, &taps);
            let g_var = blur(&d_var, w, h, &taps);
            let g_cov = blur(&d_cov, w, h, &taps);
            for i in 0..n {
                grad[i * nc + c] = g_mu[i] + 2.0 * x[i] * g_var[i] + y[i] * g_cov[i];
            }
        }
    }
    Ok((total * norm, grad))
}

pub fn l1(a: &ImageBuf, b: &ImageBuf) -> Result<f64> {
    a.check_same_shape(b)?;
    let s: f64 = a.data.iter().zip(&b.data).map(|(p, q)| (p - q).abs()).sum();
    Ok(s / a.data.len().max(1) as f64)
}

/// `(1 − λ)·L1 + λ·(1 − SSIM)`.
pub fn l1_ssim(a: &ImageBuf, b: &ImageBuf, lambda: f64) -> Result<f64> {
    let d_ssim = if lambda == 0.0 { 0.0 } else { 1.0 - ssim(a, b)? };
    Ok((1.0 - lambda) * l1(a, b)? + lambda * d_ssim)
}

/// [`l1_ssim`] plus its gradient with respect to `a`. Also returns the L1 and
/// SSIM parts for logging.
pub fn l1_ssim_with_grad(a: &ImageBuf, b: &ImageBuf, lambda: f64) -> Result<L1SsimParts> {
    a.check_same_shape(b)?;
    let n = a.data.len().max(1) as f64;
    let l1v = l1(a, b)?;
    let (s, gs) = ssim_with_grad(a, b)?;
    let grad = a
        .data
        .iter()
        .zip(&b.data)
        .zip(&gs)
        .map(|((p, q), g)| {
            let sign = if p > q {
                1.0
            } else if p < q {
                -1.0
            } else {
                0.0
            };
            (1.0 - lambda) * sign / n - lambda * g
        })
        .collect();
    Ok(L1SsimParts {
        value: (1.0 - lambda) * l1v + lambda * (1.0 - s),
        l1: l1v,
        ssim: s,
        grad,
    })
}

#[derive(Clone, Debug)]
pub struct L1SsimParts {
    pub value: f64,
    pub l1: f64,
    pub ssim: f64,
    pub grad: Vec<f64>,
}
