//! Image quality metrics.

use crate::error::Result;
use crate::image::ImageBuf;

pub use crate::loss::photometric::ssim;

/// Reported PSNR when the images are (numerically) identical.
pub const PSNR_CAP: f64 = 99.0;
const MSE_FLOOR: f64 = 1e-10;

pub fn mse(a: &ImageBuf, b: &ImageBuf) -> Result<f64> {
    a.check_same_shape(b)?;
    let n = a.data.len().max(1) as f64;
    Ok(a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n)
}

/// `10·log10(1 / MSE)` for images in [0, 1], capped at [`PSNR_CAP`].
pub fn psnr(a: &ImageBuf, b: &ImageBuf) -> Result<f64> {
    let m = mse(a, b)?;
    if m < MSE_FLOOR {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / m).log10()).min(PSNR_CAP))
}
