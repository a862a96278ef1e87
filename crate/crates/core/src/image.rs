//! Interleaved floating-point image buffers plus PNG and raw-float dumps.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const RAW_MAGIC: &[u8; 4] = b"RAWF";

/// Row-major, channel-interleaved image of `f64` samples.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuf {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl ImageBuf {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        ImageBuf {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::ShapeMismatch(format!(
                "{} samples for a {width}x{height}x{channels} image",
                data.len()
            )));
        }
        Ok(ImageBuf {
            width,
            height,
            channels,
            data,
        })
    }

    #[inline]
    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize) -> usize {
        (y * self.width + x) * self.channels
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[self.idx(x, y) + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        let i = self.idx(x, y) + c;
        self.data[i] = v;
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = self.idx(x, y);
        &self.data[i..i + self.channels]
    }

    pub fn same_shape(&self, other: &ImageBuf) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn check_same_shape(&self, other: &ImageBuf) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "{}x{}x{} vs {}x{}x{}",
                self.width, self.height, self.channels, other.width, other.height, other.channels
            )))
        }
    }

    /// Extracts channel `c` as a single-channel image.
    pub fn channel(&self, c: usize) -> ImageBuf {
        let data = self.data.iter().skip(c).step_by(self.channels).copied().collect();
        ImageBuf {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    /// Luminance of an RGB image (Rec. 601 weights).
    pub fn to_gray(&self) -> ImageBuf {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self
            .data
            .chunks_exact(self.channels)
            .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
            .collect();
        ImageBuf {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    /// Bilinear sample at continuous pixel coordinates where pixel `(x, y)` has
    /// its center at `(x + 0.5, y + 0.5)`. Returns `None` outside the image.
    pub fn sample_bilinear(&self, u: f64, v: f64, c: usize) -> Option<f64> {
        let (x0, y0, fx, fy) = bilinear_taps(u, v, self.width, self.height)?;
        let a = self.at(x0, y0, c);
        let b = self.at(x0 + 1, y0, c);
        let d = self.at(x0, y0 + 1, c);
        let e = self.at(x0 + 1, y0 + 1, c);
        Some((1.0 - fy) * ((1.0 - fx) * a + fx * b) + fy * ((1.0 - fx) * d + fx * e))
    }

    pub fn load_png(path: &Path) -> Result<ImageBuf> {
        let img = image::open(path)?.to_rgb8();
        let (w, h) = img.dimensions();
        let data = img.into_raw().into_iter().map(|v| v as f64 / 255.0).collect();
        Ok(ImageBuf {
            width: w as usize,
            height: h as usize,
            channels: 3,
            data,
        })
    }

    /// Writes an 8-bit RGB PNG. Single-channel images are replicated to gray.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(self.pixel_count() * 3);
        for p in self.data.chunks_exact(self.channels) {
            for c in 0..3 {
                let v = if self.channels >= 3 { p[c] } else { p[0] };
                bytes.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
        let img = image::RgbImage::from_raw(self.width as u32, self.height as u32, bytes)
            .ok_or_else(|| Error::ShapeMismatch("PNG buffer size".into()))?;
        img.save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }

    /// Raw planar dump: `RAWF`, width/height/channels as u32 LE, then one f32 LE
    /// plane per channel.
    pub fn write_raw(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(RAW_MAGIC)?;
        for v in [self.width, self.height, self.channels] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        for c in 0..self.channels {
            for i in 0..self.pixel_count() {
                w.write_all(&(self.data[i * self.channels + c] as f32).to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_raw(path: &Path) -> Result<ImageBuf> {
        let mut bytes = Vec::new();
        BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
        if bytes.len() < 16 || &bytes[..4] != RAW_MAGIC {
            return Err(Error::parse(path.display().to_string(), "not a raw float image"));
        }
        let dim = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
        let (w, h, ch) = (dim(0), dim(1), dim(2));
        let expected = 16 + w * h * ch * 4;
        if bytes.len() != expected {
            return Err(Error::TruncatedPayload {
                expected,
                found: bytes.len(),
            });
        }
        let mut out = ImageBuf::new(w, h, ch);
        for c in 0..ch {
            for i in 0..w * h {
                let o = 16 + (c * w * h + i) * 4;
                out.data[i * ch + c] = f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as f64;
            }
        }
        Ok(out)
    }
}

/// Integer taps and fractional weights for bilinear sampling at `(u, v)` on a
/// pixel-center grid. `None` when any tap falls outside the image.
#[inline]
pub fn bilinear_taps(u: f64, v: f64, width: usize, height: usize) -> Option<(usize, usize, f64, f64)> {
    let (x0, fx) = axis_taps(u - 0.5, width)?;
    let (y0, fy) = axis_taps(v - 0.5, height)?;
    Some((x0, y0, fx, fy))
}

/// Positions within 1e-9 of the outermost centers snap onto them, so warps that
/// are exact up to rounding still sample the border.
#[inline]
fn axis_taps(g: f64, n: usize) -> Option<(usize, f64)> {
    const SNAP: f64 = 1e-9;
    if n < 2 || !(g > -SNAP && g < (n - 1) as f64 + SNAP) {
        return None;
    }
    let g = g.clamp(0.0, (n - 1) as f64);
    let i = (g.floor() as usize).min(n - 2);
    Some((i, g - i as f64))
}

/// Maps a depth map to gray, near = bright, invalid = black.
pub fn tonemap_depth(depth: &[f64], valid: &[bool], width: usize, height: usize) -> ImageBuf {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (d, &ok) in depth.iter().zip(valid) {
        if ok {
            lo = lo.min(*d);
            hi = hi.max(*d);
        }
    }
    let span = (hi - lo).max(1e-12);
    let data = depth
        .iter()
        .zip(valid)
        .map(|(d, &ok)| if ok { 1.0 - 0.9 * (d - lo) / span } else { 0.0 })
        .collect();
    ImageBuf {
        width,
        height,
        channels: 1,
        data,
    }
}

/// Maps unit normals from [-1, 1] to [0, 1] per channel.
pub fn tonemap_normal(normal: &ImageBuf) -> ImageBuf {
    ImageBuf {
        data: normal.data.iter().map(|v| 0.5 * (v + 1.0)).collect(),
        ..normal.clone()
    }
}
