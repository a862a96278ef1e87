//! The `CSGS` binary model format.
//!
//! Layout (little endian): magic `CSGS`, format version `u32`, SH degree `u8`,
//! primitive count `u64`, then per primitive `f32` values in the order
//! mean(3), rotation(4, wxyz), log_scale(3), opacity_logit(1),
//! color coefficients(3·(deg+1)², channel-major).

use std::path::Path;

use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::scene::model::GaussianModel;
use crate::scene::primitive::GaussianPrimitive;
use crate::scene::sh::{coeff_count, MAX_SH_COEFFS, MAX_SH_DEGREE};

pub const MAGIC: &[u8; 4] = b"CSGS";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 4 + 4 + 1 + 8;

pub fn floats_per_primitive(degree: u8) -> usize {
    3 + 4 + 3 + 1 + 3 * coeff_count(degree)
}

pub fn serialize(model: &GaussianModel) -> Vec<u8> {
    let n = coeff_count(model.sh_degree);
    let mut out =
        Vec::with_capacity(HEADER_LEN + model.len() * floats_per_primitive(model.sh_degree) * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(model.sh_degree);
    out.extend_from_slice(&(model.len() as u64).to_le_bytes());
    let mut put = |v: f64| out.extend_from_slice(&(v as f32).to_le_bytes());
    for p in &model.primitives {
        p.mean.iter().for_each(|&v| put(v));
        p.rotation.iter().for_each(|&v| put(v));
        p.log_scale.iter().for_each(|&v| put(v));
        put(p.opacity_logit);
        for row in &p.sh {
            row[..n].iter().for_each(|&v| put(v));
        }
    }
    out
}

pub fn deserialize(bytes: &[u8], model_id: impl Into<String>) -> Result<GaussianModel> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::MalformedHeader(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::MalformedHeader("bad magic bytes".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let degree = bytes[8];
    if degree > MAX_SH_DEGREE {
        return Err(Error::MalformedHeader(format!("SH degree {degree} out of range")));
    }
    let count = u64::from_le_bytes(bytes[9..17].try_into().unwrap());
    let per = floats_per_primitive(degree) * 4;
    let expected = usize::try_from(count)
        .ok()
        .and_then(|c| c.checked_mul(per))
        .and_then(|b| b.checked_add(HEADER_LEN))
        .ok_or_else(|| Error::MalformedHeader(format!("primitive count {count} overflows")))?;
    if bytes.len() < expected {
        return Err(Error::TruncatedPayload {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Error::MalformedHeader(format!(
            "{} trailing bytes after payload",
            bytes.len() - expected
        )));
    }
    let n = coeff_count(degree);
    let mut cursor = HEADER_LEN;
    let mut next = || {
        let v = f32::from_le_bytes(bytes[cursor..cursor + 4].try_into().unwrap()) as f64;
        cursor += 4;
        v
    };
    let mut prims = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let mean = Vec3::new(next(), next(), next());
        let rotation = [next(), next(), next(), next()];
        let log_scale = Vec3::new(next(), next(), next());
        let opacity_logit = next();
        let mut sh = [[0.0; MAX_SH_COEFFS]; 3];
        for row in &mut sh {
            for v in row.iter_mut().take(n) {
                *v = next();
            }
        }
        prims.push(GaussianPrimitive {
            mean,
            rotation,
            log_scale,
            opacity_logit,
            sh,
        });
    }
    GaussianModel::from_primitives(model_id, degree, prims)
}

pub fn save(model: &GaussianModel, path: &Path) -> Result<()> {
    std::fs::write(path, serialize(model))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<GaussianModel> {
    let bytes = std::fs::read(path)?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    deserialize(&bytes, id)
}
