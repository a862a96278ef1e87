//! PLY writers for Gaussian models, triangle meshes and point clouds.
//!
//! Gaussian models are written with the usual splatting vertex layout
//! (`x y z nx ny nz f_dc_* f_rest_* opacity scale_* rot_*`, binary little endian).

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::scene::model::GaussianModel;
use crate::scene::primitive::GaussianPrimitive;
use crate::scene::sh::{coeff_count, MAX_SH_COEFFS};

fn gaussian_properties(degree: u8) -> Vec<String> {
    let rest = coeff_count(degree) - 1;
    let mut props: Vec<String> = ["x", "y", "z", "nx", "ny", "nz"].iter().map(|s| s.to_string()).collect();
    props.extend((0..3).map(|i| format!("f_dc_{i}")));
    props.extend((0..3 * rest).map(|i| format!("f_rest_{i}")));
    props.push("opacity".into());
    props.extend((0..3).map(|i| format!("scale_{i}")));
    props.extend((0..4).map(|i| format!("rot_{i}")));
    props
}

pub fn gaussian_ply_bytes(model: &GaussianModel) -> Vec<u8> {
    let props = gaussian_properties(model.sh_degree);
    let mut header = String::from("ply\nformat binary_little_endian 1.0\n");
    let _ = writeln!(header, "comment sh_degree {}", model.sh_degree);
    let _ = writeln!(header, "element vertex {}", model.len());
    for p in &props {
        let _ = writeln!(header, "property float {p}");
    }
    header.push_str("end_header\n");
    let mut out = header.into_bytes();
    let rest = coeff_count(model.sh_degree) - 1;
    for p in &model.primitives {
        let mut vals: Vec<f64> = vec![p.mean.x, p.mean.y, p.mean.z, 0.0, 0.0, 0.0];
        vals.extend((0..3).map(|c| p.sh[c][0]));
        for c in 0..3 {
            vals.extend_from_slice(&p.sh[c][1..1 + rest]);
        }
        vals.push(p.opacity_logit);
        vals.extend(p.log_scale.iter());
        vals.extend(p.rotation.iter());
        for v in vals {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn write_gaussian_ply(model: &GaussianModel, path: &Path) -> Result<()> {
    std::fs::write(path, gaussian_ply_bytes(model))?;
    Ok(())
}

/// Reads a Gaussian PLY as produced by [`gaussian_ply_bytes`].
pub fn read_gaussian_ply(bytes: &[u8], model_id: &str) -> Result<GaussianModel> {
    const END: &[u8] = b"end_header\n";
    let end = bytes
        .windows(END.len())
        .position(|w| w == END)
        .ok_or_else(|| Error::parse("ply", "missing end_header"))?
        + END.len();
    let header = std::str::from_utf8(&bytes[..end]).map_err(|e| Error::parse("ply", e.to_string()))?;
    let mut count = 0usize;
    let mut degree = 0u8;
    let mut props = Vec::new();
    for line in header.lines() {
        let f: Vec<&str> = line.split_whitespace().collect();
        match f.as_slice() {
            ["element", "vertex", n] => count = n.parse().map_err(|_| Error::parse("ply", "vertex count"))?,
            ["comment", "sh_degree", d] => degree = d.parse().map_err(|_| Error::parse("ply", "sh degree"))?,
            ["property", "float", name] => props.push(name.to_string()),
            _ => {}
        }
    }
    if props != gaussian_properties(degree) {
        return Err(Error::parse("ply", "unexpected property layout"));
    }
    let stride = props.len() * 4;
    let body = &bytes[end..];
    if body.len() != count * stride {
        return Err(Error::TruncatedPayload {
            expected: end + count * stride,
            found: bytes.len(),
        });
    }
    let rest = coeff_count(degree) - 1;
    let mut prims = Vec::with_capacity(count);
    for rec in body.chunks_exact(stride) {
        let v: Vec<f64> = rec
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        let mut sh = [[0.0; MAX_SH_COEFFS]; 3];
        for c in 0..3 {
            sh[c][0] = v[6 + c];
            for k in 0..rest {
                sh[c][1 + k] = v[9 + c * rest + k];
            }
        }
        let o = 9 + 3 * rest;
        prims.push(GaussianPrimitive {
            mean: Vec3::new(v[0], v[1], v[2]),
            opacity_logit: v[o],
            log_scale: Vec3::new(v[o + 1], v[o + 2], v[o + 3]),
            rotation: [v[o + 4], v[o + 5], v[o + 6], v[o + 7]],
            sh,
        });
    }
    GaussianModel::from_primitives(model_id, degree, prims)
}

/// Triangle mesh in world coordinates.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[usize; 3]>,
}

impl TriangleMesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn triangle_area(&self, t: &[usize; 3]) -> f64 {
        let a = self.vertices[t[0]];
        (self.vertices[t[1]] - a).cross(&(self.vertices[t[2]] - a)).norm() * 0.5
    }

    pub fn surface_area(&self) -> f64 {
        self.triangles.iter().map(|t| self.triangle_area(t)).sum()
    }
}

/// ASCII PLY with `vertex` and `face` elements.
pub fn write_mesh_ply(mesh: &TriangleMesh, path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "ply\nformat ascii 1.0\nelement vertex {}", mesh.vertices.len())?;
    writeln!(w, "property float x\nproperty float y\nproperty float z")?;
    writeln!(w, "element face {}\nproperty list uchar int vertex_indices\nend_header", mesh.triangles.len())?;
    for v in &mesh.vertices {
        writeln!(w, "{} {} {}", v.x as f32, v.y as f32, v.z as f32)?;
    }
    for t in &mesh.triangles {
        writeln!(w, "3 {} {} {}", t[0], t[1], t[2])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_points_ply(points: &[Vec3], path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "ply\nformat ascii 1.0\nelement vertex {}", points.len())?;
    writeln!(w, "property float x\nproperty float y\nproperty float z\nend_header")?;
    for v in points {
        writeln!(w, "{} {} {}", v.x as f32, v.y as f32, v.z as f32)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the vertex positions of an ASCII PLY (mesh or point cloud).
pub fn read_points_ply(path: &Path) -> Result<Vec<Vec3>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let mut count = 0usize;
    for line in lines.by_ref() {
        let f: Vec<&str> = line.split_whitespace().collect();
        if let ["element", "vertex", n] = f.as_slice() {
            count = n.parse().map_err(|_| Error::parse("ply", "vertex count"))?;
        }
        if line.trim() == "end_header" {
            break;
        }
    }
    lines
        .take(count)
        .map(|l| {
            let v: Vec<f64> = l
                .split_whitespace()
                .take(3)
                .map(|s| s.parse::<f64>().map_err(|e| Error::parse("ply", e.to_string())))
                .collect::<Result<_>>()?;
            if v.len() != 3 {
                return Err(Error::parse("ply", "short vertex line"));
            }
            Ok(Vec3::new(v[0], v[1], v[2]))
        })
        .collect()
}
