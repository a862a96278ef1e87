//! Truncated signed-distance fusion of depth maps and isosurface extraction.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::math::{Aabb, Vec3};
use crate::scene::{Camera, TriangleMesh};

/// Truncation band in voxels.
pub const TRUNCATION_VOXELS: f64 = 5.0;

/// A depth map (distance along the unit pixel ray) with its camera.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthObservation {
    pub camera: Camera,
    pub depth: Vec<f64>,
    pub valid: Vec<bool>,
}

impl DepthObservation {
    fn lookup(&self, u: f64, v: f64) -> Option<f64> {
        let (w, h) = (self.camera.width as usize, self.camera.height as usize);
        if !(u >= 0.0 && v >= 0.0) {
            return None;
        }
        let (x, y) = (u as usize, v as usize);
        if x >= w || y >= h {
            return None;
        }
        let i = y * w + x;
        self.valid[i].then_some(self.depth[i])
    }
}

/// Dense voxel grid of truncated signed distances (positive in front of
/// the surface) with per-voxel observation counts.
#[derive(Clone, Debug)]
pub struct TsdfVolume {
    pub origin: Vec3,
    pub voxel: f64,
    pub dims: [usize; 3],
    pub truncation: f64,
    pub tsdf: Vec<f64>,
    pub weight: Vec<f64>,
}

impl TsdfVolume {
    /// Grid covering `bounds` grown by the truncation band.
    pub fn new(bounds: &Aabb, voxel: f64) -> Result<Self> {
        if !(voxel > 0.0) || bounds.is_empty() {
            return Err(Error::Config(format!("fusion needs a positive voxel size and bounds (voxel {voxel})")));
        }
        let truncation = TRUNCATION_VOXELS * voxel;
        let origin = Vec3::from(bounds.min) - Vec3::repeat(truncation);
        let size = bounds.size() + Vec3::repeat(2.0 * truncation);
        let dims = [0, 1, 2].map(|a| (size[a] / voxel).ceil() as usize + 1);
        let n = dims[0] * dims[1] * dims[2];
        if n > 400_000_000 {
            return Err(Error::Config(format!("fusion grid of {n} voxels is too large")));
        }
        Ok(TsdfVolume {
            origin,
            voxel,
            dims,
            truncation,
            tsdf: vec![1.0; n],
            weight: vec![0.0; n],
        })
    }

    #[inline]
    fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[0] + x
    }

    #[inline]
    pub fn position(&self, x: usize, y: usize, z: usize) -> Vec3 {
        self.origin + Vec3::new(x as f64, y as f64, z as f64) * self.voxel
    }

    /// Adds one view with weight 1 per voxel whose projection lands on a
    /// valid depth and that lies no deeper than the truncation band.
    pub fn integrate(&mut self, obs: &DepthObservation) {
        let [nx, ny, _] = self.dims;
        let cam = &obs.camera;
        let center = cam.center();
        let (origin, voxel, trunc) = (self.origin, self.voxel, self.truncation);
        let slab = nx * ny;
        self.tsdf
            .par_chunks_mut(slab)
            .zip(self.weight.par_chunks_mut(slab))
            .enumerate()
            .for_each(|(z, (tsdf, weight))| {
                for y in 0..ny {
                    for x in 0..nx {
                        let p = origin + Vec3::new(x as f64, y as f64, z as f64) * voxel;
                        let Some((u, v, _)) = cam.project(&p) else {
                            continue;
                        };
                        let Some(d) = obs.lookup(u, v) else {
                            continue;
                        };
                        let sdf = d - (p - center).norm();
                        if sdf < -trunc {
                            continue;
                        }
                        let val = (sdf / trunc).min(1.0);
                        let i = y * nx + x;
                        let w = weight[i];
                        tsdf[i] = (tsdf[i] * w + val) / (w + 1.0);
                        weight[i] = w + 1.0;
                    }
                }
            });
    }

    pub fn observed_voxels(&self) -> usize {
        self.weight.iter().filter(|w| **w > 0.0).count()
    }

    /// Zero level set, triangulated by splitting every fully observed cube
    /// into six tetrahedra around its main diagonal. Neighboring cubes split
    /// their shared faces the same way, so the surface is crack-free.
    /// Triangles face the positive (free-space) side.
    pub fn extract_mesh(&self) -> TriangleMesh {
        // Corner c of a cube sits at offset (c & 1, (c >> 1) & 1, c >> 2).
        const TETS: [[usize; 4]; 6] = [
            [0, 1, 3, 7],
            [0, 1, 5, 7],
            [0, 2, 3, 7],
            [0, 2, 6, 7],
            [0, 4, 5, 7],
            [0, 4, 6, 7],
        ];
        let [nx, ny, nz] = self.dims;
        let mut mesh = TriangleMesh::default();
        let mut edge_vertex: HashMap<(usize, usize), usize> = HashMap::new();
        for z in 0..nz.saturating_sub(1) {
            for y in 0..ny.saturating_sub(1) {
                for x in 0..nx.saturating_sub(1) {
                    let ids: [usize; 8] = std::array::from_fn(|c| self.index(x + (c & 1), y + ((c >> 1) & 1), z + (c >> 2)));
                    if ids.iter().any(|&i| self.weight[i] == 0.0) {
                        continue;
                    }
                    let vals = ids.map(|i| self.tsdf[i]);
                    if vals.iter().all(|v| *v >= 0.0) || vals.iter().all(|v| *v < 0.0) {
                        continue;
                    }
                    let pos: [Vec3; 8] = std::array::from_fn(|c| self.position(x + (c & 1), y + ((c >> 1) & 1), z + (c >> 2)));
                    for tet in TETS {
                        self.polygonize_tet(tet.map(|c| (ids[c], pos[c], vals[c])), &mut mesh, &mut edge_vertex);
                    }
                }
            }
        }
        mesh
    }

    fn polygonize_tet(
        &self,
        corners: [(usize, Vec3, f64); 4],
        mesh: &mut TriangleMesh,
        edge_vertex: &mut HashMap<(usize, usize), usize>,
    ) {
        let (inside, outside): (Vec<&(usize, Vec3, f64)>, Vec<_>) = corners.iter().partition(|c| c.2 < 0.0);
        if inside.is_empty() || outside.is_empty() {
            return;
        }
        let mut vertex = |a: &(usize, Vec3, f64), b: &(usize, Vec3, f64)| {
            let key = (a.0.min(b.0), a.0.max(b.0));
            *edge_vertex.entry(key).or_insert_with(|| {
                let (lo, hi) = if a.0 < b.0 { (a, b) } else { (b, a) };
                let t = lo.2 / (lo.2 - hi.2);
                mesh.vertices.push(lo.1 + (hi.1 - lo.1) * t);
                mesh.vertices.len() - 1
            })
        };
        let outward = outside.iter().map(|c| c.1).sum::<Vec3>() / outside.len() as f64
            - inside.iter().map(|c| c.1).sum::<Vec3>() / inside.len() as f64;
        let mut tris: Vec<[usize; 3]> = Vec::with_capacity(2);
        match (inside.len(), outside.len()) {
            (1, 3) => tris.push([vertex(inside[0], outside[0]), vertex(inside[0], outside[1]), vertex(inside[0], outside[2])]),
            (3, 1) => tris.push([vertex(outside[0], inside[0]), vertex(outside[0], inside[1]), vertex(outside[0], inside[2])]),
            _ => {
                // Quad around the two crossing pairs, in cyclic order.
                let q = [
                    vertex(inside[0], outside[0]),
                    vertex(inside[0], outside[1]),
                    vertex(inside[1], outside[1]),
                    vertex(inside[1], outside[0]),
                ];
                tris.push([q[0], q[1], q[2]]);
                tris.push([q[0], q[2], q[3]]);
            }
        }
        for mut t in tris {
            let v = &mesh.vertices;
            let n = (v[t[1]] - v[t[0]]).cross(&(v[t[2]] - v[t[0]]));
            if n.norm_squared() == 0.0 {
                continue;
            }
            if n.dot(&outward) < 0.0 {
                t.swap(1, 2);
            }
            mesh.triangles.push(t);
        }
    }
}

/// Fuses every observation in order and extracts the zero level set.
pub fn tsdf_fuse(observations: &[DepthObservation], bounds: &Aabb, voxel: f64) -> Result<TriangleMesh> {
    if !observations.iter().any(|o| o.valid.iter().any(|v| *v)) {
        return Err(Error::EmptyFusion);
    }
    let mut vol = TsdfVolume::new(bounds, voxel)?;
    for o in observations {
        vol.integrate(o);
    }
    let mesh = vol.extract_mesh();
    if mesh.is_empty() {
        return Err(Error::EmptyFusion);
    }
    Ok(mesh)
}

/// `n` points drawn uniformly by area from the mesh surface.
pub fn mesh_sample(mesh: &TriangleMesh, n: usize, seed: u64) -> Result<Vec<Vec3>> {
    let mut cdf = Vec::with_capacity(mesh.triangles.len());
    let mut total = 0.0;
    for t in &mesh.triangles {
        total += mesh.triangle_area(t);
        cdf.push(total);
    }
    if !(total > 0.0) {
        return Err(Error::EmptyFusion);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| {
            let r = rng.random::<f64>() * total;
            let k = cdf.partition_point(|c| *c <= r).min(cdf.len() - 1);
            let t = &mesh.triangles[k];
            let (mut a, mut b) = (rng.random::<f64>(), rng.random::<f64>());
            if a + b > 1.0 {
                (a, b) = (1.0 - a, 1.0 - b);
            }
            let v = &mesh.vertices;
            v[t[0]] + (v[t[1]] - v[t[0]]) * a + (v[t[2]] - v[t[0]]) * b
        })
        .collect())
}
