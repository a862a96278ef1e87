use crate::error::{Error, Result};
use crate::math::{Aabb, Vec3};
use crate::scene::primitive::GaussianPrimitive;
use crate::scene::sh::{coeff_count, MAX_SH_COEFFS, MAX_SH_DEGREE};

pub const DEFAULT_SH_DEGREE: u8 = 1;

/// Ordered collection of primitives exchanged between agents.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianModel {
    pub primitives: Vec<GaussianPrimitive>,
    pub sh_degree: u8,
    /// Always contains every primitive mean; may be larger (e.g. after a union).
    pub extent: Aabb,
    pub model_id: String,
    /// Ids of the models this one was aggregated from; empty for device models.
    pub provenance: Vec<String>,
}

impl GaussianModel {
    pub fn new(model_id: impl Into<String>, sh_degree: u8) -> Result<Self> {
        if sh_degree > MAX_SH_DEGREE {
            return Err(Error::Config(format!("SH degree {sh_degree} exceeds {MAX_SH_DEGREE}")));
        }
        Ok(GaussianModel {
            primitives: Vec::new(),
            sh_degree,
            extent: Aabb::empty(),
            model_id: model_id.into(),
            provenance: Vec::new(),
        })
    }

    pub fn from_primitives(
        model_id: impl Into<String>,
        sh_degree: u8,
        primitives: Vec<GaussianPrimitive>,
    ) -> Result<Self> {
        let mut m = GaussianModel::new(model_id, sh_degree)?;
        m.primitives = primitives;
        m.clear_unused_sh();
        m.recompute_extent();
        Ok(m)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.primitives.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }

    pub fn push(&mut self, p: GaussianPrimitive) {
        self.extent.include(&p.mean);
        self.primitives.push(p);
    }

    /// Tight box around the primitive means.
    pub fn recompute_extent(&mut self) {
        self.extent = Aabb::from_points(self.primitives.iter().map(|p| &p.mean));
    }

    /// Grows the extent to cover means that moved outside it.
    pub fn grow_extent(&mut self) {
        for p in &self.primitives {
            self.extent.include(&p.mean);
        }
    }

    pub fn extent_contains_means(&self) -> bool {
        self.primitives.iter().all(|p| self.extent.contains(&p.mean))
    }

    /// Keeps primitives whose mask entry is true, preserving order.
    pub fn retain_mask(&mut self, keep: &[bool]) {
        debug_assert_eq!(keep.len(), self.primitives.len());
        let mut i = 0;
        self.primitives.retain(|_| {
            let k = keep[i];
            i += 1;
            k
        });
    }

    pub fn means(&self) -> impl Iterator<Item = &Vec3> {
        self.primitives.iter().map(|p| &p.mean)
    }

    /// Zeroes coefficients above the model's SH degree.
    pub fn clear_unused_sh(&mut self) {
        let n = coeff_count(self.sh_degree);
        for p in &mut self.primitives {
            for row in &mut p.sh {
                row[n..MAX_SH_COEFFS].iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }

    /// Rounds every stored parameter to the 32-bit file precision and
    /// renormalizes rotations, so that serialization is lossless.
    pub fn canonicalize(&mut self) {
        let r = |v: f64| v as f32 as f64;
        for p in &mut self.primitives {
            p.renormalize();
            p.mean = p.mean.map(r);
            p.rotation = p.rotation.map(r);
            p.log_scale = p.log_scale.map(r);
            p.opacity_logit = r(p.opacity_logit);
            for row in &mut p.sh {
                for v in row.iter_mut() {
                    *v = r(*v);
                }
            }
        }
        self.clear_unused_sh();
        self.grow_extent();
    }
}
