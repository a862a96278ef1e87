//! Point-cloud precision, recall and F-score at a distance threshold.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::math::Vec3;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FScore {
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
}

impl FScore {
    pub fn from_pr(precision: f64, recall: f64) -> FScore {
        let f = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        FScore { precision, recall, f }
    }
}

/// Uniform hash grid with cells no smaller than the query radius, so every
/// point within the radius lies in the 27 cells around the query.
struct PointGrid<'a> {
    points: &'a [Vec3],
    cell: f64,
    cells: HashMap<[i64; 3], Vec<u32>>,
}

impl<'a> PointGrid<'a> {
    fn new(points: &'a [Vec3], radius: f64) -> Self {
        let cell = radius * (1.0 + 1e-9);
        let mut cells: HashMap<[i64; 3], Vec<u32>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::key(p, cell)).or_default().push(i as u32);
        }
        PointGrid { points, cell, cells }
    }

    fn key(p: &Vec3, cell: f64) -> [i64; 3] {
        [(p.x / cell).floor() as i64, (p.y / cell).floor() as i64, (p.z / cell).floor() as i64]
    }

    fn any_within(&self, q: &Vec3, r2: f64) -> bool {
        let k = Self::key(q, self.cell);
        for dz in -1..=1 {
            for dy in -1..=1 {
                for dx in -1..=1 {
                    if let Some(ids) = self.cells.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) {
                        if ids.iter().any(|&i| (self.points[i as usize] - q).norm_squared() <= r2) {
                            return true;
                        }
                    }
                }
            }
        }
        false
    }
}

/// Fraction of `queries` with some point of `targets` within `eps`.
pub fn fraction_within(queries: &[Vec3], targets: &[Vec3], eps: f64) -> f64 {
    let grid = PointGrid::new(targets, eps);
    let r2 = eps * eps;
    let hits = queries.iter().filter(|q| grid.any_within(q, r2)).count();
    hits as f64 / queries.len().max(1) as f64
}

/// Precision of `pred` against `gt`, recall of `gt` against `pred`, and
/// their harmonic mean. Distances use `≤ eps`.
pub fn fscore(pred: &[Vec3], gt: &[Vec3], eps: f64) -> Result<FScore> {
    if pred.is_empty() || gt.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Config(format!("f-score threshold must be positive, got {eps}")));
    }
    Ok(FScore::from_pr(fraction_within(pred, gt, eps), fraction_within(gt, pred, eps)))
}
