//! Real spherical-harmonic basis up to degree 2.

use crate::math::Vec3;

pub const MAX_SH_DEGREE: u8 = 2;
pub const MAX_SH_COEFFS: usize = 9;

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
pub const SH_C1: f64 = 0.488_602_511_902_919_9;
pub const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];

#[inline]
pub const fn coeff_count(degree: u8) -> usize {
    (degree as usize + 1) * (degree as usize + 1)
}

/// Basis values for a unit direction; entries past `coeff_count(degree)` are zero.
pub fn basis(degree: u8, d: &Vec3) -> [f64; MAX_SH_COEFFS] {
    let mut b = [0.0; MAX_SH_COEFFS];
    b[0] = SH_C0;
    if degree >= 1 {
        b[1] = -SH_C1 * d.y;
        b[2] = SH_C1 * d.z;
        b[3] = -SH_C1 * d.x;
    }
    if degree >= 2 {
        let (x, y, z) = (d.x, d.y, d.z);
        b[4] = SH_C2[0] * x * y;
        b[5] = SH_C2[1] * y * z;
        b[6] = SH_C2[2] * (2.0 * z * z - x * x - y * y);
        b[7] = SH_C2[3] * x * z;
        b[8] = SH_C2[4] * (x * x - y * y);
    }
    b
}

/// Jacobian of [`basis`] with respect to the direction components.
pub fn basis_grad(degree: u8, d: &Vec3) -> [[f64; 3]; MAX_SH_COEFFS] {
    let mut g = [[0.0; 3]; MAX_SH_COEFFS];
    if degree >= 1 {
        g[1] = [0.0, -SH_C1, 0.0];
        g[2] = [0.0, 0.0, SH_C1];
        g[3] = [-SH_C1, 0.0, 0.0];
    }
    if degree >= 2 {
        let (x, y, z) = (d.x, d.y, d.z);
        g[4] = [SH_C2[0] * y, SH_C2[0] * x, 0.0];
        g[5] = [0.0, SH_C2[1] * z, SH_C2[1] * y];
        g[6] = [-2.0 * SH_C2[2] * x, -2.0 * SH_C2[2] * y, 4.0 * SH_C2[2] * z];
        g[7] = [SH_C2[3] * z, 0.0, SH_C2[3] * x];
        g[8] = [2.0 * SH_C2[4] * x, -2.0 * SH_C2[4] * y, 0.0];
    }
    g
}

/// DC coefficient reproducing a constant color `c` (before the +0.5 offset).
#[inline]
pub fn rgb_to_dc(c: f64) -> f64 {
    (c - 0.5) / SH_C0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basis_gradient_matches_finite_differences() {
        let d = Vec3::new(0.3, -0.5, 0.81);
        let g = basis_grad(2, &d);
        for axis in 0..3 {
            let mut dp = d;
            let mut dm = d;
            dp[axis] += 1e-6;
            dm[axis] -= 1e-6;
            let bp = basis(2, &dp);
            let bm = basis(2, &dm);
            for k in 0..MAX_SH_COEFFS {
                let fd = (bp[k] - bm[k]) / 2e-6;
                assert!((fd - g[k][axis]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn degree_zero_is_constant() {
        let b = basis(0, &Vec3::new(0.0, 0.0, 1.0));
        assert_eq!(b[0], SH_C0);
        assert!(b[1..].iter().all(|&v| v == 0.0));
        assert!((SH_C0 * rgb_to_dc(0.8) + 0.5 - 0.8).abs() < 1e-15);
    }
}
