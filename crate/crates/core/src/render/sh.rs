//! Real spherical harmonics up to degree 2, in the splatting convention:
//! channel color = ½ + Σ_k basis_k(d) · coeff_k, clamped to [0, 1].

use nalgebra::Vector3;

use crate::math::Real;

const C1: f64 = 0.488_602_511_902_919_92;
const C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];

/// Basis values for a unit direction; only the first `sh_coeff_count(degree)`
/// entries are meaningful.
pub fn basis<T: Real>(degree: u32, d: Vector3<T>) -> [T; 9] {
    let (x, y, z) = (d[0], d[1], d[2]);
    let mut b = [T::zero(); 9];
    b[0] = T::of(crate::scene::SH_C0);
    if degree >= 1 {
        let c1 = T::of(C1);
        b[1] = -c1 * y;
        b[2] = c1 * z;
        b[3] = -c1 * x;
    }
    if degree >= 2 {
        b[4] = T::of(C2[0]) * x * y;
        b[5] = T::of(C2[1]) * y * z;
        b[6] = T::of(C2[2]) * (T::of(2.0) * z * z - x * x - y * y);
        b[7] = T::of(C2[3]) * x * z;
        b[8] = T::of(C2[4]) * (x * x - y * y);
    }
    b
}

/// ∂basis_k/∂d for the same convention.
pub fn basis_grad<T: Real>(degree: u32, d: Vector3<T>) -> [Vector3<T>; 9] {
    let (x, y, z) = (d[0], d[1], d[2]);
    let zero = Vector3::zeros();
    let mut g = [zero; 9];
    if degree >= 1 {
        let c1 = T::of(C1);
        g[1] = Vector3::new(T::zero(), -c1, T::zero());
        g[2] = Vector3::new(T::zero(), T::zero(), c1);
        g[3] = Vector3::new(-c1, T::zero(), T::zero());
    }
    if degree >= 2 {
        let two = T::of(2.0);
        g[4] = Vector3::new(y, x, T::zero()) * T::of(C2[0]);
        g[5] = Vector3::new(T::zero(), z, y) * T::of(C2[1]);
        g[6] = Vector3::new(-two * x, -two * y, T::of(4.0) * z) * T::of(C2[2]);
        g[7] = Vector3::new(z, T::zero(), x) * T::of(C2[3]);
        g[8] = Vector3::new(two * x, -two * y, T::zero()) * T::of(C2[4]);
    }
    g
}

/// Pre-clamp color ½ + Σ basis·coeff.
pub fn eval<T: Real>(degree: u32, coeffs: &[Vector3<T>], dir: Vector3<T>) -> Vector3<T> {
    let b = basis(degree, dir);
    let mut c = Vector3::from_element(T::of(0.5));
    for (k, coeff) in coeffs.iter().enumerate() {
        c += coeff * b[k];
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degree0_is_direction_independent() {
        let coeffs = vec![Vector3::new(0.7_f64, -0.2, 0.1)];
        let a = eval(0, &coeffs, Vector3::new(1.0, 0.0, 0.0));
        let b = eval(0, &coeffs, Vector3::new(0.0, -1.0, 0.0).normalize());
        assert!((a - b).norm() < 1e-15);
        assert!((a[0] - (0.5 + 0.7 * crate::scene::SH_C0)).abs() < 1e-15);
    }

    #[test]
    fn basis_grads_match_finite_differences() {
        let d = Vector3::new(0.3_f64, -0.5, 0.8).normalize();
        let g = basis_grad(2, d);
        let h = 1e-6;
        for k in 0..9 {
            for c in 0..3 {
                let mut dp = d;
                let mut dm = d;
                dp[c] += h;
                dm[c] -= h;
                // FD on the unnormalized coordinates — basis is a polynomial
                let fd = (basis(2, dp)[k] - basis(2, dm)[k]) / (2.0 * h);
                assert!((g[k][c] - fd).abs() < 1e-8, "basis {k} comp {c}");
            }
        }
    }
}
