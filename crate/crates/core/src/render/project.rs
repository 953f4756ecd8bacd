//! EWA projection of a 3D Gaussian to screen space.
//!
//! With camera-space mean p = (x, y, z) and the pinhole map
//! u = fx·x/z + cx, v = fy·y/z + cy, the local affine approximation is
//!
//!   J = | fx/z   0    −fx·x/z² |
//!       |  0    fy/z  −fy·y/z² |
//!
//! and the screen covariance is Σ₂ = J W Σ₃ Wᵀ Jᵀ + floor·I with W the
//! world-to-camera rotation; the isotropic floor keeps footprints at least
//! a fraction of a pixel wide.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};

use crate::camera::Camera;
use crate::math::Real;

/// Symmetric 2×2 stored as (a, b, c) = (Σ₀₀, Σ₀₁, Σ₁₁).
pub type Sym2<T> = (T, T, T);

#[derive(Debug, Clone)]
pub struct Projection<T: Real> {
    pub t_cam: Vector3<T>,
    pub mean2: Vector2<T>,
    /// Floored screen covariance.
    pub cov2: Sym2<T>,
    /// Inverse of the floored covariance.
    pub conic: Sym2<T>,
    /// 3σ-style footprint radius in pixels (radius_sigma supplied by caller).
    pub radius: T,
}

#[inline]
pub fn jacobian<T: Real>(cam: &Camera<T>, p: Vector3<T>) -> Matrix2x3<T> {
    let (x, y, z) = (p[0], p[1], p[2]);
    let iz = T::one() / z;
    let iz2 = iz * iz;
    Matrix2x3::new(
        cam.fx * iz,
        T::zero(),
        -cam.fx * x * iz2,
        T::zero(),
        cam.fy * iz,
        -cam.fy * y * iz2,
    )
}

/// Projects mean + covariance; caller has verified t_cam.z > near.
pub fn project_gaussian<T: Real>(
    cam: &Camera<T>,
    t_cam: Vector3<T>,
    cov3_world: &Matrix3<T>,
    floor: T,
    radius_sigma: T,
) -> Projection<T> {
    let mean2 = cam.project_cam(t_cam);
    let j = jacobian(cam, t_cam);
    let m_cam = cam.r * cov3_world * cam.r.transpose();
    let c2: Matrix2<T> = j * m_cam * j.transpose();
    let (a, b, c) = (c2[(0, 0)] + floor, c2[(0, 1)], c2[(1, 1)] + floor);
    let det = a * c - b * b;
    let inv_det = T::one() / det;
    let conic = (c * inv_det, -b * inv_det, a * inv_det);
    // largest eigenvalue of [[a,b],[b,c]]
    let mid = T::of(0.5) * (a + c);
    let lam = mid + (mid * mid - det).max(T::of(1e-10)).sqrt();
    Projection {
        t_cam,
        mean2,
        cov2: (a, b, c),
        conic,
        radius: radius_sigma * lam.sqrt(),
    }
}

/// Gradients flowing out of a projected Gaussian.
#[derive(Debug, Clone, Copy)]
pub struct ProjectionGrad<T: Real> {
    pub d_t_cam: Vector3<T>,
    /// w.r.t. the *world-space* 3D covariance (full symmetric matrix).
    pub d_cov3: Matrix3<T>,
}

/// Pulls (d_mean2, d_cov2) back to camera-space mean and world covariance.
///
/// d_mean2 travels through the pinhole map (whose Jacobian is exactly J);
/// d_cov2 splits into the Σ₃ path (Pᵀ U P with P = J W) and the J path,
/// dL/dJ = 2 U J M, contracted with ∂J/∂p which only involves the entries
/// shown in `jacobian`.
pub fn project_gaussian_backward<T: Real>(
    cam: &Camera<T>,
    t_cam: Vector3<T>,
    cov3_world: &Matrix3<T>,
    d_mean2: Vector2<T>,
    d_cov2: Sym2<T>,
) -> ProjectionGrad<T> {
    let j = jacobian(cam, t_cam);
    let m_cam = cam.r * cov3_world * cam.r.transpose();
    let half = T::of(0.5);
    // full-matrix upstream for the symmetric (a, b, c) parameterization
    let u = Matrix2::new(d_cov2.0, d_cov2.1 * half, d_cov2.1 * half, d_cov2.2);

    // Σ₃ path
    let p_mat = j * cam.r; // 2×3
    let d_cov3 = p_mat.transpose() * u * p_mat;

    // mean path
    let mut d_t_cam = j.transpose() * d_mean2;

    // J path
    let d_j = u * j * m_cam * T::of(2.0); // 2×3
    let (x, y, z) = (t_cam[0], t_cam[1], t_cam[2]);
    let iz2 = T::one() / (z * z);
    let iz3 = iz2 / z;
    let two = T::of(2.0);
    d_t_cam[0] += d_j[(0, 2)] * (-cam.fx * iz2);
    d_t_cam[1] += d_j[(1, 2)] * (-cam.fy * iz2);
    d_t_cam[2] += d_j[(0, 0)] * (-cam.fx * iz2)
        + d_j[(1, 1)] * (-cam.fy * iz2)
        + d_j[(0, 2)] * (two * cam.fx * x * iz3)
        + d_j[(1, 2)] * (two * cam.fy * y * iz3);

    ProjectionGrad { d_t_cam, d_cov3 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix3;

    fn test_cam() -> Camera<f64> {
        Camera {
            fx: 90.0,
            fy: 85.0,
            cx: 64.0,
            cy: 60.0,
            width: 128,
            height: 128,
            r: nalgebra::Rotation3::from_euler_angles(0.2, -0.1, 0.3)
                .matrix()
                .to_owned(),
            t: Vector3::new(0.1, -0.2, 4.0),
        }
    }

    #[test]
    fn projection_gradients_match_finite_differences() {
        let cam = test_cam();
        let x_world = Vector3::new(0.3, -0.4, 0.2);
        let cov3 = {
            let a = Matrix3::new(0.4, 0.1, -0.05, 0.0, 0.3, 0.02, 0.0, 0.0, 0.25);
            a * a.transpose() // SPD
        };
        let floor = 0.3;
        let d_mean2 = Vector2::new(0.7, -1.3);
        let d_cov2 = (0.4, -0.9, 1.1);

        let loss = |xw: Vector3<f64>, c3: &Matrix3<f64>| {
            let p = project_gaussian(&cam, cam.world_to_cam(xw), c3, floor, 3.0);
            p.mean2.dot(&d_mean2) + p.cov2.0 * d_cov2.0 + p.cov2.1 * d_cov2.1 + p.cov2.2 * d_cov2.2
        };

        let g = project_gaussian_backward(&cam, cam.world_to_cam(x_world), &cov3, d_mean2, d_cov2);
        let d_x_world = cam.r.transpose() * g.d_t_cam;

        let h = 1e-6;
        for c in 0..3 {
            let mut xp = x_world;
            let mut xm = x_world;
            xp[c] += h;
            xm[c] -= h;
            let fd = (loss(xp, &cov3) - loss(xm, &cov3)) / (2.0 * h);
            assert!(
                (d_x_world[c] - fd).abs() < 1e-6 * fd.abs().max(1.0),
                "mean comp {c}: {} vs {fd}",
                d_x_world[c]
            );
        }
        // the gradient is reported in symmetrized form, so perturb
        // symmetric entry pairs together
        for i in 0..3 {
            for j in i..3 {
                let mut cp = cov3;
                let mut cm = cov3;
                cp[(i, j)] += h;
                cm[(i, j)] -= h;
                if i != j {
                    cp[(j, i)] += h;
                    cm[(j, i)] -= h;
                }
                let fd = (loss(x_world, &cp) - loss(x_world, &cm)) / (2.0 * h);
                let analytic = if i == j {
                    g.d_cov3[(i, j)]
                } else {
                    g.d_cov3[(i, j)] * 2.0
                };
                assert!(
                    (analytic - fd).abs() < 1e-6 * fd.abs().max(1.0),
                    "cov ({i},{j}): {analytic} vs {fd}"
                );
            }
        }
    }
}
