//! Scalar abstraction and small numeric helpers.
//!
//! The production pipeline runs in f32; gradient tests re-run the exact same
//! generic code in f64 so central differences at h = 1e-5 are meaningful.

use nalgebra::{Matrix3, RealField, Vector3, Vector4};

/// Scalar for the numeric core. Implemented by f32 (production) and f64
/// (reference/gradient-check path).
pub trait Real: RealField + Copy + Send + Sync {
    fn of(x: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Real for f32 {
    #[inline(always)]
    fn of(x: f64) -> Self {
        x as f32
    }
    #[inline(always)]
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline(always)]
    fn of(x: f64) -> Self {
        x
    }
    #[inline(always)]
    fn to_f64(self) -> f64 {
        self
    }
}

/// Overflow-safe logistic function; exact 0/1 saturation for |x| beyond the
/// exp range is fine (the temporal windows rely on it).
#[inline(always)]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Logit. Caller guarantees 0 < p < 1.
#[inline(always)]
pub fn inverse_sigmoid<T: Real>(p: T) -> T {
    (p / (T::one() - p)).ln()
}

/// Rotation matrix of a *unit* quaternion q = (w, x, y, z).
#[inline]
pub fn quat_to_mat<T: Real>(q: Vector4<T>) -> Matrix3<T> {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    let two = T::of(2.0);
    Matrix3::new(
        T::one() - two * (y * y + z * z),
        two * (x * y - w * z),
        two * (x * z + w * y),
        two * (x * y + w * z),
        T::one() - two * (x * x + z * z),
        two * (y * z - w * x),
        two * (x * z - w * y),
        two * (y * z + w * x),
        T::one() - two * (x * x + y * y),
    )
}

/// dL/dq (unit-quaternion components) from dL/dR by contracting the analytic
/// partials ∂R/∂q_k with the upstream matrix.
pub fn quat_to_mat_backward<T: Real>(q: Vector4<T>, d_r: &Matrix3<T>) -> Vector4<T> {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    let two = T::of(2.0);
    let zero = T::zero();
    // ∂R/∂w, ∂R/∂x, ∂R/∂y, ∂R/∂z for the unit-quaternion formula above.
    let dw = Matrix3::new(zero, -z, y, z, zero, -x, -y, x, zero) * two;
    let dx = Matrix3::new(zero, y, z, y, -two * x, -w, z, w, -two * x) * two;
    let dy = Matrix3::new(-two * y, x, w, x, zero, z, -w, z, -two * y) * two;
    let dz = Matrix3::new(-two * z, -w, x, w, -two * z, y, x, y, zero) * two;
    Vector4::new(
        d_r.component_mul(&dw).sum(),
        d_r.component_mul(&dx).sum(),
        d_r.component_mul(&dy).sum(),
        d_r.component_mul(&dz).sum(),
    )
}

/// Pulls a gradient w.r.t. a normalized vector back to the raw vector:
/// d(raw/|raw|) = (I − n nᵀ)/|raw|.
#[inline]
pub fn normalize_backward4<T: Real>(raw: Vector4<T>, d_unit: Vector4<T>) -> Vector4<T> {
    let n = raw.norm();
    let unit = raw / n;
    (d_unit - unit * unit.dot(&d_unit)) / n
}

/// Same pullback for 3-vectors (view directions).
#[inline]
pub fn normalize_backward3<T: Real>(raw: Vector3<T>, d_unit: Vector3<T>) -> Vector3<T> {
    let n = raw.norm();
    let unit = raw / n;
    (d_unit - unit * unit.dot(&d_unit)) / n
}
