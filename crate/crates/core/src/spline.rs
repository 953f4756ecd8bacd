//! Per-interval Catmull-Rom trajectories.
//!
//! A primitive owning interval [t_k, t_k+1] spans it with the middle segment
//! of a uniform (tension ½) Catmull-Rom spline whose control points come
//! from the position/velocity parameters (Δt = 1):
//!
//!   p1 = mu − ½ v2      p2 = mu + ½ v2
//!   p0 = p1 − v1        p3 = p2 + v3
//!
//! so x(t_k) = p1 and x(t_k+1) = p2 exactly, and v1/v3 shape the approach
//! and departure. The first interval has no incoming segment and uses
//! v1 := v2; the last uses v3 := v2. Linear mode ties v1 = v3 := v2, which
//! degenerates the segment to x(t) = mu + (t − mu_tau)·v2. Times outside the
//! interval evaluate the same cubic (extrapolation — stretched windows rely
//! on this and static primitives extrapolate exactly in place).

use nalgebra::Vector3;

use crate::math::Real;
use crate::scene::{Primitive, TimeGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrajectoryMode {
    Spline,
    Linear,
}

/// Control-point labels; also the endpoints of flow displacement pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CtrlPt {
    P0,
    P1,
    P2,
    P3,
}

impl CtrlPt {
    #[inline]
    pub fn index(self) -> usize {
        match self {
            CtrlPt::P0 => 0,
            CtrlPt::P1 => 1,
            CtrlPt::P2 => 2,
            CtrlPt::P3 => 3,
        }
    }
}

/// Effective velocities after boundary fallback / linear tying.
#[inline]
fn effective_velocities<T: Real>(
    p: &Primitive<T>,
    grid: &TimeGrid,
    mode: TrajectoryMode,
) -> (Vector3<T>, Vector3<T>, Vector3<T>) {
    let first = p.interval == 0;
    let last = p.interval + 1 == grid.intervals();
    match mode {
        TrajectoryMode::Linear => (p.v2, p.v2, p.v2),
        TrajectoryMode::Spline => (
            if first { p.v2 } else { p.v1 },
            p.v2,
            if last { p.v2 } else { p.v3 },
        ),
    }
}

/// The four control points of the primitive's segment.
pub fn control_points<T: Real>(
    p: &Primitive<T>,
    grid: &TimeGrid,
    mode: TrajectoryMode,
) -> [Vector3<T>; 4] {
    let (v1, v2, v3) = effective_velocities(p, grid, mode);
    let half = T::of(0.5);
    let p1 = p.mu - v2 * half;
    let p2 = p.mu + v2 * half;
    [p1 - v1, p1, p2, p2 + v3]
}

/// Uniform Catmull-Rom basis at local parameter u (u = 0 at p1, 1 at p2).
#[inline]
pub fn basis<T: Real>(u: T) -> [T; 4] {
    let half = T::of(0.5);
    let u2 = u * u;
    let u3 = u2 * u;
    [
        half * (-u + T::of(2.0) * u2 - u3),
        half * (T::of(2.0) - T::of(5.0) * u2 + T::of(3.0) * u3),
        half * (u + T::of(4.0) * u2 - T::of(3.0) * u3),
        half * (-u2 + u3),
    ]
}

#[inline]
pub fn eval_segment<T: Real>(cp: &[Vector3<T>; 4], u: T) -> Vector3<T> {
    let b = basis(u);
    cp[0] * b[0] + cp[1] * b[1] + cp[2] * b[2] + cp[3] * b[3]
}

/// Local parameter of time t on the primitive's native interval.
#[inline]
pub fn local_u<T: Real>(p: &Primitive<T>, t: T) -> T {
    t - T::of(p.interval as f64)
}

/// Trajectory position at (possibly extrapolated) time t.
pub fn position_at<T: Real>(
    p: &Primitive<T>,
    grid: &TimeGrid,
    t: T,
    mode: TrajectoryMode,
) -> Vector3<T> {
    let cp = control_points(p, grid, mode);
    eval_segment(&cp, local_u(p, t))
}

/// Displacement between two control points — the projected flow endpoints.
pub fn pair_displacement<T: Real>(
    p: &Primitive<T>,
    grid: &TimeGrid,
    from: CtrlPt,
    to: CtrlPt,
    mode: TrajectoryMode,
) -> Vector3<T> {
    let cp = control_points(p, grid, mode);
    cp[to.index()] - cp[from.index()]
}

/// Gradients pulled back from control points to (mu, v1, v2, v3).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajGrad<T: Real> {
    pub d_mu: Vector3<T>,
    pub d_v1: Vector3<T>,
    pub d_v2: Vector3<T>,
    pub d_v3: Vector3<T>,
}

impl<T: Real> TrajGrad<T> {
    pub fn zero() -> Self {
        TrajGrad {
            d_mu: Vector3::zeros(),
            d_v1: Vector3::zeros(),
            d_v2: Vector3::zeros(),
            d_v3: Vector3::zeros(),
        }
    }
}

/// Scatters dL/d(control points) into parameter gradients, honoring boundary
/// fallback and linear tying (tied velocities accumulate into v2).
pub fn scatter_control_grads<T: Real>(
    p: &Primitive<T>,
    grid: &TimeGrid,
    mode: TrajectoryMode,
    d_cp: &[Vector3<T>; 4],
) -> TrajGrad<T> {
    let half = T::of(0.5);
    // p0 = mu − ½v2 − v1, p1 = mu − ½v2, p2 = mu + ½v2, p3 = mu + ½v2 + v3
    let d_mu = d_cp[0] + d_cp[1] + d_cp[2] + d_cp[3];
    let d_v2_direct = (d_cp[2] + d_cp[3] - d_cp[0] - d_cp[1]) * half;
    let d_v1 = -d_cp[0];
    let d_v3 = d_cp[3];

    let first = p.interval == 0;
    let last = p.interval + 1 == grid.intervals();
    let mut g = TrajGrad {
        d_mu,
        d_v1: Vector3::zeros(),
        d_v2: d_v2_direct,
        d_v3: Vector3::zeros(),
    };
    match mode {
        TrajectoryMode::Linear => {
            g.d_v2 += d_v1 + d_v3;
        }
        TrajectoryMode::Spline => {
            if first {
                g.d_v2 += d_v1;
            } else {
                g.d_v1 = d_v1;
            }
            if last {
                g.d_v2 += d_v3;
            } else {
                g.d_v3 = d_v3;
            }
        }
    }
    g
}
