//! Scene container: a uniform time grid plus 4D Gaussian primitives.
//!
//! Every primitive natively owns one interval [t_k, t_{k+1}] of the grid and
//! stores, in normalized time (t_k = k, Δt = 1):
//!   - temporal window center `mu_tau` and extents `tau_l`, `tau_r`
//!     (non-optimizable, half-integer lattice),
//!   - trajectory parameters `mu` (position at t = mu_tau) and velocities
//!     `v1, v2, v3` (world units per Δt),
//!   - log scales, a degree-1 rotation polynomial `rot_c0 + rot_c1·(t−mu_tau)`
//!     (normalized before use), SH color coefficients and an opacity logit.

use nalgebra::{Matrix3, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{quat_to_mat, sigmoid, Real};

/// Uniform frame grid. `frame_count` frames at normalized times 0..T-1;
/// `t_start`/`delta_t` record the external time mapping, `epsilon` is the
/// boundary-override tolerance in normalized units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t_start: f32,
    pub frame_count: u32,
    pub delta_t: f32,
    pub epsilon: f32,
}

impl TimeGrid {
    /// Boundary-override tolerance in normalized frame units.
    pub const DEFAULT_EPSILON: f32 = 0.1;

    pub fn new(frame_count: u32) -> Self {
        TimeGrid {
            t_start: 0.0,
            frame_count,
            delta_t: 1.0,
            epsilon: Self::DEFAULT_EPSILON,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.frame_count < 2 {
            return Err(Error::Config(format!(
                "time grid needs at least 2 frames, got {}",
                self.frame_count
            )));
        }
        if !(self.delta_t > 0.0) {
            return Err(Error::Config(format!("delta_t must be > 0, got {}", self.delta_t)));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 0.25) {
            return Err(Error::Config(format!(
                "epsilon must lie in (0, 0.25) normalized (Δt/4 bound), got {}",
                self.epsilon
            )));
        }
        Ok(())
    }

    /// Number of intervals (= frame_count − 1).
    #[inline]
    pub fn intervals(&self) -> u32 {
        self.frame_count - 1
    }

    /// Normalized time of the last frame.
    #[inline]
    pub fn t_last(&self) -> f32 {
        (self.frame_count - 1) as f32
    }

    /// Midpoint of interval k, i.e. the native `mu_tau` of its primitives.
    #[inline]
    pub fn interval_mid(&self, k: u32) -> f32 {
        k as f32 + 0.5
    }

    /// External wall-clock time → normalized time.
    #[inline]
    pub fn normalize(&self, t_external: f32) -> f32 {
        (t_external - self.t_start) / self.delta_t
    }
}

pub const SH_C0: f64 = 0.282_094_791_773_878_14;

/// SH coefficient count for a degree (0..=2 supported).
#[inline]
pub fn sh_coeff_count(degree: u32) -> usize {
    ((degree + 1) * (degree + 1)) as usize
}

#[derive(Debug, Clone, PartialEq)]
pub struct Primitive<T: Real = f32> {
    pub mu_tau: T,
    pub tau_l: T,
    pub tau_r: T,
    /// Native interval index (0-based); consistent with mu_tau = interval + ½.
    pub interval: u32,
    pub mu: Vector3<T>,
    pub v1: Vector3<T>,
    pub v2: Vector3<T>,
    pub v3: Vector3<T>,
    pub log_scale: Vector3<T>,
    pub rot_c0: Vector4<T>,
    pub rot_c1: Vector4<T>,
    /// `sh_coeff_count(degree)` RGB coefficient triples.
    pub sh: Vec<Vector3<T>>,
    pub opacity_logit: T,
}

impl<T: Real> Primitive<T> {
    /// Unit-opacity-range activation σ ∈ (0, 1).
    #[inline]
    pub fn opacity(&self) -> T {
        sigmoid(self.opacity_logit)
    }

    /// Per-axis scales s = exp(log_scale).
    #[inline]
    pub fn scales(&self) -> Vector3<T> {
        self.log_scale.map(|x| x.exp())
    }

    /// Temporal window [mu_tau − tau_l, mu_tau + tau_r].
    #[inline]
    pub fn window(&self) -> (T, T) {
        (self.mu_tau - self.tau_l, self.mu_tau + self.tau_r)
    }

    /// Whether the window covers [a, b] (with a small float fuzz).
    #[inline]
    pub fn covers(&self, a: T, b: T) -> bool {
        let tol = T::of(1e-4);
        let (lo, hi) = self.window();
        lo <= a + tol && hi >= b - tol
    }

    /// Raw (unnormalized) rotation quaternion at time t.
    #[inline]
    pub fn raw_quat_at(&self, t: T) -> Vector4<T> {
        self.rot_c0 + self.rot_c1 * (t - self.mu_tau)
    }

    /// Rotation matrix at time t; errors if the polynomial passes near zero.
    pub fn rotation_at(&self, index: usize, t: T) -> Result<Matrix3<T>> {
        let raw = self.raw_quat_at(t);
        let n = raw.norm();
        if n < T::of(1e-12) {
            return Err(Error::DegenerateRotation {
                index,
                t: t.to_f64(),
                norm: n.to_f64(),
            });
        }
        Ok(quat_to_mat(raw / n))
    }

    /// World-space covariance Σ(t) = R(t) diag(s²) R(t)ᵀ.
    pub fn covariance_at(&self, index: usize, t: T) -> Result<Matrix3<T>> {
        let r = self.rotation_at(index, t)?;
        let s = self.scales();
        let d = Matrix3::from_diagonal(&Vector3::new(s[0] * s[0], s[1] * s[1], s[2] * s[2]));
        Ok(r * d * r.transpose())
    }

    pub fn to_f64(&self) -> Primitive<f64> {
        Primitive {
            mu_tau: self.mu_tau.to_f64(),
            tau_l: self.tau_l.to_f64(),
            tau_r: self.tau_r.to_f64(),
            interval: self.interval,
            mu: self.mu.map(Real::to_f64),
            v1: self.v1.map(Real::to_f64),
            v2: self.v2.map(Real::to_f64),
            v3: self.v3.map(Real::to_f64),
            log_scale: self.log_scale.map(Real::to_f64),
            rot_c0: self.rot_c0.map(Real::to_f64),
            rot_c1: self.rot_c1.map(Real::to_f64),
            sh: self.sh.iter().map(|c| c.map(Real::to_f64)).collect(),
            opacity_logit: self.opacity_logit.to_f64(),
        }
    }
}

impl Primitive<f32> {
    /// Fresh primitive for interval k: centered window of half-width Δt/2,
    /// identity rotation, everything else supplied by the caller.
    pub fn fresh(k: u32, mu: Vector3<f32>, sh_degree: u32) -> Self {
        Primitive {
            mu_tau: k as f32 + 0.5,
            tau_l: 0.5,
            tau_r: 0.5,
            interval: k,
            mu,
            v1: Vector3::zeros(),
            v2: Vector3::zeros(),
            v3: Vector3::zeros(),
            log_scale: Vector3::from_element(-2.0),
            rot_c0: Vector4::new(1.0, 0.0, 0.0, 0.0),
            rot_c1: Vector4::zeros(),
            sh: vec![Vector3::zeros(); sh_coeff_count(sh_degree)],
            opacity_logit: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene<T: Real = f32> {
    pub grid: TimeGrid,
    pub sh_degree: u32,
    pub prims: Vec<Primitive<T>>,
}

impl<T: Real> Scene<T> {
    pub fn new(grid: TimeGrid, sh_degree: u32) -> Self {
        Scene {
            grid,
            sh_degree,
            prims: Vec::new(),
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.prims.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.prims.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.sh_degree > 2 {
            return Err(Error::Config(format!(
                "sh_degree must be 0..=2, got {}",
                self.sh_degree
            )));
        }
        let want = sh_coeff_count(self.sh_degree);
        for (i, p) in self.prims.iter().enumerate() {
            if p.sh.len() != want {
                return Err(Error::Config(format!(
                    "primitive {i}: {} SH coefficients, scene degree {} wants {want}",
                    p.sh.len(),
                    self.sh_degree
                )));
            }
            if p.interval >= self.grid.intervals() {
                return Err(Error::Config(format!(
                    "primitive {i}: interval {} out of range (grid has {})",
                    p.interval,
                    self.grid.intervals()
                )));
            }
        }
        Ok(())
    }

    /// Axis-aligned bounding-box diagonal of primitive centers; the spatial
    /// tolerances of density control are fractions of this.
    pub fn extent(&self) -> T {
        if self.prims.is_empty() {
            return T::one();
        }
        let mut lo = self.prims[0].mu;
        let mut hi = self.prims[0].mu;
        for p in &self.prims {
            lo = lo.inf(&p.mu);
            hi = hi.sup(&p.mu);
        }
        let d = (hi - lo).norm();
        if d > T::zero() {
            d
        } else {
            T::one()
        }
    }
}

impl Scene<f32> {
    pub fn to_f64(&self) -> Scene<f64> {
        Scene {
            grid: self.grid,
            sh_degree: self.sh_degree,
            prims: self.prims.iter().map(Primitive::to_f64).collect(),
        }
    }
}
