//! Temporal opacity: a sigmoid-edged plateau over each primitive's window.
//!
//!   sigma_tau(t) = psi_l((t − (mu_tau − tau_l)) / gamma)
//!               · psi_r(((mu_tau + tau_r) − t) / gamma)
//!
//! with psi the logistic function. A factor is overridden to exactly 1 when
//! its window edge sits at the global grid boundary (left: mu_tau − tau_l
//! < eps, right: mu_tau + tau_r > t_last − eps): content alive at the clip
//! edge neither fades in at the start nor out at the end.
//!
//! The two factors of adjacent fresh windows cross at their shared frame
//! where each edge contributes psi(0) = ½, so fresh prev/next opacities
//! partition to 1 at interior frames. Temporal parameters are not optimized:
//! the renderer treats sigma_tau as a constant weight in the backward pass.

use crate::error::{Error, Result};
use crate::math::{sigmoid, Real};
use crate::scene::{Primitive, TimeGrid};

/// Primitives with sigma_tau at or below this are culled from a render and
/// may not anchor opacity compensation.
pub const SIGMA_TAU_CULL: f64 = 1e-6;

/// Default edge sharpness in normalized time.
pub const DEFAULT_GAMMA: f64 = 0.005;

#[inline]
pub fn temporal_opacity<T: Real>(p: &Primitive<T>, grid: &TimeGrid, t: T, gamma: T) -> T {
    let eps = T::of(grid.epsilon as f64);
    let t_last = T::of(grid.t_last() as f64);
    let lo = p.mu_tau - p.tau_l;
    let hi = p.mu_tau + p.tau_r;
    let left = if lo < eps {
        T::one()
    } else {
        sigmoid((t - lo) / gamma)
    };
    let right = if hi > t_last - eps {
        T::one()
    } else {
        sigmoid((hi - t) / gamma)
    };
    left * right
}

/// 1 / sigma_tau(t_anchor), the weight that undoes the crossfade when a
/// window's own group is rendered alone at a grid frame. Errors when the
/// primitive is inactive there; callers pre-filter with [`SIGMA_TAU_CULL`].
/// Apply as `min(sigma_tau(t) * factor, 1)` so the compensated weight never
/// exceeds full opacity away from the anchor.
pub fn compensation_factor<T: Real>(
    p: &Primitive<T>,
    index: usize,
    grid: &TimeGrid,
    t_anchor: T,
    gamma: T,
) -> Result<T> {
    let s = temporal_opacity(p, grid, t_anchor, gamma);
    if s.to_f64() <= SIGMA_TAU_CULL {
        return Err(Error::InactivePrimitive {
            index,
            t: t_anchor.to_f64(),
            value: s.to_f64(),
        });
    }
    Ok(T::one() / s)
}

/// Initial window for interval k: centered at the interval midpoint with
/// half-width Δt/2, so adjacent fresh windows meet exactly at shared frames.
pub fn fresh_window(grid: &TimeGrid, k: u32) -> (f32, f32, f32) {
    debug_assert!(k < grid.intervals());
    (grid.interval_mid(k), 0.5, 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::Primitive;
    use nalgebra::Vector3;

    fn prim(grid: &TimeGrid, k: u32) -> Primitive<f64> {
        Primitive::fresh(k, Vector3::zeros(), 0).to_f64()
    }

    #[test]
    fn fresh_crossfade_partitions_at_interior_frames() {
        let grid = TimeGrid::new(9);
        let g = DEFAULT_GAMMA;
        for i in 1..8u32 {
            let prev = prim(&grid, i - 1);
            let next = prim(&grid, i);
            let t = i as f64;
            let sum = temporal_opacity(&prev, &grid, t, g) + temporal_opacity(&next, &grid, t, g);
            assert!((sum - 1.0).abs() < 1e-6, "frame {i}: sum {sum}");
        }
    }

    #[test]
    fn plateau_reaches_psi5_squared() {
        let grid = TimeGrid::new(9);
        let g = DEFAULT_GAMMA;
        let p = prim(&grid, 3); // interior interval, no overrides
        let floor = sigmoid(5.0) * sigmoid(5.0);
        let (lo, hi) = p.window();
        let mut t = lo + 5.0 * g;
        while t <= hi - 5.0 * g {
            assert!(temporal_opacity(&p, &grid, t, g) >= floor);
            t += 0.01;
        }
    }

    #[test]
    fn boundary_windows_hold_full_opacity_at_clip_edges() {
        let grid = TimeGrid::new(9);
        let g = DEFAULT_GAMMA;
        let first = prim(&grid, 0);
        let last = prim(&grid, grid.intervals() - 1);
        assert!((temporal_opacity(&first, &grid, 0.0, g) - 1.0).abs() < 1e-9);
        assert!((temporal_opacity(&last, &grid, grid.t_last() as f64, g) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn compensation_undoes_the_crossfade_and_rejects_inactive() {
        let grid = TimeGrid::new(9);
        let g = DEFAULT_GAMMA;
        let p = prim(&grid, 2); // window [2, 3]
        let f = compensation_factor(&p, 0, &grid, 3.0, g).unwrap();
        let w = (temporal_opacity(&p, &grid, 3.0, g) * f).min(1.0);
        assert!((w - 1.0).abs() < 1e-12);
        // factor stays clamp-safe away from the anchor: sigma_tau * f <= 1
        // by construction at the plateau too (f = 2, plateau ~1 → clamp).
        let mid = (temporal_opacity(&p, &grid, 2.5, g) * f).min(1.0);
        assert!(mid <= 1.0);
        // far outside its window the primitive is inactive
        let err = compensation_factor(&p, 4, &grid, 7.0, g).unwrap_err();
        match err {
            Error::InactivePrimitive { index, .. } => assert_eq!(index, 4),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn stretched_full_span_window_is_identically_one() {
        let grid = TimeGrid::new(9);
        let g = DEFAULT_GAMMA;
        let mut p = prim(&grid, 3);
        // stretched to the whole clip: both overrides fire
        p.tau_l = p.mu_tau;
        p.tau_r = grid.t_last() as f64 - p.mu_tau;
        for i in 0..=16 {
            let t = i as f64 * 0.5;
            assert_eq!(temporal_opacity(&p, &grid, t, g), 1.0);
        }
    }
}
