//! The five stock test scenes. All share an 8-camera zero-tilt ring
//! (radius 4, 40° fov), 128×128 frames, and a 17-frame script clock at
//! Δt = 0.5 s; generated at stride 2 that yields 9 training frames one
//! second apart and 8 held-out frames halfway between them.
//!
//! Each scene isolates one difficulty:
//!
//!   linear_dash    — one fast straight-line mover (peak flow well over
//!                    10 px per training interval)
//!   circular_orbit — fast circular sweep whose midpoints bow away from
//!                    the chords (curvature the trajectory model must carry)
//!   static_field   — three big static blobs and one slow curved mover;
//!                    most of the covered area never moves
//!   pop_in         — a blob that springs into existence mid-sequence
//!   pulse_checker  — a checkered blob whose radius breathes while it
//!                    drifts along a bent path
//!
//! The slow scenes are tuned to stay under 10 px peak flow so speed-gated
//! comparisons pick out exactly the two fast ones.

use crate::script::{
    BlobSpec, GridSpec, Motion, OrbitAxis, Pulse, RingSpec, SceneScript, Texture,
};

fn base(name: &str, seed: u64) -> SceneScript {
    SceneScript {
        name: name.into(),
        seed,
        resolution: 128,
        supersample: 4,
        background: [0.07, 0.07, 0.09],
        cloud_points: 480,
        grid: GridSpec { frame_count: 17, t_start: 0.0, delta_t: 0.5 },
        cameras: RingSpec {
            count: 8,
            radius: 4.0,
            height: 0.0,
            fov_deg: 40.0,
            target: [0.0; 3],
        },
        blobs: Vec::new(),
    }
}

fn blob(radius: f64, motion: Motion, texture: Texture) -> BlobSpec {
    BlobSpec { radius, motion, texture, birth: 0, death: None, pulse: None }
}

pub fn linear_dash() -> SceneScript {
    let mut s = base("linear_dash", 11);
    s.blobs = vec![
        blob(
            0.34,
            Motion::Linear { start: [-0.62, 0.0, -0.76], velocity: [0.155, 0.0, 0.19] },
            Texture::Gradient { color_a: [0.92, 0.34, 0.18], color_b: [0.16, 0.32, 0.88] },
        ),
        blob(
            0.26,
            Motion::Static { center: [-0.42, 0.62, 0.5] },
            Texture::Solid { color: [0.2, 0.75, 0.6] },
        ),
    ];
    s
}

pub fn circular_orbit() -> SceneScript {
    let mut s = base("circular_orbit", 23);
    s.blobs = vec![
        blob(
            0.36,
            Motion::Circular {
                center: [0.0, 0.0, 0.05],
                orbit_radius: 0.7,
                rps: 0.1,
                phase: 0.0,
                axis: OrbitAxis::Z,
            },
            // Moderate contrast: the warp-consistency oracle bilinearly
            // resamples across these boundaries at ~20 px displacements.
            Texture::Checker {
                color_a: [0.85, 0.62, 0.35],
                color_b: [0.45, 0.35, 0.65],
                cells: 3,
            },
        ),
        blob(
            0.28,
            Motion::Static { center: [0.0, 0.0, -0.85] },
            Texture::Gradient { color_a: [0.85, 0.8, 0.75], color_b: [0.3, 0.45, 0.35] },
        ),
    ];
    s
}

pub fn static_field() -> SceneScript {
    let mut s = base("static_field", 37);
    s.blobs = vec![
        blob(
            0.42,
            Motion::Static { center: [-0.7, -0.45, 0.42] },
            Texture::Solid { color: [0.82, 0.25, 0.2] },
        ),
        blob(
            0.4,
            Motion::Static { center: [0.65, -0.55, -0.45] },
            Texture::Checker { color_a: [0.2, 0.6, 0.85], color_b: [0.9, 0.85, 0.3], cells: 3 },
        ),
        blob(
            0.38,
            Motion::Static { center: [-0.55, 0.6, -0.5] },
            Texture::Gradient { color_a: [0.75, 0.3, 0.8], color_b: [0.25, 0.8, 0.5] },
        ),
        blob(
            0.32,
            Motion::Circular {
                center: [0.35, 0.3, 0.0],
                orbit_radius: 0.45,
                rps: 0.05,
                phase: -std::f64::consts::FRAC_PI_2,
                axis: OrbitAxis::Y,
            },
            Texture::Gradient { color_a: [0.95, 0.55, 0.15], color_b: [0.2, 0.25, 0.6] },
        ),
    ];
    s
}

pub fn pop_in() -> SceneScript {
    let mut s = base("pop_in", 51);
    s.blobs = vec![
        blob(
            0.34,
            Motion::Circular {
                center: [-0.35, 0.0, 0.05],
                orbit_radius: 0.3,
                rps: 0.05,
                phase: 0.0,
                axis: OrbitAxis::Y,
            },
            Texture::Solid { color: [0.9, 0.45, 0.35] },
        ),
        BlobSpec {
            radius: 0.36,
            motion: Motion::Static { center: [0.55, 0.25, 0.4] },
            texture: Texture::Checker {
                color_a: [0.3, 0.85, 0.5],
                color_b: [0.15, 0.25, 0.45],
                cells: 3,
            },
            birth: 8,
            death: Some(16),
            pulse: None,
        },
        blob(
            0.28,
            Motion::Static { center: [0.05, -0.6, -0.55] },
            Texture::Gradient { color_a: [0.8, 0.75, 0.6], color_b: [0.35, 0.3, 0.55] },
        ),
    ];
    s
}

pub fn pulse_checker() -> SceneScript {
    let mut s = base("pulse_checker", 67);
    s.blobs = vec![
        BlobSpec {
            radius: 0.4,
            motion: Motion::Spline {
                knots: vec![
                    [-0.11, -0.06, -0.09],
                    [0.0, 0.055, 0.024],
                    [0.1, -0.024, 0.08],
                    [-0.024, 0.08, 0.12],
                ],
                knot_dt: 8.0 / 3.0,
            },
            texture: Texture::Checker {
                color_a: [0.9, 0.3, 0.4],
                color_b: [0.95, 0.85, 0.7],
                cells: 4,
            },
            birth: 0,
            death: None,
            pulse: Some(Pulse { amp: 0.15, period: 6.0, phase: 0.0 }),
        },
        blob(
            0.3,
            Motion::Static { center: [0.62, 0.48, -0.5] },
            Texture::Solid { color: [0.25, 0.5, 0.85] },
        ),
    ];
    s
}

/// The fixed five-scene suite, in a stable order.
pub fn standard_suite() -> Vec<SceneScript> {
    vec![linear_dash(), circular_orbit(), static_field(), pop_in(), pulse_checker()]
}

/// The train/heldout stride the suite is designed around.
pub const SUITE_STRIDE: usize = 2;
