//! Desk-scale differentiable 4D Gaussian splatting.
//!
//! A dynamic scene is a set of Gaussian primitives, each owning one frame
//! interval of a uniform time grid. A primitive carries a temporal opacity
//! window (sigmoid-edged plateau), a Catmull-Rom trajectory spanning its
//! interval, a polynomial rotation, anisotropic scales and spherical-harmonics
//! color. The CPU renderer is an EWA splatter with analytic gradients for
//! every optimizable parameter; training couples photometric triple rendering
//! with optical-flow supervision, dynamic window stretching and MCMC-style
//! relocation.
//!
//! Times inside the library are normalized: frame i sits at t = i (f32),
//! Δt = 1. `TimeGrid` keeps the external (t_start, delta_t) mapping.

pub mod bundle;
pub mod camera;
pub mod density;
pub mod error;
pub mod init;
pub mod io;
pub mod losses;
pub mod math;
pub mod metrics;
pub mod render;
pub mod scene;
pub mod spline;
pub mod ssim;
pub mod topacity;
pub mod train;

pub use camera::Camera;
pub use error::{Error, Result};
pub use scene::{Primitive, Scene, TimeGrid};
