//! Synthetic multi-view scenes with analytic ground truth.
//!
//! Scripts describe textured spheres on closed-form trajectories; the
//! generator ray-traces them into the dataset layout the engine ingests —
//! frames, coverage masks, exact optical flow between consecutive training
//! frames, and per-frame surface point clouds — split into a uniformly
//! spaced train set and the skipped in-between frames as a held-out set.
//! Because every quantity comes from closed forms rather than the engine's
//! own rasterizer, end-to-end tests never grade the renderer against itself.

pub mod generate;
pub mod script;
pub mod suite;

pub use generate::{generate, GeneratedSplits};
pub use script::{BlobSpec, GridSpec, Motion, OrbitAxis, Pulse, RingSpec, SceneScript, Texture};
pub use suite::{standard_suite, SUITE_STRIDE};
