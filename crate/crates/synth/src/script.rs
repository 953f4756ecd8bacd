//! Declarative scene scripts: textured spheres ("blobs") on closed-form
//! trajectories, observed by a camera ring.
//!
//! A script is plain TOML. Positions are world units, times are seconds on
//! the script clock. Each blob is a sphere with
//!
//!   center(t)  — static | linear | circular | spline (Catmull-Rom knots)
//!   radius(t)  = radius · (1 + amp·sin(2π t / period + phase))   (optional pulse)
//!   albedo(m)  — solid | checker | gradient, sampled in the blob's local
//!                frame at the unit surface direction m, so texture rides
//!                along with the motion and scales with the pulse.
//!
//! Visibility is a frame range [birth, death] on the script's frame lattice;
//! outside it the blob does not render, flow, or contribute cloud points.

use std::path::Path;

use nalgebra::Vector3;
use retime4d_core::{Camera, Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneScript {
    pub name: String,
    /// Seed for surface-point sampling; everything else is closed-form.
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Square output images, `resolution × resolution`.
    pub resolution: u32,
    /// Subpixel grid per axis for antialiased coverage (4 → 16 rays/pixel).
    #[serde(default = "default_supersample")]
    pub supersample: u32,
    #[serde(default = "default_background")]
    pub background: [f32; 3],
    /// Surface samples per emitted point-cloud frame.
    #[serde(default = "default_cloud_points")]
    pub cloud_points: u32,
    pub grid: GridSpec,
    pub cameras: RingSpec,
    pub blobs: Vec<BlobSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub frame_count: u32,
    pub t_start: f64,
    pub delta_t: f64,
}

impl GridSpec {
    pub fn frame_time(&self, frame: u32) -> f64 {
        self.t_start + frame as f64 * self.delta_t
    }
}

/// Cameras sit on a horizontal circle of `radius` at height `height`, all
/// aimed at `target`. `height = 0` with a target in the z = 0 plane keeps
/// every optical axis horizontal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RingSpec {
    pub count: u32,
    pub radius: f32,
    #[serde(default)]
    pub height: f32,
    pub fov_deg: f32,
    #[serde(default)]
    pub target: [f32; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobSpec {
    pub radius: f64,
    pub motion: Motion,
    pub texture: Texture,
    /// First script frame the blob exists on.
    #[serde(default)]
    pub birth: u32,
    /// Last script frame the blob exists on (inclusive); absent = forever.
    #[serde(default)]
    pub death: Option<u32>,
    #[serde(default)]
    pub pulse: Option<Pulse>,
}

/// Sinusoidal radius modulation, r(t) = r₀·(1 + amp·sin(2π t/period + phase)).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pulse {
    pub amp: f64,
    pub period: f64,
    #[serde(default)]
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Motion {
    Static {
        center: [f64; 3],
    },
    /// center(t) = start + velocity·t.
    Linear {
        start: [f64; 3],
        velocity: [f64; 3],
    },
    /// Circle of `orbit_radius` about `center`, angle = phase + 2π·rps·t.
    /// `axis = "z"` orbits in the x-y plane, `axis = "y"` in the x-z plane.
    Circular {
        center: [f64; 3],
        orbit_radius: f64,
        rps: f64,
        #[serde(default)]
        phase: f64,
        #[serde(default)]
        axis: OrbitAxis,
    },
    /// Catmull-Rom through `knots`, knot i at time i·knot_dt; clamped to the
    /// knot span outside it (finite everywhere).
    Spline {
        knots: Vec<[f64; 3]>,
        knot_dt: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OrbitAxis {
    #[default]
    Z,
    Y,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Texture {
    Solid {
        color: [f32; 3],
    },
    /// Longitude/latitude checkerboard in the local frame, `cells` bands of
    /// latitude and 2·`cells` of longitude.
    Checker {
        color_a: [f32; 3],
        color_b: [f32; 3],
        #[serde(default = "default_cells")]
        cells: u32,
    },
    /// Linear blend a→b along the local +z axis.
    Gradient {
        color_a: [f32; 3],
        color_b: [f32; 3],
    },
}

fn default_seed() -> u64 {
    7
}
fn default_supersample() -> u32 {
    4
}
fn default_background() -> [f32; 3] {
    [0.07, 0.07, 0.09]
}
fn default_cloud_points() -> u32 {
    480
}
fn default_cells() -> u32 {
    4
}

fn v3(a: [f64; 3]) -> Vector3<f64> {
    Vector3::new(a[0], a[1], a[2])
}

impl Motion {
    pub fn position(&self, t: f64) -> Vector3<f64> {
        match self {
            Motion::Static { center } => v3(*center),
            Motion::Linear { start, velocity } => v3(*start) + v3(*velocity) * t,
            Motion::Circular {
                center,
                orbit_radius,
                rps,
                phase,
                axis,
            } => {
                let a = phase + std::f64::consts::TAU * rps * t;
                let offset = match axis {
                    OrbitAxis::Z => Vector3::new(a.cos(), a.sin(), 0.0),
                    OrbitAxis::Y => Vector3::new(a.cos(), 0.0, a.sin()),
                };
                v3(*center) + offset * *orbit_radius
            }
            Motion::Spline { knots, knot_dt } => catmull_rom(knots, t / knot_dt),
        }
    }

    pub fn is_static(&self) -> bool {
        matches!(self, Motion::Static { .. })
    }
}

/// Catmull-Rom through `knots` at parameter `s` (knot i at s = i), with
/// duplicated endpoints and `s` clamped to [0, n−1].
fn catmull_rom(knots: &[[f64; 3]], s: f64) -> Vector3<f64> {
    let n = knots.len();
    let s = s.clamp(0.0, (n - 1) as f64);
    let i = (s.floor() as usize).min(n - 2);
    let u = s - i as f64;
    let at = |j: isize| v3(knots[j.clamp(0, n as isize - 1) as usize]);
    let (p0, p1, p2, p3) = (at(i as isize - 1), at(i as isize), at(i as isize + 1), at(i as isize + 2));
    // 0.5·(2p1 + (p2−p0)u + (2p0−5p1+4p2−p3)u² + (3p1−p0−3p2+p3)u³)
    let c1 = (p2 - p0) * 0.5;
    let c2 = p0 - p1 * 2.5 + p2 * 2.0 - p3 * 0.5;
    let c3 = (p1 - p2) * 1.5 + (p3 - p0) * 0.5;
    p1 + (c1 + (c2 + c3 * u) * u) * u
}

impl BlobSpec {
    pub fn center_at(&self, t: f64) -> Vector3<f64> {
        self.motion.position(t)
    }

    pub fn radius_at(&self, t: f64) -> f64 {
        match &self.pulse {
            None => self.radius,
            Some(p) => {
                self.radius * (1.0 + p.amp * (std::f64::consts::TAU * t / p.period + p.phase).sin())
            }
        }
    }

    pub fn alive(&self, frame: u32) -> bool {
        frame >= self.birth && self.death.map_or(true, |d| frame <= d)
    }
}

impl Texture {
    /// Albedo at unit local direction `m` (texture coordinates move with the
    /// blob, so a material point keeps its color under motion and pulse).
    pub fn albedo(&self, m: &Vector3<f64>) -> Vector3<f64> {
        let c = |a: &[f32; 3]| Vector3::new(a[0] as f64, a[1] as f64, a[2] as f64);
        match self {
            Texture::Solid { color } => c(color),
            Texture::Checker { color_a, color_b, cells } => {
                let lon = (m.y.atan2(m.x) / std::f64::consts::TAU + 0.5).fract();
                let lat = m.z.clamp(-1.0, 1.0).acos() / std::f64::consts::PI;
                let band = (lon * 2.0 * *cells as f64).floor() as i64
                    + (lat * *cells as f64).min(*cells as f64 - 1.0).floor() as i64;
                if band % 2 == 0 {
                    c(color_a)
                } else {
                    c(color_b)
                }
            }
            Texture::Gradient { color_a, color_b } => {
                let w = (m.z.clamp(-1.0, 1.0) + 1.0) / 2.0;
                c(color_a) * (1.0 - w) + c(color_b) * w
            }
        }
    }

    fn colors(&self) -> Vec<[f32; 3]> {
        match self {
            Texture::Solid { color } => vec![*color],
            Texture::Checker { color_a, color_b, .. } | Texture::Gradient { color_a, color_b } => {
                vec![*color_a, *color_b]
            }
        }
    }
}

impl SceneScript {
    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self> {
        let script: SceneScript = toml::from_str(text).map_err(|e| Error::Format {
            what: "script",
            path: origin.to_path_buf(),
            detail: e.to_string(),
        })?;
        script.validate()?;
        Ok(script)
    }

    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, path)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// The observing ring: camera i at angle 2πi/count, all aimed at `target`.
    pub fn ring_cameras(&self) -> Vec<Camera<f32>> {
        let ring = &self.cameras;
        let target = Vector3::new(ring.target[0], ring.target[1], ring.target[2]);
        let half = self.resolution as f32 / 2.0;
        let focal = half / (ring.fov_deg.to_radians() / 2.0).tan();
        (0..ring.count)
            .map(|i| {
                let a = std::f32::consts::TAU * i as f32 / ring.count as f32;
                let eye = target
                    + Vector3::new(ring.radius * a.cos(), ring.radius * a.sin(), ring.height);
                Camera::look_at(eye, target, focal, focal, self.resolution, self.resolution)
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.resolution < 16 {
            return fail(format!("resolution {} < 16", self.resolution));
        }
        if self.supersample == 0 {
            return fail("supersample must be >= 1".into());
        }
        if self.cloud_points < 8 {
            return fail(format!("cloud_points {} < 8", self.cloud_points));
        }
        if self.grid.frame_count < 2 {
            return fail(format!("frame_count {} < 2", self.grid.frame_count));
        }
        if !(self.grid.delta_t > 0.0) {
            return fail(format!("delta_t {} must be positive", self.grid.delta_t));
        }
        if self.cameras.count < 2 {
            return fail(format!("camera count {} < 2", self.cameras.count));
        }
        if !(self.cameras.radius > 0.0) {
            return fail("camera ring radius must be positive".into());
        }
        if !(self.cameras.fov_deg > 1.0 && self.cameras.fov_deg < 179.0) {
            return fail(format!("fov_deg {} outside (1, 179)", self.cameras.fov_deg));
        }
        if self.blobs.is_empty() {
            return fail("script has no blobs".into());
        }
        let color_ok = |c: &[f32; 3]| c.iter().all(|v| (0.0..=1.0).contains(v));
        if !color_ok(&self.background) {
            return fail("background color outside [0, 1]".into());
        }
        for (i, b) in self.blobs.iter().enumerate() {
            if !(b.radius > 0.0) {
                return fail(format!("blob {i}: radius {} must be positive", b.radius));
            }
            if let Some(p) = &b.pulse {
                if !(0.0..1.0).contains(&p.amp) || !(p.period > 0.0) {
                    return fail(format!("blob {i}: pulse amp {} / period {}", p.amp, p.period));
                }
            }
            if b.birth >= self.grid.frame_count {
                return fail(format!("blob {i}: birth {} past last frame", b.birth));
            }
            if let Some(d) = b.death {
                if d < b.birth || d >= self.grid.frame_count {
                    return fail(format!("blob {i}: death {d} outside [{}, T)", b.birth));
                }
            }
            match &b.motion {
                Motion::Spline { knots, knot_dt } => {
                    if knots.len() < 2 || !(*knot_dt > 0.0) {
                        return fail(format!("blob {i}: spline needs >= 2 knots, knot_dt > 0"));
                    }
                }
                Motion::Circular { orbit_radius, .. } => {
                    if *orbit_radius < 0.0 {
                        return fail(format!("blob {i}: negative orbit radius"));
                    }
                }
                _ => {}
            }
            if let Texture::Checker { cells, .. } = b.texture {
                if cells == 0 {
                    return fail(format!("blob {i}: checker needs >= 1 cell"));
                }
            }
            if !b.texture.colors().iter().all(color_ok) {
                return fail(format!("blob {i}: texture color outside [0, 1]"));
            }
        }
        for f in 0..self.grid.frame_count {
            if !self.blobs.iter().any(|b| b.alive(f)) {
                return fail(format!("no blob alive at frame {f}; masks would be empty"));
            }
        }
        Ok(())
    }
}
