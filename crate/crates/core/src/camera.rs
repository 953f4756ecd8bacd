//! Pinhole cameras (OpenCV convention: x right, y down, z forward).
//!
//! `r`/`t` map world to camera space, `p_cam = R p_world + t`; a camera-space
//! point projects to pixel (fx·x/z + cx, fy·y/z + cy). Pixel (i, j) covers
//! [i, i+1)×[j, j+1) with its center at (i+½, j+½).

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::math::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct Camera<T: Real = f32> {
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
    pub width: u32,
    pub height: u32,
    pub r: Matrix3<T>,
    pub t: Vector3<T>,
}

impl<T: Real> Camera<T> {
    #[inline]
    pub fn world_to_cam(&self, x: Vector3<T>) -> Vector3<T> {
        self.r * x + self.t
    }

    /// Camera center in world space, −Rᵀ t.
    #[inline]
    pub fn center(&self) -> Vector3<T> {
        -(self.r.transpose() * self.t)
    }

    /// Pinhole projection of a camera-space point (caller checks z > 0).
    #[inline]
    pub fn project_cam(&self, p: Vector3<T>) -> Vector2<T> {
        Vector2::new(
            self.fx * p[0] / p[2] + self.cx,
            self.fy * p[1] / p[2] + self.cy,
        )
    }

    #[inline]
    pub fn project_world(&self, x: Vector3<T>) -> Vector2<T> {
        self.project_cam(self.world_to_cam(x))
    }
}

impl Camera<f32> {
    pub fn to_f64(&self) -> Camera<f64> {
        Camera {
            fx: self.fx as f64,
            fy: self.fy as f64,
            cx: self.cx as f64,
            cy: self.cy as f64,
            width: self.width,
            height: self.height,
            r: self.r.map(|x| x as f64),
            t: self.t.map(|x| x as f64),
        }
    }

    /// World-to-camera pose looking from `eye` toward `target`, world +z up;
    /// camera y points down as the pixel grid does.
    pub fn look_at(
        eye: Vector3<f32>,
        target: Vector3<f32>,
        fx: f32,
        fy: f32,
        width: u32,
        height: u32,
    ) -> Self {
        let fwd = (target - eye).normalize();
        let up = Vector3::new(0.0, 0.0, 1.0);
        let right = fwd.cross(&up).normalize();
        let down = fwd.cross(&right); // unit: fwd ⊥ right
        let r = Matrix3::from_rows(&[right.transpose(), down.transpose(), fwd.transpose()]);
        Camera {
            fx,
            fy,
            cx: width as f32 / 2.0,
            cy: height as f32 / 2.0,
            width,
            height,
            r,
            t: -(r * eye),
        }
    }
}

/// JSON wire format: row-major 9-float R, 3-float t.
#[derive(Serialize, Deserialize)]
pub(crate) struct CameraJson {
    pub fx: f32,
    pub fy: f32,
    pub cx: f32,
    pub cy: f32,
    pub width: u32,
    pub height: u32,
    #[serde(rename = "R")]
    pub r: [f32; 9],
    pub t: [f32; 3],
}

impl From<&Camera<f32>> for CameraJson {
    fn from(c: &Camera<f32>) -> Self {
        let mut r = [0.0f32; 9];
        for i in 0..3 {
            for j in 0..3 {
                r[i * 3 + j] = c.r[(i, j)];
            }
        }
        CameraJson {
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            width: c.width,
            height: c.height,
            r,
            t: [c.t[0], c.t[1], c.t[2]],
        }
    }
}

impl From<CameraJson> for Camera<f32> {
    fn from(j: CameraJson) -> Self {
        Camera {
            fx: j.fx,
            fy: j.fy,
            cx: j.cx,
            cy: j.cy,
            width: j.width,
            height: j.height,
            r: Matrix3::new(
                j.r[0], j.r[1], j.r[2], j.r[3], j.r[4], j.r[5], j.r[6], j.r[7], j.r[8],
            ),
            t: Vector3::new(j.t[0], j.t[1], j.t[2]),
        }
    }
}
