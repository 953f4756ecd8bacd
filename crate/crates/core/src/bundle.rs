//! Dataset splits on disk and in memory.
//!
//! A split directory looks like
//!
//! ```text
//! split/
//!   cameras.json
//!   meta.json                 { "t_start", "delta_t", "frame_times": [...] }
//!   cam0/frame0.png …         one image per camera per frame (required)
//!   cam0/fwd0.flo …           flow frame t → t+1, t ∈ [0, T−2]   (optional)
//!   cam0/bwd1.flo …           flow frame t → t−1, t ∈ [1, T−1]   (optional)
//!   cam0/mask0.png …          foreground masks                    (optional)
//!   points/frame0.ply …       per-frame point clouds              (optional)
//! ```
//!
//! Flow tensors have a (T−1)-length time axis: the forward axis is indexed
//! by the source frame t, the backward axis stores the flow anchored at t at
//! index t−1. Frame indices in file names are 0-based.
//!
//! Times normalize as t_norm = (t − t_start)/delta_t, so train frame i sits
//! at t_norm = i, and a held-out frame midway between trains at i + 1/2.

use std::path::{Path, PathBuf};

use nalgebra::Vector3;

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::io;
use crate::scene::TimeGrid;
use serde::{Deserialize, Serialize};

/// The timing block shared by both splits of a dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitMeta {
    pub t_start: f64,
    pub delta_t: f64,
    pub frame_times: Vec<f64>,
}

impl SplitMeta {
    pub fn normalized_times(&self) -> Vec<f64> {
        self.frame_times
            .iter()
            .map(|&t| (t - self.t_start) / self.delta_t)
            .collect()
    }
}

/// One frame's point cloud.
#[derive(Debug, Clone)]
pub struct PointCloudFrame {
    pub frame_index: usize,
    pub points: Vec<Vector3<f32>>,
    /// Colors in [0, 1].
    pub colors: Vec<Vector3<f32>>,
}

/// A fully loaded split: images always, flows/masks/points when present.
#[derive(Debug, Clone)]
pub struct FrameBundle {
    pub cameras: Vec<Camera<f32>>,
    pub width: u32,
    pub height: u32,
    pub meta: SplitMeta,
    /// `[cam * T + t]` → H·W·3 floats in [0,1].
    pub images: Vec<Vec<f32>>,
    /// `[cam * (T−1) + t]`, flow t → t+1 in pixels.
    pub fwd_flows: Vec<Option<Vec<f32>>>,
    /// `[cam * (T−1) + (t−1)]`, flow t → t−1 in pixels.
    pub bwd_flows: Vec<Option<Vec<f32>>>,
    /// `[cam * T + t]` → H·W booleans.
    pub masks: Vec<Option<Vec<bool>>>,
    /// Per-frame clouds for the frames that have one.
    pub points: Vec<PointCloudFrame>,
}

impl FrameBundle {
    pub fn frame_count(&self) -> usize {
        self.meta.frame_times.len()
    }

    pub fn image(&self, cam: usize, frame: usize) -> &[f32] {
        &self.images[cam * self.frame_count() + frame]
    }

    pub fn mask(&self, cam: usize, frame: usize) -> Option<&[bool]> {
        self.masks[cam * self.frame_count() + frame].as_deref()
    }

    /// Forward flow anchored at `frame` (maps frame → frame+1).
    pub fn fwd_flow(&self, cam: usize, frame: usize) -> Option<&[f32]> {
        if frame + 1 >= self.frame_count() {
            return None;
        }
        self.fwd_flows[cam * (self.frame_count() - 1) + frame].as_deref()
    }

    /// Backward flow anchored at `frame` (maps frame → frame−1).
    pub fn bwd_flow(&self, cam: usize, frame: usize) -> Option<&[f32]> {
        if frame == 0 || frame >= self.frame_count() {
            return None;
        }
        self.bwd_flows[cam * (self.frame_count() - 1) + frame - 1].as_deref()
    }

    pub fn cloud(&self, frame: usize) -> Option<&PointCloudFrame> {
        self.points.iter().find(|c| c.frame_index == frame)
    }

    /// Time grid for a uniformly spaced (training) split.
    pub fn grid(&self) -> Result<TimeGrid> {
        let times = self.meta.normalized_times();
        for (i, &t) in times.iter().enumerate() {
            if (t - i as f64).abs() > 1e-6 {
                return Err(Error::Dataset {
                    path: "meta.json".into(),
                    detail: format!(
                        "frame {i} at normalized time {t}; a training split must be uniform"
                    ),
                });
            }
        }
        let grid = TimeGrid {
            t_start: self.meta.t_start as f32,
            frame_count: times.len() as u32,
            delta_t: self.meta.delta_t as f32,
            epsilon: TimeGrid::DEFAULT_EPSILON,
        };
        grid.validate()?;
        Ok(grid)
    }
}

fn dataset_err(path: &Path, detail: impl Into<String>) -> Error {
    Error::Dataset {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

pub fn save_meta(path: &Path, meta: &SplitMeta) -> Result<()> {
    let json = serde_json::to_string_pretty(meta)?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn load_meta(path: &Path) -> Result<SplitMeta> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let meta: SplitMeta =
        serde_json::from_str(&text).map_err(|e| Error::format("meta.json", path, e.to_string()))?;
    if meta.frame_times.is_empty() {
        return Err(dataset_err(path, "frame_times is empty"));
    }
    if meta.delta_t <= 0.0 {
        return Err(dataset_err(path, format!("delta_t = {}", meta.delta_t)));
    }
    Ok(meta)
}

/// Loads one split directory, validating every dimension against cameras.json.
pub fn load_bundle(dir: &Path) -> Result<FrameBundle> {
    let cameras = io::load_cameras(&dir.join("cameras.json"))?;
    let meta = load_meta(&dir.join("meta.json"))?;
    let frames = meta.frame_times.len();
    let (width, height) = (cameras[0].width, cameras[0].height);
    for (i, c) in cameras.iter().enumerate() {
        if c.width != width || c.height != height {
            return Err(dataset_err(
                dir,
                format!("camera {i} is {}x{}, camera 0 is {width}x{height}", c.width, c.height),
            ));
        }
    }

    let mut images = Vec::with_capacity(cameras.len() * frames);
    let mut masks = Vec::with_capacity(cameras.len() * frames);
    let mut fwd_flows = Vec::with_capacity(cameras.len() * (frames.saturating_sub(1)));
    let mut bwd_flows = Vec::with_capacity(cameras.len() * (frames.saturating_sub(1)));

    for cam in 0..cameras.len() {
        let cam_dir = dir.join(format!("cam{cam}"));
        for t in 0..frames {
            let img_path = cam_dir.join(format!("frame{t}.png"));
            let (w, h, data) = io::load_rgb_png(&img_path)?;
            if (w, h) != (width, height) {
                return Err(dataset_err(
                    &img_path,
                    format!("image is {w}x{h}, cameras.json says {width}x{height}"),
                ));
            }
            images.push(data);

            let mask_path = cam_dir.join(format!("mask{t}.png"));
            if mask_path.exists() {
                let (w, h, m) = io::load_mask_png(&mask_path)?;
                if (w, h) != (width, height) {
                    return Err(dataset_err(&mask_path, format!("mask is {w}x{h}")));
                }
                masks.push(Some(m));
            } else {
                masks.push(None);
            }
        }
        for t in 0..frames.saturating_sub(1) {
            let fwd_path = cam_dir.join(format!("fwd{t}.flo"));
            fwd_flows.push(load_flow_if_present(&fwd_path, width, height)?);
            let bwd_path = cam_dir.join(format!("bwd{}.flo", t + 1));
            bwd_flows.push(load_flow_if_present(&bwd_path, width, height)?);
        }
    }

    let mut points = Vec::new();
    let points_dir = dir.join("points");
    if points_dir.is_dir() {
        for t in 0..frames {
            let ply_path = points_dir.join(format!("frame{t}.ply"));
            if !ply_path.exists() {
                continue;
            }
            let pts = io::load_ply(&ply_path)?;
            if pts.is_empty() {
                return Err(dataset_err(&ply_path, "empty point cloud"));
            }
            points.push(PointCloudFrame {
                frame_index: t,
                points: pts.iter().map(|p| p.position).collect(),
                colors: pts
                    .iter()
                    .map(|p| {
                        Vector3::new(
                            p.color[0] as f32 / 255.0,
                            p.color[1] as f32 / 255.0,
                            p.color[2] as f32 / 255.0,
                        )
                    })
                    .collect(),
            });
        }
    }

    Ok(FrameBundle {
        cameras,
        width,
        height,
        meta,
        images,
        fwd_flows,
        bwd_flows,
        masks,
        points,
    })
}

fn load_flow_if_present(path: &PathBuf, width: u32, height: u32) -> Result<Option<Vec<f32>>> {
    if !path.exists() {
        return Ok(None);
    }
    let (w, h, flow) = io::load_flo(path)?;
    if (w, h) != (width, height) {
        return Err(dataset_err(path, format!("flow is {w}x{h}, images are {width}x{height}")));
    }
    Ok(Some(flow))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn meta_round_trips_and_normalizes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("meta.json");
        let meta = SplitMeta {
            t_start: 0.0,
            delta_t: 2.0,
            frame_times: vec![1.0, 3.0, 5.0],
        };
        save_meta(&path, &meta).unwrap();
        let loaded = load_meta(&path).unwrap();
        let norm = loaded.normalized_times();
        assert_eq!(norm, vec![0.5, 1.5, 2.5]);
    }

    #[test]
    fn missing_cameras_is_an_io_error_with_path() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_bundle(dir.path()).unwrap_err();
        assert!(err.to_string().contains("cameras.json"), "{err}");
    }
}
