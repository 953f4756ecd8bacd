//! cameras.json: a JSON array of pinhole cameras with row-major rotations.

use std::path::Path;

use crate::camera::{Camera, CameraJson};
use crate::error::{Error, Result};

pub fn save_cameras(path: &Path, cameras: &[Camera<f32>]) -> Result<()> {
    let wire: Vec<CameraJson> = cameras.iter().map(CameraJson::from).collect();
    let json = serde_json::to_string_pretty(&wire)?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn load_cameras(path: &Path) -> Result<Vec<Camera<f32>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let wire: Vec<CameraJson> = serde_json::from_str(&text).map_err(|e| {
        Error::format("cameras.json", path, e.to_string())
    })?;
    let cams: Vec<Camera<f32>> = wire.into_iter().map(Camera::from).collect();
    if cams.is_empty() {
        return Err(Error::format("cameras.json", path, "no cameras listed"));
    }
    Ok(cams)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    #[test]
    fn cameras_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cameras.json");
        let cams = vec![
            Camera::look_at(
                Vector3::new(3.0, 0.0, 1.0),
                Vector3::new(0.0, 0.0, 1.0),
                120.0,
                120.0,
                128,
                128,
            ),
            Camera::look_at(
                Vector3::new(0.0, 3.0, 1.5),
                Vector3::new(0.0, 0.0, 1.0),
                120.0,
                120.0,
                128,
                128,
            ),
        ];
        save_cameras(&path, &cams).unwrap();
        let loaded = load_cameras(&path).unwrap();
        assert_eq!(loaded.len(), 2);
        for (a, b) in cams.iter().zip(&loaded) {
            assert_eq!(a.fx, b.fx);
            assert_eq!(a.r, b.r);
            assert_eq!(a.t, b.t);
            assert_eq!((a.width, a.height), (b.width, b.height));
        }
    }

    #[test]
    fn malformed_json_is_a_typed_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cameras.json");
        std::fs::write(&path, "{not json").unwrap();
        let err = load_cameras(&path).unwrap_err();
        assert!(err.to_string().contains("cameras.json"));
    }
}
