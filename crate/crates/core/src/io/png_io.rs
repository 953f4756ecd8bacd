//! PNG helpers bridging [0,1] float buffers and 8-bit files.

use std::path::Path;

use image::{GrayImage, ImageReader, RgbImage};

use crate::error::{Error, Result};

fn img_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        detail: e.to_string(),
    }
}

pub fn save_rgb_png(path: &Path, width: u32, height: u32, data: &[f32]) -> Result<()> {
    if data.len() != (width * height * 3) as usize {
        return Err(Error::Contract(format!(
            "RGB buffer has {} floats, expected {}",
            data.len(),
            width * height * 3
        )));
    }
    let bytes: Vec<u8> = data
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let img = RgbImage::from_raw(width, height, bytes).expect("sized above");
    img.save(path).map_err(|e| img_err(path, e))
}

pub fn load_rgb_png(path: &Path) -> Result<(u32, u32, Vec<f32>)> {
    let img = ImageReader::open(path)
        .map_err(|e| img_err(path, e))?
        .decode()
        .map_err(|e| img_err(path, e))?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let data = img.into_raw().iter().map(|&b| b as f32 / 255.0).collect();
    Ok((w, h, data))
}

pub fn save_gray_png(path: &Path, width: u32, height: u32, data: &[u8]) -> Result<()> {
    if data.len() != (width * height) as usize {
        return Err(Error::Contract(format!(
            "gray buffer has {} bytes, expected {}",
            data.len(),
            width * height
        )));
    }
    let img = GrayImage::from_raw(width, height, data.to_vec()).expect("sized above");
    img.save(path).map_err(|e| img_err(path, e))
}

pub fn save_mask_png(path: &Path, width: u32, height: u32, mask: &[bool]) -> Result<()> {
    let bytes: Vec<u8> = mask.iter().map(|&m| if m { 255 } else { 0 }).collect();
    save_gray_png(path, width, height, &bytes)
}

pub fn load_mask_png(path: &Path) -> Result<(u32, u32, Vec<bool>)> {
    let img = ImageReader::open(path)
        .map_err(|e| img_err(path, e))?
        .decode()
        .map_err(|e| img_err(path, e))?
        .to_luma8();
    let (w, h) = img.dimensions();
    let mask = img.into_raw().iter().map(|&b| b > 127).collect();
    Ok((w, h, mask))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rgb_png_round_trips_at_8bit_precision() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.png");
        let data: Vec<f32> = (0..6 * 5 * 3).map(|i| (i % 256) as f32 / 255.0).collect();
        save_rgb_png(&path, 6, 5, &data).unwrap();
        let (w, h, loaded) = load_rgb_png(&path).unwrap();
        assert_eq!((w, h), (6, 5));
        for (a, b) in data.iter().zip(&loaded) {
            assert!((a - b).abs() < 0.5 / 255.0);
        }
    }

    #[test]
    fn mask_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mask.png");
        let mask: Vec<bool> = (0..8 * 3).map(|i| i % 3 == 0).collect();
        save_mask_png(&path, 8, 3, &mask).unwrap();
        let (_, _, loaded) = load_mask_png(&path).unwrap();
        assert_eq!(mask, loaded);
    }
}
