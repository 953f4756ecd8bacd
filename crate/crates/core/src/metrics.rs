//! Evaluation metrics: PSNR, (masked) SSIM, error heatmaps, CSV reports.
//!
//! Metrics quantize both images to 8 bits first and evaluate in float64, so
//! the numbers match what an external tool would compute on the saved PNGs,
//! machine-independently. PSNR caps at 99 dB for identical images; SSIM uses
//! the windowed implementation from [`crate::ssim`] and, when masked,
//! averages windows whose center lies in the foreground.

use crate::error::{Error, Result};
use crate::ssim;

pub const PSNR_CAP: f64 = 99.0;

fn quantize(img: &[f32]) -> Vec<f64> {
    img.iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as f64 / 255.0)
        .collect()
}

/// Peak signal-to-noise ratio in dB over masked pixels (mask length = pixel
/// count; buffers are interleaved with `channels`).
pub fn psnr(a: &[f32], b: &[f32], channels: usize, mask: Option<&[bool]>) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Contract(format!(
            "psnr: buffer lengths differ ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    let qa = quantize(a);
    let qb = quantize(b);
    let pixels = qa.len() / channels;
    let mut sum = 0.0f64;
    let mut count = 0usize;
    for p in 0..pixels {
        if let Some(m) = mask {
            if !m[p] {
                continue;
            }
        }
        for c in 0..channels {
            let d = qa[p * channels + c] - qb[p * channels + c];
            sum += d * d;
        }
        count += 1;
    }
    if count == 0 {
        return Err(Error::EmptyMask {
            context: "PSNR mask selects no pixels".into(),
        });
    }
    let mse = sum / (count * channels) as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

/// Mean SSIM over windows, optionally restricted to mask-centered windows.
pub fn ssim_metric(
    a: &[f32],
    b: &[f32],
    width: usize,
    height: usize,
    mask: Option<&[bool]>,
) -> Result<f64> {
    let qa = quantize(a);
    let qb = quantize(b);
    let map = ssim::ssim_map(&qa, &qb, width, height, 3)?;
    match mask {
        None => Ok(map.mean()),
        Some(m) => map.masked_mean(width, m),
    }
}

/// Per-pixel mean-absolute-difference heatmap as 8-bit grayscale.
///
/// `gain` maps an absolute error of 1/gain to full white; 4 is a good default
/// for inspecting sub-quarter-intensity errors.
pub fn error_heatmap(a: &[f32], b: &[f32], channels: usize, gain: f32) -> Vec<u8> {
    let pixels = a.len() / channels;
    let mut out = Vec::with_capacity(pixels);
    for p in 0..pixels {
        let mut d = 0.0f32;
        for c in 0..channels {
            d += (a[p * channels + c] - b[p * channels + c]).abs();
        }
        d /= channels as f32;
        out.push(((d * gain).clamp(0.0, 1.0) * 255.0).round() as u8);
    }
    out
}

/// One evaluated (camera, time) pair.
#[derive(Debug, Clone)]
pub struct EvalRow {
    pub camera: usize,
    pub time: f64,
    pub psnr: f64,
    pub ssim: f64,
}

/// Per-frame metrics plus means, serializable as CSV.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub masked: bool,
}

impl EvalReport {
    pub fn mean_psnr(&self) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        self.rows.iter().map(|r| r.psnr).sum::<f64>() / self.rows.len() as f64
    }

    pub fn mean_ssim(&self) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        self.rows.iter().map(|r| r.ssim).sum::<f64>() / self.rows.len() as f64
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("camera,time,psnr,ssim,masked\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{:.6},{:.6},{}\n",
                r.camera, r.time, r.psnr, r.ssim, self.masked
            ));
        }
        s.push_str(&format!(
            "mean,,{:.6},{:.6},{}\n",
            self.mean_psnr(),
            self.mean_ssim(),
            self.masked
        ));
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_images_hit_the_cap() {
        let a = vec![0.3f32; 8 * 8 * 3];
        assert_eq!(psnr(&a, &a, 3, None).unwrap(), PSNR_CAP);
    }

    #[test]
    fn constant_error_matches_closed_form() {
        // 10/255 everywhere → 20·log10(255/10) ≈ 28.13 dB
        let a = vec![0.0f32; 16 * 16 * 3];
        let b = vec![10.0 / 255.0; 16 * 16 * 3];
        let db = psnr(&a, &b, 3, None).unwrap();
        assert!((db - 28.13).abs() < 0.01, "{db}");
    }

    #[test]
    fn mask_restricted_to_matching_region_caps() {
        let mut a = vec![0.2f32; 10 * 3];
        let b = vec![0.2f32; 10 * 3];
        for c in 0..3 {
            a[5 * 3 + c] = 0.9;
        }
        let mut mask = vec![true; 10];
        mask[5] = false;
        assert_eq!(psnr(&a, &b, 3, Some(&mask)).unwrap(), PSNR_CAP);
        assert!(psnr(&a, &b, 3, None).unwrap() < PSNR_CAP);
    }

    #[test]
    fn empty_mask_is_a_typed_error() {
        let a = vec![0.0f32; 12];
        let mask = vec![false; 4];
        assert!(matches!(
            psnr(&a, &a, 3, Some(&mask)),
            Err(Error::EmptyMask { .. })
        ));
    }

    #[test]
    fn quantization_rounds_to_8bit_grid() {
        // sub-quantum differences vanish after quantization
        let a = vec![0.5f32; 12 * 12 * 3];
        let b = vec![0.5f32 + 0.4 / 255.0; 12 * 12 * 3];
        assert_eq!(psnr(&a, &b, 3, None).unwrap(), PSNR_CAP);
    }

    #[test]
    fn csv_has_one_row_per_frame_plus_mean() {
        let report = EvalReport {
            rows: vec![
                EvalRow {
                    camera: 0,
                    time: 0.5,
                    psnr: 30.0,
                    ssim: 0.9,
                },
                EvalRow {
                    camera: 1,
                    time: 0.5,
                    psnr: 32.0,
                    ssim: 0.95,
                },
            ],
            masked: true,
        };
        let csv = report.to_csv();
        assert_eq!(csv.lines().count(), 4);
        assert!((report.mean_psnr() - 31.0).abs() < 1e-12);
    }

    #[test]
    fn heatmap_scales_and_saturates() {
        let a = vec![0.0f32, 0.0, 0.0, 1.0, 1.0, 1.0];
        let b = vec![0.1f32, 0.1, 0.1, 0.0, 0.0, 0.0];
        let hm = error_heatmap(&a, &b, 3, 4.0);
        assert_eq!(hm.len(), 2);
        assert_eq!(hm[0], (0.4f32 * 255.0).round() as u8);
        assert_eq!(hm[1], 255);
    }
}
