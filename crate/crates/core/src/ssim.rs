//! Windowed structural similarity with analytic gradients.
//!
//! Statistics use an 11×11 Gaussian window (σ = 1.5), evaluated only where
//! the window fits entirely inside the image ("valid" convolution), with
//! stabilizers C1 = (0.01)², C2 = (0.03)² for unit dynamic range:
//!
//!   S = (2 μx μy + C1)(2 σxy + C2) / ((μx² + μy² + C1)(σx² + σy² + C2))
//!
//! The per-window map is averaged over channels; the mean can be restricted
//! to windows whose center pixel lies in a mask. The backward pass pushes
//! the mean through the window statistics:
//!
//!   ∂μx/∂x_i = w_i,  ∂σx²/∂x_i = 2 w_i (x_i − μx),  ∂σxy/∂x_i = w_i (y_i − μy)
//!
//! which turns into five adjoint (scatter) convolutions per channel.

use crate::error::{Error, Result};
use crate::math::Real;

pub const WINDOW: usize = 11;
const HALF: usize = WINDOW / 2;
const SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

fn kernel<T: Real>() -> [T; WINDOW] {
    let mut k = [0.0f64; WINDOW];
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - HALF as f64;
        *v = (-d * d / (2.0 * SIGMA * SIGMA)).exp();
        sum += *v;
    }
    let mut out = [T::zero(); WINDOW];
    for i in 0..WINDOW {
        out[i] = T::of(k[i] / sum);
    }
    out
}

/// Separable valid convolution: (w, h) plane → (w−10, h−10) plane.
fn conv_valid<T: Real>(img: &[T], w: usize, h: usize, k: &[T; WINDOW]) -> Vec<T> {
    let vw = w - WINDOW + 1;
    let vh = h - WINDOW + 1;
    let mut tmp = vec![T::zero(); vw * h];
    for y in 0..h {
        let row = &img[y * w..(y + 1) * w];
        for x in 0..vw {
            let mut s = T::zero();
            for (i, &kv) in k.iter().enumerate() {
                s += kv * row[x + i];
            }
            tmp[y * vw + x] = s;
        }
    }
    let mut out = vec![T::zero(); vw * vh];
    for y in 0..vh {
        for x in 0..vw {
            let mut s = T::zero();
            for (i, &kv) in k.iter().enumerate() {
                s += kv * tmp[(y + i) * vw + x];
            }
            out[y * vw + x] = s;
        }
    }
    out
}

/// Adjoint of `conv_valid`: scatters window-grid values back to pixels.
fn conv_adjoint<T: Real>(g: &[T], w: usize, h: usize, k: &[T; WINDOW]) -> Vec<T> {
    let vw = w - WINDOW + 1;
    let vh = h - WINDOW + 1;
    // vertical spread: (vw, vh) → (vw, h)
    let mut tmp = vec![T::zero(); vw * h];
    for y in 0..h {
        let lo = y.saturating_sub(vh - 1).max(0);
        let hi = y.min(WINDOW - 1);
        for x in 0..vw {
            let mut s = T::zero();
            for i in lo..=hi {
                s += k[i] * g[(y - i) * vw + x];
            }
            tmp[y * vw + x] = s;
        }
    }
    // horizontal spread: (vw, h) → (w, h)
    let mut out = vec![T::zero(); w * h];
    for y in 0..h {
        for x in 0..w {
            let lo = x.saturating_sub(vw - 1);
            let hi = x.min(WINDOW - 1);
            let mut s = T::zero();
            for i in lo..=hi {
                s += k[i] * tmp[y * vw + (x - i)];
            }
            out[y * w + x] = s;
        }
    }
    out
}

fn check_dims(width: usize, height: usize, channels: usize, len_a: usize, len_b: usize) -> Result<()> {
    if width < WINDOW || height < WINDOW {
        return Err(Error::Contract(format!(
            "image {width}x{height} is smaller than the {WINDOW}x{WINDOW} SSIM window"
        )));
    }
    if len_a != width * height * channels || len_b != len_a {
        return Err(Error::Contract(format!(
            "SSIM shape mismatch: {len_a} vs {len_b} for {width}x{height}x{channels}"
        )));
    }
    Ok(())
}

fn plane<T: Real>(img: &[T], channels: usize, c: usize) -> Vec<T> {
    img.iter().skip(c).step_by(channels).copied().collect()
}

/// Channel-averaged SSIM value per valid window position.
pub struct SsimMap<T: Real> {
    pub vw: usize,
    pub vh: usize,
    pub map: Vec<T>,
}

impl<T: Real> SsimMap<T> {
    pub fn mean(&self) -> T {
        let mut s = T::zero();
        for &v in &self.map {
            s += v;
        }
        s / T::of((self.vw * self.vh) as f64)
    }

    /// Mean over windows whose center pixel (full-image coordinates) is masked.
    pub fn masked_mean(&self, width: usize, mask: &[bool]) -> Result<T> {
        let mut s = T::zero();
        let mut n = 0usize;
        for y in 0..self.vh {
            for x in 0..self.vw {
                if mask[(y + HALF) * width + (x + HALF)] {
                    s += self.map[y * self.vw + x];
                    n += 1;
                }
            }
        }
        if n == 0 {
            return Err(Error::EmptyMask {
                context: "no SSIM window centers inside mask".into(),
            });
        }
        Ok(s / T::of(n as f64))
    }
}

struct ChannelStats<T: Real> {
    mu_x: Vec<T>,
    mu_y: Vec<T>,
    sig_x: Vec<T>,
    sig_y: Vec<T>,
    sig_xy: Vec<T>,
}

fn stats<T: Real>(x: &[T], y: &[T], w: usize, h: usize, k: &[T; WINDOW]) -> ChannelStats<T> {
    let xx: Vec<T> = x.iter().map(|&v| v * v).collect();
    let yy: Vec<T> = y.iter().map(|&v| v * v).collect();
    let xy: Vec<T> = x.iter().zip(y).map(|(&a, &b)| a * b).collect();
    let mu_x = conv_valid(x, w, h, k);
    let mu_y = conv_valid(y, w, h, k);
    let mut sig_x = conv_valid(&xx, w, h, k);
    let mut sig_y = conv_valid(&yy, w, h, k);
    let mut sig_xy = conv_valid(&xy, w, h, k);
    for i in 0..mu_x.len() {
        sig_x[i] -= mu_x[i] * mu_x[i];
        sig_y[i] -= mu_y[i] * mu_y[i];
        sig_xy[i] -= mu_x[i] * mu_y[i];
    }
    ChannelStats {
        mu_x,
        mu_y,
        sig_x,
        sig_y,
        sig_xy,
    }
}

pub fn ssim_map<T: Real>(
    a: &[T],
    b: &[T],
    width: usize,
    height: usize,
    channels: usize,
) -> Result<SsimMap<T>> {
    check_dims(width, height, channels, a.len(), b.len())?;
    let k = kernel::<T>();
    let vw = width - WINDOW + 1;
    let vh = height - WINDOW + 1;
    let c1 = T::of(K1 * K1);
    let c2 = T::of(K2 * K2);
    let mut map = vec![T::zero(); vw * vh];
    for c in 0..channels {
        let x = plane(a, channels, c);
        let y = plane(b, channels, c);
        let st = stats(&x, &y, width, height, &k);
        for i in 0..map.len() {
            let a1 = T::of(2.0) * st.mu_x[i] * st.mu_y[i] + c1;
            let a2 = T::of(2.0) * st.sig_xy[i] + c2;
            let b1 = st.mu_x[i] * st.mu_x[i] + st.mu_y[i] * st.mu_y[i] + c1;
            let b2 = st.sig_x[i] + st.sig_y[i] + c2;
            map[i] += (a1 * a2) / (b1 * b2);
        }
    }
    let inv_c = T::one() / T::of(channels as f64);
    for v in &mut map {
        *v *= inv_c;
    }
    Ok(SsimMap { vw, vh, map })
}

/// Mean SSIM and its gradient w.r.t. the first image.
///
/// With a mask, the mean runs over windows whose center is masked and the
/// gradient matches that restricted mean.
pub fn ssim_backward<T: Real>(
    a: &[T],
    b: &[T],
    width: usize,
    height: usize,
    channels: usize,
    mask: Option<&[bool]>,
) -> Result<(T, Vec<T>)> {
    check_dims(width, height, channels, a.len(), b.len())?;
    let k = kernel::<T>();
    let vw = width - WINDOW + 1;
    let vh = height - WINDOW + 1;
    let c1 = T::of(K1 * K1);
    let c2 = T::of(K2 * K2);

    // upstream weight per window: 1/(selected windows × channels)
    let selected: Vec<bool> = match mask {
        None => vec![true; vw * vh],
        Some(m) => {
            let mut sel = vec![false; vw * vh];
            for y in 0..vh {
                for x in 0..vw {
                    sel[y * vw + x] = m[(y + HALF) * width + (x + HALF)];
                }
            }
            sel
        }
    };
    let n_sel = selected.iter().filter(|&&s| s).count();
    if n_sel == 0 {
        return Err(Error::EmptyMask {
            context: "no SSIM window centers inside mask".into(),
        });
    }
    let up = T::one() / T::of((n_sel * channels) as f64);

    let mut total = T::zero();
    let mut grad = vec![T::zero(); width * height * channels];
    for c in 0..channels {
        let x = plane(a, channels, c);
        let y = plane(b, channels, c);
        let st = stats(&x, &y, width, height, &k);
        let n = vw * vh;
        let mut g1 = vec![T::zero(); n];
        let mut g2 = vec![T::zero(); n];
        let mut g2mu = vec![T::zero(); n];
        let mut g3 = vec![T::zero(); n];
        let mut g3mu = vec![T::zero(); n];
        for i in 0..n {
            let a1 = T::of(2.0) * st.mu_x[i] * st.mu_y[i] + c1;
            let a2 = T::of(2.0) * st.sig_xy[i] + c2;
            let b1 = st.mu_x[i] * st.mu_x[i] + st.mu_y[i] * st.mu_y[i] + c1;
            let b2 = st.sig_x[i] + st.sig_y[i] + c2;
            let denom = b1 * b2;
            let s = (a1 * a2) / denom;
            if !selected[i] {
                continue;
            }
            total += s * up;
            // dS/dμx, dS/dσx², dS/dσxy scaled by the mean weight
            let d_mu = up * (T::of(2.0) * st.mu_y[i] * a2 / denom
                - s * T::of(2.0) * st.mu_x[i] / b1);
            let d_var = up * (-s / b2);
            let d_cov = up * (T::of(2.0) * a1 / denom);
            g1[i] = d_mu;
            g2[i] = d_var;
            g2mu[i] = d_var * st.mu_x[i];
            g3[i] = d_cov;
            g3mu[i] = d_cov * st.mu_y[i];
        }
        let s1 = conv_adjoint(&g1, width, height, &k);
        let s2 = conv_adjoint(&g2, width, height, &k);
        let s2mu = conv_adjoint(&g2mu, width, height, &k);
        let s3 = conv_adjoint(&g3, width, height, &k);
        let s3mu = conv_adjoint(&g3mu, width, height, &k);
        for i in 0..width * height {
            let g = s1[i] + T::of(2.0) * (x[i] * s2[i] - s2mu[i]) + y[i] * s3[i] - s3mu[i];
            grad[i * channels + c] += g;
        }
    }
    Ok((total, grad))
}

pub fn ssim_mean<T: Real>(
    a: &[T],
    b: &[T],
    width: usize,
    height: usize,
    channels: usize,
) -> Result<T> {
    Ok(ssim_map(a, b, width, height, channels)?.mean())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textured(w: usize, h: usize, seed: f64) -> Vec<f64> {
        let mut img = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let v = 0.5
                    + 0.3 * ((x as f64 * 0.7 + seed).sin() * (y as f64 * 0.45 - seed).cos())
                    + 0.1 * ((x + 2 * y) as f64 * 0.2).sin();
                img.push(v.clamp(0.0, 1.0));
            }
        }
        img
    }

    #[test]
    fn identical_images_score_one() {
        let a = textured(20, 16, 0.3);
        let s = ssim_mean(&a, &a, 20, 16, 1).unwrap();
        assert!((s - 1.0).abs() < 1e-12, "{s}");
    }

    #[test]
    fn symmetric_in_arguments() {
        let a = textured(20, 16, 0.3);
        let b = textured(20, 16, 1.7);
        let s1 = ssim_mean(&a, &b, 20, 16, 1).unwrap();
        let s2 = ssim_mean(&b, &a, 20, 16, 1).unwrap();
        assert!((s1 - s2).abs() < 1e-12);
        assert!(s1 < 1.0 && s1 > -1.0);
    }

    #[test]
    fn inverted_textured_image_scores_low() {
        let a = textured(32, 32, 0.9);
        let b: Vec<f64> = a.iter().map(|&v| 1.0 - v).collect();
        let s = ssim_mean(&a, &b, 32, 32, 1).unwrap();
        assert!(s < 0.3, "inverted image scored {s}");
    }

    #[test]
    fn too_small_image_is_rejected() {
        let a = vec![0.5; 10 * 10];
        assert!(ssim_mean(&a, &a, 10, 10, 1).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (w, h) = (14, 13);
        let a = textured(w, h, 0.25);
        let b = textured(w, h, 2.1);
        let (_, grad) = ssim_backward(&a, &b, w, h, 1, None).unwrap();
        let hstep = 1e-6;
        for &i in &[0usize, 7, w * h / 2, w * h - 1, 3 * w + 5] {
            let mut ap = a.clone();
            let mut am = a.clone();
            ap[i] += hstep;
            am[i] -= hstep;
            let sp = ssim_mean(&ap, &b, w, h, 1).unwrap();
            let sm = ssim_mean(&am, &b, w, h, 1).unwrap();
            let fd = (sp - sm) / (2.0 * hstep);
            assert!(
                (grad[i] - fd).abs() < 1e-6 * fd.abs().max(1e-3),
                "pixel {i}: {} vs {fd}",
                grad[i]
            );
        }
    }

    #[test]
    fn masked_mean_ignores_unmasked_windows() {
        let (w, h) = (24, 18);
        let a = textured(w, h, 0.25);
        // corrupt the right half; mask selects only left-half centers
        let mut b = a.clone();
        for y in 0..h {
            for x in w / 2..w {
                b[y * w + x] = 1.0 - b[y * w + x];
            }
        }
        let mut mask = vec![false; w * h];
        for y in 0..h {
            for x in 0..WINDOW - 4 {
                mask[y * w + x] = true;
            }
        }
        let map = ssim_map(&a, &b, w, h, 1).unwrap();
        let masked = map.masked_mean(w, &mask).unwrap();
        assert!((masked - 1.0).abs() < 1e-9, "left half untouched: {masked}");
        assert!(map.mean() < 0.9);
    }

    #[test]
    fn masked_gradient_matches_restricted_mean() {
        let (w, h) = (16, 14);
        let a = textured(w, h, 0.4);
        let b = textured(w, h, 1.3);
        let mut mask = vec![false; w * h];
        for y in 0..h {
            for x in 0..w {
                mask[y * w + x] = (x + y) % 3 == 0;
            }
        }
        let (val, grad) = ssim_backward(&a, &b, w, h, 1, Some(&mask)).unwrap();
        let map = ssim_map(&a, &b, w, h, 1).unwrap();
        let direct = map.masked_mean(w, &mask).unwrap();
        assert!((val - direct).abs() < 1e-12);
        let hstep = 1e-6;
        let i = 5 * w + 6;
        let mut ap = a.clone();
        let mut am = a.clone();
        ap[i] += hstep;
        am[i] -= hstep;
        let sp = ssim_map(&ap, &b, w, h, 1).unwrap().masked_mean(w, &mask).unwrap();
        let sm = ssim_map(&am, &b, w, h, 1).unwrap().masked_mean(w, &mask).unwrap();
        let fd = (sp - sm) / (2.0 * hstep);
        assert!((grad[i] - fd).abs() < 1e-6 * fd.abs().max(1e-3));
    }
}
