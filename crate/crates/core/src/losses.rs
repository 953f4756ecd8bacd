//! Photometric and flow losses with gradients w.r.t. the rendered buffers.
//!
//! RGB supervision is the standard splatting mix
//!   (1 − λ)·L1 + λ·(1 − SSIM),  λ = 0.2 by default,
//! optionally restricted to a mask (L1 over masked pixels, SSIM over windows
//! centered in the mask). Flow supervision is a per-pixel L1 over pixels the
//! render actually covers (alpha > 0.5), averaged over those pixels and both
//! components; uncovered pixels carry no signal and contribute no gradient.

use crate::error::{Error, Result};
use crate::math::Real;
use crate::ssim;

pub const DEFAULT_LAMBDA_DSSIM: f64 = 0.2;
/// Coverage threshold below which a pixel's rendered flow is unsupervised.
pub const FLOW_ALPHA_MIN: f64 = 0.5;

/// A scalar loss together with its gradient w.r.t. the rendered buffer.
pub struct LossGrad<T: Real> {
    pub loss: T,
    pub grad: Vec<T>,
}

fn check_same(len_a: usize, len_b: usize, what: &str) -> Result<()> {
    if len_a != len_b {
        return Err(Error::Contract(format!(
            "{what}: buffer lengths differ ({len_a} vs {len_b})"
        )));
    }
    Ok(())
}

/// Mean absolute difference and its gradient w.r.t. `a`, optionally over a
/// per-pixel mask (mask length = pixel count, buffers interleaved).
pub fn l1_loss<T: Real>(
    a: &[T],
    b: &[T],
    channels: usize,
    mask: Option<&[bool]>,
) -> Result<LossGrad<T>> {
    check_same(a.len(), b.len(), "l1")?;
    let pixels = a.len() / channels;
    let mut grad = vec![T::zero(); a.len()];
    let count = match mask {
        None => pixels,
        Some(m) => {
            check_same(m.len(), pixels, "l1 mask")?;
            m.iter().filter(|&&v| v).count()
        }
    };
    if count == 0 {
        return Err(Error::EmptyMask {
            context: "L1 mask selects no pixels".into(),
        });
    }
    let norm = T::one() / T::of((count * channels) as f64);
    let mut loss = T::zero();
    for p in 0..pixels {
        if let Some(m) = mask {
            if !m[p] {
                continue;
            }
        }
        for c in 0..channels {
            let i = p * channels + c;
            let d = a[i] - b[i];
            loss += d.abs() * norm;
            grad[i] = if d > T::zero() {
                norm
            } else if d < T::zero() {
                -norm
            } else {
                T::zero()
            };
        }
    }
    Ok(LossGrad { loss, grad })
}

/// (1 − λ)·L1 + λ·(1 − SSIM) and its gradient w.r.t. `rendered`.
pub fn rgb_loss<T: Real>(
    rendered: &[T],
    target: &[T],
    width: usize,
    height: usize,
    mask: Option<&[bool]>,
    lambda_dssim: T,
) -> Result<LossGrad<T>> {
    check_same(rendered.len(), target.len(), "rgb_loss")?;
    check_same(rendered.len(), width * height * 3, "rgb_loss dims")?;
    let l1 = l1_loss(rendered, target, 3, mask)?;
    if lambda_dssim == T::zero() {
        let mut out = l1;
        let w = T::one() - lambda_dssim;
        out.loss *= w;
        for g in &mut out.grad {
            *g *= w;
        }
        return Ok(out);
    }
    let (ssim_val, ssim_grad) = ssim::ssim_backward(rendered, target, width, height, 3, mask)?;
    let w1 = T::one() - lambda_dssim;
    let loss = w1 * l1.loss + lambda_dssim * (T::one() - ssim_val);
    let mut grad = l1.grad;
    for i in 0..grad.len() {
        grad[i] = w1 * grad[i] - lambda_dssim * ssim_grad[i];
    }
    Ok(LossGrad { loss, grad })
}

/// Flow L1 restricted to covered pixels.
pub struct FlowLoss<T: Real> {
    pub loss: T,
    pub grad: Vec<T>,
    /// Pixels that passed the coverage threshold.
    pub covered: usize,
}

/// Mean |rendered − gt| over pixels with alpha > 0.5, averaged over the two
/// components; zero loss and gradient when nothing is covered.
pub fn flow_loss<T: Real>(rendered: &[T], gt: &[T], alpha: &[T]) -> Result<FlowLoss<T>> {
    check_same(rendered.len(), gt.len(), "flow_loss")?;
    check_same(rendered.len(), alpha.len() * 2, "flow_loss alpha")?;
    let thresh = T::of(FLOW_ALPHA_MIN);
    let covered = alpha.iter().filter(|&&a| a > thresh).count();
    let mut grad = vec![T::zero(); rendered.len()];
    if covered == 0 {
        return Ok(FlowLoss {
            loss: T::zero(),
            grad,
            covered,
        });
    }
    let norm = T::one() / T::of((covered * 2) as f64);
    let mut loss = T::zero();
    for (p, &a) in alpha.iter().enumerate() {
        if a <= thresh {
            continue;
        }
        for c in 0..2 {
            let i = p * 2 + c;
            let d = rendered[i] - gt[i];
            loss += d.abs() * norm;
            grad[i] = if d > T::zero() {
                norm
            } else if d < T::zero() {
                -norm
            } else {
                T::zero()
            };
        }
    }
    Ok(FlowLoss {
        loss,
        grad,
        covered,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_images_give_zero_rgb_loss() {
        let img: Vec<f64> = (0..16 * 16 * 3).map(|i| (i % 7) as f64 / 7.0).collect();
        let lg = rgb_loss(&img, &img, 16, 16, None, 0.2).unwrap();
        assert!(lg.loss.abs() < 1e-12);
    }

    #[test]
    fn constant_offset_pure_l1() {
        let a = vec![0.6f64; 12 * 12 * 3];
        let b = vec![0.5f64; 12 * 12 * 3];
        let lg = rgb_loss(&a, &b, 12, 12, None, 0.0).unwrap();
        assert!((lg.loss - 0.1).abs() < 1e-12, "{}", lg.loss);
    }

    #[test]
    fn l1_gradient_is_signed_mean_weight() {
        let a = vec![0.7f64, 0.2, 0.5, 0.5];
        let b = vec![0.5f64, 0.5, 0.5, 0.5];
        let lg = l1_loss(&a, &b, 1, None).unwrap();
        assert!((lg.grad[0] - 0.25).abs() < 1e-12);
        assert!((lg.grad[1] + 0.25).abs() < 1e-12);
        assert_eq!(lg.grad[2], 0.0);
    }

    #[test]
    fn rgb_gradient_matches_finite_differences() {
        let (w, h) = (13, 12);
        let mut a: Vec<f64> = Vec::new();
        let mut b: Vec<f64> = Vec::new();
        for i in 0..w * h * 3 {
            a.push(0.5 + 0.3 * ((i as f64) * 0.37).sin());
            b.push(0.5 + 0.3 * ((i as f64) * 0.91).cos());
        }
        let lg = rgb_loss(&a, &b, w, h, None, 0.2).unwrap();
        let hstep = 1e-6;
        for &i in &[0usize, 40, 3 * w * 5 + 1, w * h * 3 - 2] {
            let mut ap = a.clone();
            let mut am = a.clone();
            ap[i] += hstep;
            am[i] -= hstep;
            let lp = rgb_loss(&ap, &b, w, h, None, 0.2).unwrap().loss;
            let lm = rgb_loss(&am, &b, w, h, None, 0.2).unwrap().loss;
            let fd = (lp - lm) / (2.0 * hstep);
            assert!(
                (lg.grad[i] - fd).abs() < 1e-5 * fd.abs().max(1e-3),
                "i={i}: {} vs {fd}",
                lg.grad[i]
            );
        }
    }

    #[test]
    fn flow_loss_channel_mean_convention() {
        // uniform 1px error in x over full coverage → (|1| + |0|)/2 = 0.5
        let n = 10;
        let rendered: Vec<f64> = (0..n).flat_map(|_| [1.0, 0.0]).collect();
        let gt = vec![0.0f64; n * 2];
        let alpha = vec![1.0f64; n];
        let fl = flow_loss(&rendered, &gt, &alpha).unwrap();
        assert!((fl.loss - 0.5).abs() < 1e-12);
        assert_eq!(fl.covered, n);
    }

    #[test]
    fn flow_loss_ignores_uncovered_pixels() {
        let rendered = vec![5.0f64, 5.0, 1.0, 0.0];
        let gt = vec![0.0f64; 4];
        let alpha = vec![0.3f64, 0.9];
        let fl = flow_loss(&rendered, &gt, &alpha).unwrap();
        assert!((fl.loss - 0.5).abs() < 1e-12);
        assert_eq!(fl.grad[0], 0.0);
        assert_eq!(fl.grad[1], 0.0);
        assert!(fl.grad[2] > 0.0);
        assert_eq!(fl.covered, 1);
    }

    #[test]
    fn fully_uncovered_flow_is_zero_not_error() {
        let rendered = vec![1.0f64; 8];
        let gt = vec![0.0f64; 8];
        let alpha = vec![0.0f64; 4];
        let fl = flow_loss(&rendered, &gt, &alpha).unwrap();
        assert_eq!(fl.loss, 0.0);
        assert_eq!(fl.covered, 0);
    }

    #[test]
    fn shape_mismatch_is_a_typed_error() {
        let a = vec![0.0f64; 10];
        let b = vec![0.0f64; 12];
        assert!(l1_loss(&a, &b, 1, None).is_err());
    }
}
