//! Tile compositing: forward and the per-splat render-space backward.
//!
//! Forward, per pixel, front to back:
//!   G = exp(−½ dᵀ conic d),  α = min(w·G, cap)
//!   skip α < alpha_skip; out += T·α·value; T ← T·(1−α); stop when T < early_stop
//!
//! Backward replays the identical walk, then runs it in reverse with the
//! suffix sum S_k = Σ_{j>k} T_j α_j value_j:
//!   ∂L/∂α_k = Σ_c up_c · (T_k·value_c − S_{k,c}/(1−α_k))
//!   ∂L/∂value_c = up_c · T_k α_k
//! The α gradient reaches w and G only below the cap; ∂Q/∂mean2 = 2e and
//! ∂Q/∂cov2 = −e eᵀ with e = conic·d give the render-space gradients that
//! `geometric_backward` chains onward.

use nalgebra::Vector2;
use rayon::prelude::*;

use crate::math::Real;

use super::{ActiveSplat, RasterSettings, RenderOutput};

/// Render-space gradients of one splat, summed over every pixel it touched.
#[derive(Debug, Clone, Copy)]
pub struct RenderGrad<T: Real> {
    pub d_mean2: Vector2<T>,
    /// w.r.t. the floored screen covariance (a, b, c).
    pub d_cov2: (T, T, T),
    pub d_value: [T; 3],
    pub d_w: T,
}

impl<T: Real> RenderGrad<T> {
    fn zero() -> Self {
        RenderGrad {
            d_mean2: Vector2::zeros(),
            d_cov2: (T::zero(), T::zero(), T::zero()),
            d_value: [T::zero(); 3],
            d_w: T::zero(),
        }
    }
}

struct TileMap {
    tile: usize,
    tiles_x: usize,
    tiles_y: usize,
    width: usize,
    height: usize,
}

impl TileMap {
    fn new(width: u32, height: u32, settings: &RasterSettings) -> Self {
        let (width, height) = (width as usize, height as usize);
        let tile = if settings.exhaustive {
            width.max(height)
        } else {
            settings.tile_size
        };
        TileMap {
            tile,
            tiles_x: width.div_ceil(tile),
            tiles_y: height.div_ceil(tile),
            width,
            height,
        }
    }

    fn count(&self) -> usize {
        self.tiles_x * self.tiles_y
    }

    /// Pixel rectangle of tile ti: (x0, y0, x1, y1), exclusive upper bounds.
    fn rect(&self, ti: usize) -> (usize, usize, usize, usize) {
        let tx = ti % self.tiles_x;
        let ty = ti / self.tiles_x;
        let x0 = tx * self.tile;
        let y0 = ty * self.tile;
        (
            x0,
            y0,
            (x0 + self.tile).min(self.width),
            (y0 + self.tile).min(self.height),
        )
    }

    /// Depth-ordered splat indices per tile (actives are already sorted).
    fn bin<T: Real>(&self, actives: &[ActiveSplat<T>]) -> Vec<Vec<u32>> {
        let mut lists = vec![Vec::new(); self.count()];
        if self.count() == 1 {
            lists[0] = (0..actives.len() as u32).collect();
            return lists;
        }
        for (i, a) in actives.iter().enumerate() {
            let x_lo = (a.mean2[0] - a.radius).to_f64();
            let x_hi = (a.mean2[0] + a.radius).to_f64();
            let y_lo = (a.mean2[1] - a.radius).to_f64();
            let y_hi = (a.mean2[1] + a.radius).to_f64();
            let tx0 = (x_lo.max(0.0) as usize) / self.tile;
            let ty0 = (y_lo.max(0.0) as usize) / self.tile;
            let tx1 = ((x_hi.min((self.width - 1) as f64)).max(0.0) as usize) / self.tile;
            let ty1 = ((y_hi.min((self.height - 1) as f64)).max(0.0) as usize) / self.tile;
            if x_hi < 0.0 || y_hi < 0.0 {
                continue;
            }
            for ty in ty0..=ty1.min(self.tiles_y - 1) {
                for tx in tx0..=tx1.min(self.tiles_x - 1) {
                    lists[ty * self.tiles_x + tx].push(i as u32);
                }
            }
        }
        lists
    }
}

pub(crate) fn forward<T: Real>(
    actives: &[ActiveSplat<T>],
    width: u32,
    height: u32,
    channels: usize,
    settings: &RasterSettings,
) -> RenderOutput<T> {
    let map = TileMap::new(width, height, settings);
    let lists = map.bin(actives);
    let cap = T::of(settings.alpha_cap);
    let skip = T::of(settings.alpha_skip);
    let stop = T::of(settings.early_stop);

    // each tile renders into a local buffer; tiles merge in index order
    let tiles: Vec<(Vec<T>, Vec<T>)> = (0..map.count())
        .into_par_iter()
        .map(|ti| {
            let (x0, y0, x1, y1) = map.rect(ti);
            let (tw, th) = (x1 - x0, y1 - y0);
            let mut values = vec![T::zero(); tw * th * channels];
            let mut alpha = vec![T::zero(); tw * th];
            let list = &lists[ti];
            for py in y0..y1 {
                for px in x0..x1 {
                    let pix = Vector2::new(
                        T::of(px as f64) + T::of(0.5),
                        T::of(py as f64) + T::of(0.5),
                    );
                    let mut trans = T::one();
                    let mut acc = [T::zero(); 3];
                    let mut acc_a = T::zero();
                    for &ai in list {
                        let a = &actives[ai as usize];
                        let d = pix - a.mean2;
                        let q = a.conic.0 * d[0] * d[0]
                            + T::of(2.0) * a.conic.1 * d[0] * d[1]
                            + a.conic.2 * d[1] * d[1];
                        let g = (-q * T::of(0.5)).exp();
                        let al = (a.w * g).min(cap);
                        if al < skip {
                            continue;
                        }
                        let wgt = trans * al;
                        for c in 0..channels {
                            acc[c] += a.value[c] * wgt;
                        }
                        acc_a += wgt;
                        trans *= T::one() - al;
                        if trans < stop {
                            break;
                        }
                    }
                    let o = ((py - y0) * tw + (px - x0)) * channels;
                    for c in 0..channels {
                        values[o + c] = acc[c];
                    }
                    alpha[(py - y0) * tw + (px - x0)] = acc_a;
                }
            }
            (values, alpha)
        })
        .collect();

    let mut out = RenderOutput {
        width,
        height,
        channels,
        values: vec![T::zero(); width as usize * height as usize * channels],
        alpha: vec![T::zero(); width as usize * height as usize],
    };
    for (ti, (values, alpha)) in tiles.iter().enumerate() {
        let (x0, y0, x1, y1) = map.rect(ti);
        let tw = x1 - x0;
        for py in y0..y1 {
            for px in x0..x1 {
                let src = (py - y0) * tw + (px - x0);
                let dst = py * map.width + px;
                for c in 0..channels {
                    out.values[dst * channels + c] = values[src * channels + c];
                }
                out.alpha[dst] = alpha[src];
            }
        }
    }
    out
}

pub(crate) fn backward<T: Real>(
    actives: &[ActiveSplat<T>],
    width: u32,
    height: u32,
    channels: usize,
    settings: &RasterSettings,
    upstream: &[T],
) -> Vec<RenderGrad<T>> {
    let map = TileMap::new(width, height, settings);
    let lists = map.bin(actives);
    let cap = T::of(settings.alpha_cap);
    let skip = T::of(settings.alpha_skip);
    let stop = T::of(settings.early_stop);

    let tile_grads: Vec<Vec<RenderGrad<T>>> = (0..map.count())
        .into_par_iter()
        .map(|ti| {
            let list = &lists[ti];
            let mut grads = vec![RenderGrad::zero(); list.len()];
            if list.is_empty() {
                return grads;
            }
            let (x0, y0, x1, y1) = map.rect(ti);
            // (position in list, alpha, transmittance before this splat)
            let mut walk: Vec<(u32, T, T)> = Vec::with_capacity(list.len());
            for py in y0..y1 {
                for px in x0..x1 {
                    let pix = Vector2::new(
                        T::of(px as f64) + T::of(0.5),
                        T::of(py as f64) + T::of(0.5),
                    );
                    walk.clear();
                    let mut trans = T::one();
                    for (li, &ai) in list.iter().enumerate() {
                        let a = &actives[ai as usize];
                        let d = pix - a.mean2;
                        let q = a.conic.0 * d[0] * d[0]
                            + T::of(2.0) * a.conic.1 * d[0] * d[1]
                            + a.conic.2 * d[1] * d[1];
                        let g = (-q * T::of(0.5)).exp();
                        let al = (a.w * g).min(cap);
                        if al < skip {
                            continue;
                        }
                        walk.push((li as u32, al, trans));
                        trans *= T::one() - al;
                        if trans < stop {
                            break;
                        }
                    }
                    if walk.is_empty() {
                        continue;
                    }
                    let up = {
                        let o = (py * map.width + px) * channels;
                        [
                            upstream[o],
                            upstream[o + 1],
                            if channels > 2 {
                                upstream[o + 2]
                            } else {
                                T::zero()
                            },
                        ]
                    };
                    let mut suffix = [T::zero(); 3];
                    for &(li, al, t_before) in walk.iter().rev() {
                        let a = &actives[list[li as usize] as usize];
                        let rg = &mut grads[li as usize];
                        let mut d_alpha = T::zero();
                        let one_m = T::one() - al;
                        for c in 0..channels {
                            d_alpha += up[c] * (t_before * a.value[c] - suffix[c] / one_m);
                            rg.d_value[c] += up[c] * t_before * al;
                            suffix[c] += t_before * al * a.value[c];
                        }
                        if al < cap {
                            // α = w·G below the cap
                            let g = al / a.w;
                            rg.d_w += d_alpha * g;
                            let d_g = d_alpha * a.w;
                            let d_q = -T::of(0.5) * g * d_g;
                            let d = pix - a.mean2;
                            let e = Vector2::new(
                                a.conic.0 * d[0] + a.conic.1 * d[1],
                                a.conic.1 * d[0] + a.conic.2 * d[1],
                            );
                            rg.d_mean2 += e * (-T::of(2.0) * d_q);
                            rg.d_cov2.0 -= d_q * e[0] * e[0];
                            rg.d_cov2.1 -= d_q * T::of(2.0) * e[0] * e[1];
                            rg.d_cov2.2 -= d_q * e[1] * e[1];
                        }
                    }
                }
            }
            grads
        })
        .collect();

    // deterministic merge in tile order
    let mut out = vec![RenderGrad::zero(); actives.len()];
    for (ti, grads) in tile_grads.iter().enumerate() {
        for (li, g) in grads.iter().enumerate() {
            let ai = lists[ti][li] as usize;
            let o = &mut out[ai];
            o.d_mean2 += g.d_mean2;
            o.d_cov2.0 += g.d_cov2.0;
            o.d_cov2.1 += g.d_cov2.1;
            o.d_cov2.2 += g.d_cov2.2;
            for c in 0..3 {
                o.d_value[c] += g.d_value[c];
            }
            o.d_w += g.d_w;
        }
    }
    out
}
