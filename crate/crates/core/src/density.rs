//! Density control: dynamic stretching of static primitives and
//! duration-weighted relocation of dead ones.
//!
//! Stretching merges temporally adjacent primitives that describe the same
//! static content. A primitive native to interval k sits at the shared frame
//! t_{k+1} with its endpoint p2 = μ + ½v2, while a primitive native to k+1
//! sits there with p1 = μ − ½v2. When those endpoints are nearest neighbours
//! within a radius, their base colors agree, and both move slowly, the two
//! temporal windows are widened to their union so a single blurred-out
//! duplicate no longer has to be learned per interval. Windows always keep
//! the half-grid form τ ∈ {(½+k)·Δt}, so unions are computed on integer
//! frame indices and never drift off the lattice. Each primitive matched k
//! times by others is then pruned with probability 1 − 1/(k+1): of k+1
//! redundant copies of the same content, one survives in expectation.
//!
//! Relocation keeps the primitive budget useful. A primitive is dead when
//! its activated opacity σ = sigmoid(logit) falls below `min_opacity`. Each
//! dead primitive adopts the full parameter vector of a target sampled from
//! the alive set with probability proportional to the sampling score
//!
//!     s = σ / ((τ_l + τ_r) / Δt),
//!
//! i.e. short-lived dynamic content is preferentially densified over
//! long-lived static content of equal opacity. When a target ends up with n
//! clones, all N = n+1 copies receive
//!
//!     σ′ = 1 − (1 − σ_target)^{1/N}
//!
//! so that compositing the N copies reproduces the original coverage
//! (1 − (1−σ′)^N = σ_target), and the linear scales are multiplied by
//!
//!     σ_target / Σ_{i=1..N} C(N,i) (−1)^{i+1} σ′^i / √i
//!
//! which preserves the blended footprint of the stack of copies. Total
//! primitive count is conserved exactly.

use std::collections::HashMap;

use nalgebra::Vector3;
use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use crate::error::{Error, Result};
use crate::scene::{Primitive, Scene};

/// Match thresholds for [`dynamic_stretch`]. `vel_tol` and `nn_radius` are
/// fractions of the scene extent (per Δt for the velocity); `color_tol` is an
/// absolute L2 distance between degree-0 SH coefficient triples. The
/// defaults are deliberately conservative — exact-duplicate territory; they
/// admit the appearance spread that shading alone puts between neighboring
/// surface samples (≈ 0.4 in DC units) but essentially require coincident
/// positions. Trained scenes wobble per-interval copies of the same surface
/// patch apart, so training presets widen these (see `TrainConfig::desk`).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct StretchConfig {
    pub color_tol: f32,
    pub vel_tol: f32,
    pub nn_radius: f32,
}

impl Default for StretchConfig {
    fn default() -> Self {
        StretchConfig {
            color_tol: 0.5,
            vel_tol: 0.005,
            nn_radius: 0.01,
        }
    }
}

impl StretchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.color_tol > 0.0 && self.vel_tol > 0.0 && self.nn_radius > 0.0) {
            return Err(Error::Config(format!(
                "stretch thresholds must all be positive, got color_tol={} vel_tol={} nn_radius={}",
                self.color_tol, self.vel_tol, self.nn_radius
            )));
        }
        Ok(())
    }
}

/// Outcome of one stretch event. `kept` maps new primitive indices to their
/// pre-event indices so per-primitive optimizer state can be remapped.
#[derive(Debug, Clone, PartialEq)]
pub struct StretchStats {
    /// Primitives whose window actually grew (counted before pruning).
    pub stretched: usize,
    pub pruned: usize,
    pub kept: Vec<usize>,
}

/// Outcome of one relocation event. `touched` lists indices (targets and
/// clones) whose parameters were rewritten and whose optimizer moments
/// should be reset.
#[derive(Debug, Clone, PartialEq)]
pub struct RelocateStats {
    pub relocated: usize,
    pub touched: Vec<usize>,
    /// The dead slots that received copies (subset of `touched`).
    pub clones: Vec<usize>,
    /// True when every primitive was dead and the event degenerated to a
    /// warning no-op.
    pub no_alive: bool,
}

/// Uniform spatial hash over points, cell size = query radius, so any
/// neighbour within the radius lies in one of the 27 cells around the query.
struct HashGrid {
    cell: f32,
    entries: Vec<(u32, Vector3<f32>)>,
    buckets: HashMap<(i32, i32, i32), Vec<u32>>,
}

impl HashGrid {
    fn key(&self, p: &Vector3<f32>) -> (i32, i32, i32) {
        (
            (p[0] / self.cell).floor() as i32,
            (p[1] / self.cell).floor() as i32,
            (p[2] / self.cell).floor() as i32,
        )
    }

    fn build(points: Vec<(u32, Vector3<f32>)>, radius: f32) -> Self {
        let mut grid = HashGrid {
            cell: radius.max(1e-12),
            entries: points,
            buckets: HashMap::new(),
        };
        for (slot, (_, p)) in grid.entries.iter().enumerate() {
            let key = grid.key(p);
            grid.buckets.entry(key).or_default().push(slot as u32);
        }
        grid
    }

    /// Nearest entry within `radius` of `q`; ties broken by smaller id so the
    /// result is independent of bucket iteration order.
    fn nearest(&self, q: &Vector3<f32>, radius: f32) -> Option<u32> {
        let center = self.key(q);
        let r2 = radius * radius;
        let mut best: Option<(f32, u32)> = None;
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let key = (center.0 + dx, center.1 + dy, center.2 + dz);
                    let Some(bucket) = self.buckets.get(&key) else {
                        continue;
                    };
                    for &slot in bucket {
                        let (id, p) = self.entries[slot as usize];
                        let d2 = (p - q).norm_squared();
                        if d2 <= r2 {
                            let better = match best {
                                None => true,
                                Some((bd, bid)) => d2 < bd || (d2 == bd && id < bid),
                            };
                            if better {
                                best = Some((d2, id));
                            }
                        }
                    }
                }
            }
        }
        best.map(|(_, id)| id)
    }
}

/// Temporal window of `p` as inclusive integer frame indices
/// [start, end] = [k − a, k + 1 + b] where τ_l = a + ½, τ_r = b + ½
/// (normalized units: the internal grid spacing is exactly 1).
fn frame_span(p: &Primitive<f32>) -> (i64, i64) {
    let a = (p.tau_l - 0.5).round() as i64;
    let b = (p.tau_r - 0.5).round() as i64;
    let k = p.interval as i64;
    (k - a, k + 1 + b)
}

/// Writes a frame-index window back as lattice-exact (τ_l, τ_r).
fn set_frame_span(p: &mut Primitive<f32>, span: (i64, i64)) {
    let k = p.interval as i64;
    p.tau_l = (k - span.0) as f32 + 0.5;
    p.tau_r = (span.1 - k - 1) as f32 + 0.5;
}

/// One dynamic-stretch event: match static look-alikes across adjacent
/// intervals, widen both windows of each matched pair to their union, then
/// prune each primitive matched k ≥ 1 times by others with probability
/// 1 − 1/(k+1). Runs in ascending primitive order, so results are
/// deterministic for a fixed scene and RNG state; windows evolve during the
/// pass, letting chains of static primitives merge across several intervals
/// in one event.
pub fn dynamic_stretch(
    scene: &mut Scene<f32>,
    cfg: &StretchConfig,
    rng: &mut impl Rng,
) -> StretchStats {
    let n = scene.prims.len();
    let extent = scene.extent();
    let radius = cfg.nn_radius * extent;
    let vel_max = cfg.vel_tol * extent;

    // Per-interval grids over interval-start (p1) and interval-end (p2)
    // endpoints. The seeker's p2 meets the right neighbour's p1 at the shared
    // frame, and its p1 meets the left neighbour's p2.
    let intervals = scene.grid.intervals() as usize;
    let mut by_p1: Vec<Vec<(u32, Vector3<f32>)>> = vec![Vec::new(); intervals];
    let mut by_p2: Vec<Vec<(u32, Vector3<f32>)>> = vec![Vec::new(); intervals];
    for (i, p) in scene.prims.iter().enumerate() {
        let k = p.interval as usize;
        if k < intervals {
            by_p1[k].push((i as u32, p.mu - p.v2 * 0.5));
            by_p2[k].push((i as u32, p.mu + p.v2 * 0.5));
        }
    }
    let grids_p1: Vec<HashGrid> = by_p1
        .into_iter()
        .map(|pts| HashGrid::build(pts, radius))
        .collect();
    let grids_p2: Vec<HashGrid> = by_p2
        .into_iter()
        .map(|pts| HashGrid::build(pts, radius))
        .collect();

    let mut spans: Vec<(i64, i64)> = scene.prims.iter().map(frame_span).collect();
    let original: Vec<(i64, i64)> = spans.clone();
    let mut matched_by = vec![0u32; n];

    for i in 0..n {
        let p = &scene.prims[i];
        if p.v2.norm() > vel_max {
            continue; // can never satisfy the two-sided velocity gate
        }
        let k = p.interval as usize;
        let p1 = p.mu - p.v2 * 0.5;
        let p2 = p.mu + p.v2 * 0.5;
        // (adjacent interval's grid, this primitive's endpoint in it)
        let sides = [
            (k.checked_sub(1).map(|a| (&grids_p2[a], p1))),
            (if k + 1 < intervals {
                Some((&grids_p1[k + 1], p2))
            } else {
                None
            }),
        ];
        for side in sides.into_iter().flatten() {
            let (grid, at) = side;
            let Some(j) = grid.nearest(&at, radius) else {
                continue;
            };
            let j = j as usize;
            let q = &scene.prims[j];
            let color_dist = (scene.prims[i].sh[0] - q.sh[0]).norm();
            if color_dist > cfg.color_tol || q.v2.norm() > vel_max {
                continue;
            }
            let union = (spans[i].0.min(spans[j].0), spans[i].1.max(spans[j].1));
            spans[i] = union;
            spans[j] = union;
            matched_by[j] += 1;
        }
    }

    let mut stretched = 0usize;
    for i in 0..n {
        if spans[i] != original[i] {
            stretched += 1;
            set_frame_span(&mut scene.prims[i], spans[i]);
        }
    }

    // Prune pass: k primitives matched me ⇒ k+1 copies of the same content
    // exist, keep each with probability 1/(k+1).
    let mut kept = Vec::with_capacity(n);
    for (i, &k) in matched_by.iter().enumerate() {
        let keep = k == 0 || rng.gen::<f32>() >= 1.0 - 1.0 / (k as f32 + 1.0);
        if keep {
            kept.push(i);
        }
    }
    let pruned = n - kept.len();
    if pruned > 0 {
        let mut idx = 0usize;
        let mut keep_iter = kept.iter().peekable();
        scene.prims.retain(|_| {
            let keep = keep_iter.peek() == Some(&&idx);
            if keep {
                keep_iter.next();
            }
            idx += 1;
            keep
        });
    }

    StretchStats {
        stretched,
        pruned,
        kept,
    }
}

/// Duration-weighted sampling score s = σ / (τ_l + τ_r): opacity discounted
/// by how many grid intervals the primitive covers (normalized units, so the
/// duration of a fresh window is exactly 1).
pub fn sampling_score(p: &Primitive<f32>) -> f32 {
    let duration = p.tau_l + p.tau_r;
    debug_assert!(duration > 0.0, "zero-duration window");
    p.opacity() / duration
}

/// Opacity and scale correction for splitting one primitive into `n` copies
/// (f64 for stability at extreme logits). Returns the new opacity logit and
/// the multiplier for the linear scales.
fn split_params(opacity_logit: f32, n: usize) -> (f32, f64) {
    let logit = opacity_logit as f64;
    let sigma = 1.0 / (1.0 + (-logit).exp());
    // ln(1−σ) = −softplus(logit), computed without forming 1−σ.
    let ln_one_minus = -(logit.max(0.0) + (-logit.abs()).exp().ln_1p());
    let ln_one_minus_new = ln_one_minus / n as f64;
    let sigma_new = -ln_one_minus_new.exp_m1();
    let new_logit = (sigma_new.ln() - ln_one_minus_new) as f32;

    // Σ_{i=1..n} C(n,i) (−1)^{i+1} σ′^i / √i via the incremental product
    // c_i = C(n,i) σ′^i, bounded by the largest binomial term. Enormous clone
    // groups are capped; the correction differs negligibly beyond that.
    let n_eff = n.min(300);
    let mut c = n_eff as f64 * sigma_new; // c_1
    let mut denom = c; // i = 1 term
    let mut sign = -1.0;
    for i in 1..n_eff {
        c *= sigma_new * (n_eff - i) as f64 / (i + 1) as f64;
        denom += sign * c / ((i + 1) as f64).sqrt();
        sign = -sign;
    }
    (new_logit, sigma / denom.max(1e-300))
}

/// One relocation event: every primitive with σ < `min_opacity` adopts the
/// post-split parameter vector of an alive target sampled ∝ sampling score.
/// Primitive count never changes. With no alive primitive the event warns
/// and does nothing.
pub fn mcmc_relocate(
    scene: &mut Scene<f32>,
    min_opacity: f32,
    rng: &mut impl Rng,
) -> RelocateStats {
    let mut dead = Vec::new();
    let mut alive = Vec::new();
    for (i, p) in scene.prims.iter().enumerate() {
        if p.opacity() < min_opacity {
            dead.push(i);
        } else {
            alive.push(i);
        }
    }
    if dead.is_empty() {
        return RelocateStats {
            relocated: 0,
            touched: Vec::new(),
            clones: Vec::new(),
            no_alive: false,
        };
    }
    if alive.is_empty() {
        eprintln!(
            "warning: relocation skipped, all {} primitives below opacity {}",
            scene.prims.len(),
            min_opacity
        );
        return RelocateStats {
            relocated: 0,
            touched: Vec::new(),
            clones: Vec::new(),
            no_alive: true,
        };
    }

    let weights: Vec<f32> = alive
        .iter()
        .map(|&i| sampling_score(&scene.prims[i]))
        .collect();
    let dist = WeightedIndex::new(&weights).expect("alive scores are positive");

    // targets grouped so a target picked n times is split once into n+1 copies
    let mut clones_of: HashMap<usize, Vec<usize>> = HashMap::new();
    for &d in &dead {
        let target = alive[dist.sample(rng)];
        clones_of.entry(target).or_default().push(d);
    }
    let mut targets: Vec<usize> = clones_of.keys().copied().collect();
    targets.sort_unstable();

    let mut touched = Vec::new();
    for t in targets {
        let clones = &clones_of[&t];
        let (new_logit, scale_ratio) = split_params(scene.prims[t].opacity_logit, clones.len() + 1);
        let ln_ratio = (scale_ratio.ln()) as f32;
        scene.prims[t].opacity_logit = new_logit;
        scene.prims[t].log_scale += Vector3::from_element(ln_ratio);
        let stamp = scene.prims[t].clone();
        touched.push(t);
        for &c in clones {
            scene.prims[c] = stamp.clone();
            touched.push(c);
        }
    }
    touched.sort_unstable();

    RelocateStats {
        relocated: dead.len(),
        touched,
        clones: dead,
        no_alive: false,
    }
}
