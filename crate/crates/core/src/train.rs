//! Training loop: triple rendering, bidirectional flow supervision,
//! regularizers, dual adaptive-moment optimizers, and cadenced density
//! control.
//!
//! Every iteration samples one (camera, frame) pair uniformly and optimizes
//!
//!     L = Σ_renders [(1−λ_dssim)·L1 + λ_dssim·(1−SSIM)]
//!       + λ_flow · Σ_terms L1(flow)
//!       + λ_op · mean(σ) + λ_scale · mean(exp(log_scale))
//!
//! Interior frames issue three photometric renders — all primitives, the
//! fading-out set, and the fading-in set, the latter two with crossfade
//! compensation — so each temporal half is forced to explain the frame on
//! its own. Boundary frames issue a single uncompensated render. Flow
//! supervision renders the projected control-point displacements of both
//! sets in both time directions and compares them with the ground-truth
//! flow fields wherever those exist; its gradients reach only the trajectory
//! parameters (μ, v₁, v₂, v₃) and are applied by a second optimizer with the
//! high decaying learning rate that trajectory alignment needs.
//!
//! Two optimizer instances hold per-parameter first/second moments
//! (β₁ = 0.9, β₂ = 0.999, ε = 1e-15). Learning rates are constant early and
//! decay exponentially late: the flow rate from `flow_lr_init` toward
//! `flow_lr_final` between `flow_decay_start_iter` and `total_iters`, all
//! other groups to 1% of their base between `global_decay_start_iter` and
//! `total_iters`. Density control fires on fixed cadences (stretching before
//! relocation when both land on one iteration); pruning remaps moment
//! buffers, relocation zeroes the moments of every touched primitive.
//!
//! The loop is bit-deterministic for a fixed seed: sampling, density events
//! and rasterization all follow fixed orders.

use nalgebra::{Vector3, Vector4};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bundle::FrameBundle;
use crate::density::{dynamic_stretch, mcmc_relocate, StretchConfig};
use crate::error::{Error, Result};
use crate::losses::{flow_loss, rgb_loss};
use crate::render::{
    render_with, Channel, FlowDirection, GradientBuffer, Group, RasterSettings, RenderRequest,
};
use crate::scene::{sh_coeff_count, Scene};
use crate::spline::TrajectoryMode;

pub const ADAM_BETA1: f32 = 0.9;
pub const ADAM_BETA2: f32 = 0.999;
pub const ADAM_EPS: f32 = 1e-15;

/// Base learning rate per parameter group (the flow optimizer has its own
/// schedule on top of the trajectory groups).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LrTable {
    pub mu: f32,
    pub vel: f32,
    pub log_scale: f32,
    pub rot: f32,
    pub sh: f32,
    pub opacity: f32,
}

impl Default for LrTable {
    fn default() -> Self {
        LrTable {
            mu: 2e-3,
            vel: 2e-3,
            log_scale: 5e-3,
            rot: 2e-3,
            sh: 5e-3,
            opacity: 5e-2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub total_iters: u32,
    pub flow_lr_init: f32,
    pub flow_lr_final: f32,
    pub flow_decay_start_iter: u32,
    pub global_decay_start_iter: u32,
    pub lambda_dssim: f32,
    pub lambda_flow: f32,
    pub lambda_opacity_reg: f32,
    pub lambda_scale_reg: f32,
    pub stretch_every: u32,
    pub relocate_every: u32,
    pub min_opacity: f32,
    pub gamma: f32,
    pub seed: u64,
    // ablation switches
    pub enable_flow: bool,
    pub enable_triple: bool,
    pub enable_stretch: bool,
    pub trajectory_mode: TrajectoryMode,
    /// Perturb relocated copies with isotropic noise scaled by their mean
    /// linear scale. Off by default; relocation alone matches the reference
    /// behaviour.
    pub relocation_noise: bool,
    pub lr: LrTable,
    pub stretch: StretchConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            total_iters: 20_000,
            flow_lr_init: 0.5,
            flow_lr_final: 1e-6,
            flow_decay_start_iter: 12_000,
            global_decay_start_iter: 18_000,
            lambda_dssim: 0.2,
            lambda_flow: 0.05,
            lambda_opacity_reg: 0.01,
            lambda_scale_reg: 0.1,
            stretch_every: 3_000,
            relocate_every: 100,
            min_opacity: 0.01,
            gamma: 0.005,
            seed: 0,
            enable_flow: true,
            enable_triple: true,
            enable_stretch: true,
            trajectory_mode: TrajectoryMode::Spline,
            relocation_noise: false,
            lr: LrTable::default(),
            stretch: StretchConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Desk-scale run: every schedule shrunk 10× with ratios preserved
    /// (stretching at 15% intervals, flow decay from 60% of training).
    pub fn desk() -> Self {
        TrainConfig {
            total_iters: 2_000,
            flow_decay_start_iter: 1_200,
            global_decay_start_iter: 1_800,
            stretch_every: 300,
            // Desk scenes span ~2 world units, so the reference flow rate
            // (0.5/step under Adam) would swing trajectories across a
            // quarter of the scene per step. Scaled to stay sub-pixel.
            flow_lr_init: 0.01,
            // Post-training merge gates: optimization wobbles per-interval
            // copies of the same static surface patch apart in position,
            // appearance, and velocity, so the exact-duplicate defaults of
            // StretchConfig never fire on a trained scene. These admit the
            // observed drift while still rejecting texture-scale contrast
            // (checker cells sit ≈ 1.8 apart in DC units) and genuinely
            // moving primitives (an order of magnitude above vel_tol).
            stretch: crate::density::StretchConfig {
                color_tol: 1.0,
                vel_tol: 0.015,
                nn_radius: 0.10,
            },
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let lambdas = [
            ("lambda_dssim", self.lambda_dssim),
            ("lambda_flow", self.lambda_flow),
            ("lambda_opacity_reg", self.lambda_opacity_reg),
            ("lambda_scale_reg", self.lambda_scale_reg),
        ];
        for (name, l) in lambdas {
            if !(l >= 0.0) {
                return Err(Error::Config(format!("{name} must be ≥ 0, got {l}")));
            }
        }
        if self.stretch_every < 1 || self.relocate_every < 1 {
            return Err(Error::Config(format!(
                "cadences must be ≥ 1, got stretch_every={} relocate_every={}",
                self.stretch_every, self.relocate_every
            )));
        }
        if self.total_iters > 0 && self.flow_decay_start_iter >= self.total_iters {
            return Err(Error::Config(format!(
                "flow_decay_start_iter ({}) must be < total_iters ({})",
                self.flow_decay_start_iter, self.total_iters
            )));
        }
        if !(self.flow_lr_init > 0.0 && self.flow_lr_final > 0.0) {
            return Err(Error::Config("flow learning rates must be positive".into()));
        }
        if !(self.gamma > 0.0) {
            return Err(Error::Config(format!("gamma must be > 0, got {}", self.gamma)));
        }
        self.stretch.validate()
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text)
            .map_err(|e| Error::Config(format!("train config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Per-group learning rates at one iteration (0-based).
pub fn lr_schedule(iter: u32, cfg: &TrainConfig) -> (f32, f32) {
    let total = cfg.total_iters.max(1);
    let flow = if iter < cfg.flow_decay_start_iter {
        cfg.flow_lr_init
    } else {
        let span = (total - cfg.flow_decay_start_iter) as f32;
        let s = (iter + 1 - cfg.flow_decay_start_iter) as f32 / span;
        cfg.flow_lr_init * (cfg.flow_lr_final / cfg.flow_lr_init).powf(s)
    };
    let global = if iter < cfg.global_decay_start_iter || cfg.global_decay_start_iter >= total {
        1.0
    } else {
        let span = (total - cfg.global_decay_start_iter) as f32;
        let s = (iter + 1 - cfg.global_decay_start_iter) as f32 / span;
        0.01f32.powf(s)
    };
    (global, flow)
}

/// First/second adaptive moments shaped like a gradient buffer.
struct Adam {
    m: GradientBuffer<f32>,
    v: GradientBuffer<f32>,
    step: u64,
}

/// Single-scalar update: m, v are the running moments, p the parameter.
#[inline]
fn adam_scalar(m: &mut f32, v: &mut f32, p: &mut f32, g: f32, lr: f32, c: (f32, f32)) {
    *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
    *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
    let mhat = *m / c.0;
    let vhat = *v / c.1;
    *p -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
}

#[inline]
fn adam_vec3(
    m: &mut Vector3<f32>,
    v: &mut Vector3<f32>,
    p: &mut Vector3<f32>,
    g: &Vector3<f32>,
    lr: f32,
    c: (f32, f32),
) {
    for k in 0..3 {
        adam_scalar(&mut m[k], &mut v[k], &mut p[k], g[k], lr, c);
    }
}

#[inline]
fn adam_vec4(
    m: &mut Vector4<f32>,
    v: &mut Vector4<f32>,
    p: &mut Vector4<f32>,
    g: &Vector4<f32>,
    lr: f32,
    c: (f32, f32),
) {
    for k in 0..4 {
        adam_scalar(&mut m[k], &mut v[k], &mut p[k], g[k], lr, c);
    }
}

impl Adam {
    fn new(n: usize, sh_coeffs: usize) -> Self {
        Adam {
            m: GradientBuffer::zeros(n, sh_coeffs),
            v: GradientBuffer::zeros(n, sh_coeffs),
            step: 0,
        }
    }

    fn bias_corrections(&self) -> (f32, f32) {
        let t = self.step as i32;
        (1.0 - ADAM_BETA1.powi(t), 1.0 - ADAM_BETA2.powi(t))
    }

    /// One update of every optimizable group from photometric gradients.
    fn step_all(
        &mut self,
        scene: &mut Scene<f32>,
        g: &GradientBuffer<f32>,
        lr: &LrTable,
        scale: f32,
    ) {
        self.step += 1;
        let c = self.bias_corrections();
        let coeffs = self.m.sh_coeffs;
        for (i, p) in scene.prims.iter_mut().enumerate() {
            adam_vec3(&mut self.m.d_mu[i], &mut self.v.d_mu[i], &mut p.mu, &g.d_mu[i], lr.mu * scale, c);
            adam_vec3(&mut self.m.d_v1[i], &mut self.v.d_v1[i], &mut p.v1, &g.d_v1[i], lr.vel * scale, c);
            adam_vec3(&mut self.m.d_v2[i], &mut self.v.d_v2[i], &mut p.v2, &g.d_v2[i], lr.vel * scale, c);
            adam_vec3(&mut self.m.d_v3[i], &mut self.v.d_v3[i], &mut p.v3, &g.d_v3[i], lr.vel * scale, c);
            adam_vec3(
                &mut self.m.d_log_scale[i],
                &mut self.v.d_log_scale[i],
                &mut p.log_scale,
                &g.d_log_scale[i],
                lr.log_scale * scale,
                c,
            );
            adam_vec4(
                &mut self.m.d_rot_c0[i],
                &mut self.v.d_rot_c0[i],
                &mut p.rot_c0,
                &g.d_rot_c0[i],
                lr.rot * scale,
                c,
            );
            adam_vec4(
                &mut self.m.d_rot_c1[i],
                &mut self.v.d_rot_c1[i],
                &mut p.rot_c1,
                &g.d_rot_c1[i],
                lr.rot * scale,
                c,
            );
            adam_scalar(
                &mut self.m.d_opacity[i],
                &mut self.v.d_opacity[i],
                &mut p.opacity_logit,
                g.d_opacity[i],
                lr.opacity * scale,
                c,
            );
            for j in 0..coeffs {
                let gi = i * coeffs + j;
                adam_vec3(
                    &mut self.m.d_sh[gi],
                    &mut self.v.d_sh[gi],
                    &mut p.sh[j],
                    &g.d_sh[gi],
                    lr.sh * scale,
                    c,
                );
            }
        }
    }

    /// One update of the trajectory groups only (flow supervision path).
    fn step_trajectory(&mut self, scene: &mut Scene<f32>, g: &GradientBuffer<f32>, lr: f32) {
        self.step += 1;
        let c = self.bias_corrections();
        for (i, p) in scene.prims.iter_mut().enumerate() {
            adam_vec3(&mut self.m.d_mu[i], &mut self.v.d_mu[i], &mut p.mu, &g.d_mu[i], lr, c);
            adam_vec3(&mut self.m.d_v1[i], &mut self.v.d_v1[i], &mut p.v1, &g.d_v1[i], lr, c);
            adam_vec3(&mut self.m.d_v2[i], &mut self.v.d_v2[i], &mut p.v2, &g.d_v2[i], lr, c);
            adam_vec3(&mut self.m.d_v3[i], &mut self.v.d_v3[i], &mut p.v3, &g.d_v3[i], lr, c);
        }
    }

    /// Keeps only the moments of surviving primitives, in `kept` order.
    fn remap(&mut self, kept: &[usize]) {
        fn take<T: Copy>(v: &mut Vec<T>, kept: &[usize]) {
            *v = kept.iter().map(|&i| v[i]).collect();
        }
        fn take_blocks<T: Copy>(v: &mut Vec<T>, kept: &[usize], block: usize) {
            let mut out = Vec::with_capacity(kept.len() * block);
            for &i in kept {
                out.extend_from_slice(&v[i * block..(i + 1) * block]);
            }
            *v = out;
        }
        for buf in [&mut self.m, &mut self.v] {
            take(&mut buf.d_mu, kept);
            take(&mut buf.d_v1, kept);
            take(&mut buf.d_v2, kept);
            take(&mut buf.d_v3, kept);
            take(&mut buf.d_log_scale, kept);
            take(&mut buf.d_rot_c0, kept);
            take(&mut buf.d_rot_c1, kept);
            take(&mut buf.d_opacity, kept);
            let coeffs = buf.sh_coeffs;
            take_blocks(&mut buf.d_sh, kept, coeffs);
        }
    }

    /// Zeroes the moments of rewritten primitives.
    fn reset(&mut self, touched: &[usize]) {
        for buf in [&mut self.m, &mut self.v] {
            for &i in touched {
                buf.d_mu[i] = Vector3::zeros();
                buf.d_v1[i] = Vector3::zeros();
                buf.d_v2[i] = Vector3::zeros();
                buf.d_v3[i] = Vector3::zeros();
                buf.d_log_scale[i] = Vector3::zeros();
                buf.d_rot_c0[i] = Vector4::zeros();
                buf.d_rot_c1[i] = Vector4::zeros();
                buf.d_opacity[i] = 0.0;
                let coeffs = buf.sh_coeffs;
                for j in 0..coeffs {
                    buf.d_sh[i * coeffs + j] = Vector3::zeros();
                }
            }
        }
    }
}

/// Loss terms of one photometric pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TripleLosses {
    pub rgb_all: f32,
    pub rgb_prev: f32,
    pub rgb_next: f32,
    /// Renders issued: 1 at boundary frames, 3 interior.
    pub renders: usize,
}

/// Photometric step at one (camera, frame): the all-primitives render plus,
/// for interior frames, the compensated fading-out and fading-in renders,
/// each scored against the same training image.
pub fn triple_render_step(
    scene: &Scene<f32>,
    bundle: &FrameBundle,
    cam_idx: usize,
    frame: usize,
    cfg: &TrainConfig,
    settings: &RasterSettings,
    grads: &mut GradientBuffer<f32>,
) -> Result<TripleLosses> {
    let cam = &bundle.cameras[cam_idx];
    let target = bundle.image(cam_idx, frame);
    let (w, h) = (cam.width as usize, cam.height as usize);
    let t = frame as f32;
    let lambda = cfg.lambda_dssim;
    let interior = frame > 0 && frame + 1 < bundle.frame_count();

    let mut run = |group: Group, compensate: bool| -> Result<f32> {
        let req = RenderRequest {
            t,
            group,
            channel: Channel::Rgb,
            compensate,
            mode: cfg.trajectory_mode,
            gamma: cfg.gamma,
        };
        let (_, loss, buf) = render_with(scene, cam, &req, settings, |out| {
            match rgb_loss(&out.values, target, w, h, None, lambda) {
                Ok(lg) => (lg.grad, Ok(lg.loss)),
                Err(e) => (vec![0.0; out.values.len()], Err(e)),
            }
        })?;
        grads.accumulate(&buf);
        loss
    };

    let rgb_all = run(Group::All, false)?;
    let (mut rgb_prev, mut rgb_next) = (0.0, 0.0);
    let mut renders = 1;
    if interior && cfg.enable_triple {
        rgb_prev = run(Group::PrevOf(frame as u32), true)?;
        rgb_next = run(Group::NextOf(frame as u32), true)?;
        renders = 3;
    }
    Ok(TripleLosses {
        rgb_all,
        rgb_prev,
        rgb_next,
        renders,
    })
}

/// Flow-supervision step at one (camera, frame): for each side's group,
/// render the projected displacement field forward and backward in time and
/// L1-compare with the matching ground-truth flow where coverage is solid.
/// Terms whose ground-truth direction does not exist (grid edges, missing
/// files) are skipped. Returns (weighted loss, term count); `grads` receives
/// trajectory gradients only.
pub fn flow_supervision_step(
    scene: &Scene<f32>,
    bundle: &FrameBundle,
    cam_idx: usize,
    frame: usize,
    cfg: &TrainConfig,
    settings: &RasterSettings,
    grads: &mut GradientBuffer<f32>,
) -> Result<(f32, usize)> {
    let cam = &bundle.cameras[cam_idx];
    let t = frame as f32;
    let lambda = cfg.lambda_flow;
    let mut total = 0.0;
    let mut terms = 0;

    let groups = [
        (frame >= 1).then(|| Group::PrevOf(frame as u32)),
        (frame + 1 < bundle.frame_count()).then(|| Group::NextOf(frame as u32)),
    ];
    for group in groups.into_iter().flatten() {
        for dir in [FlowDirection::Forward, FlowDirection::Backward] {
            let gt = match dir {
                FlowDirection::Forward => bundle.fwd_flow(cam_idx, frame),
                FlowDirection::Backward => bundle.bwd_flow(cam_idx, frame),
            };
            let Some(gt) = gt else {
                continue;
            };
            let req = RenderRequest {
                t,
                group,
                channel: Channel::Flow(dir),
                compensate: true,
                mode: cfg.trajectory_mode,
                gamma: cfg.gamma,
            };
            let (_, loss, buf) = render_with(scene, cam, &req, settings, |out| {
                match flow_loss(&out.values, gt, &out.alpha) {
                    Ok(fl) => {
                        let grad = fl.grad.iter().map(|g| g * lambda).collect();
                        (grad, Ok(lambda * fl.loss))
                    }
                    Err(e) => (vec![0.0; out.values.len()], Err(e)),
                }
            })?;
            total += loss?;
            terms += 1;
            grads.accumulate(&buf);
        }
    }
    grads.mask_to_trajectory();
    Ok((total, terms))
}

/// λ_op · mean(σ) + λ_scale · mean(exp(log_scale)), means over primitives
/// (and the three scale components). Gradients accumulate into `grads`.
pub fn regularizers(scene: &Scene<f32>, cfg: &TrainConfig, grads: &mut GradientBuffer<f32>) -> f32 {
    let n = scene.prims.len();
    if n == 0 {
        return 0.0;
    }
    let mut op_sum = 0.0f32;
    let mut sc_sum = 0.0f32;
    for (i, p) in scene.prims.iter().enumerate() {
        let sig = p.opacity();
        op_sum += sig;
        // d mean(σ)/d logit = σ(1−σ)/n
        grads.d_opacity[i] += cfg.lambda_opacity_reg * sig * (1.0 - sig) / n as f32;
        let s = p.scales();
        sc_sum += s.sum();
        grads.d_log_scale[i] += s * (cfg.lambda_scale_reg / (3.0 * n as f32));
    }
    cfg.lambda_opacity_reg * op_sum / n as f32 + cfg.lambda_scale_reg * sc_sum / (3.0 * n as f32)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRow {
    pub iter: u32,
    pub total: f32,
    pub rgb_all: f32,
    pub rgb_prev: f32,
    pub rgb_next: f32,
    pub flow: f32,
    pub reg: f32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventRow {
    pub iter: u32,
    pub stretched: usize,
    pub pruned: usize,
    pub relocated: usize,
}

pub struct TrainResult {
    pub scene: Scene<f32>,
    pub losses: Vec<LossRow>,
    pub events: Vec<EventRow>,
}

pub fn loss_csv(rows: &[LossRow]) -> String {
    let mut out = String::from("iter,total,rgb_all,rgb_prev,rgb_next,flow,reg\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.iter, r.total, r.rgb_all, r.rgb_prev, r.rgb_next, r.flow, r.reg
        ));
    }
    out
}

pub fn event_csv(rows: &[EventRow]) -> String {
    let mut out = String::from("iter,stretched_count,pruned_count,relocated_count\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.iter, r.stretched, r.pruned, r.relocated
        ));
    }
    out
}

fn check_finite(iter: u32, term: &'static str, value: f32) -> Result<f32> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFiniteLoss {
            iter,
            term,
            value: value as f64,
        })
    }
}

/// Full optimization run. Deterministic for a fixed seed: two identical
/// calls produce bit-identical loss histories and scenes.
pub fn train(mut scene: Scene<f32>, bundle: &FrameBundle, cfg: &TrainConfig) -> Result<TrainResult> {
    cfg.validate()?;
    let grid = bundle.grid()?;
    if grid.frame_count != scene.grid.frame_count {
        return Err(Error::Contract(format!(
            "scene grid has {} frames but the bundle has {}",
            scene.grid.frame_count, grid.frame_count
        )));
    }
    let settings = RasterSettings::default();
    let coeffs = sh_coeff_count(scene.sh_degree);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut main_opt = Adam::new(scene.prims.len(), coeffs);
    let mut flow_opt = Adam::new(scene.prims.len(), coeffs);
    let mut losses = Vec::with_capacity(cfg.total_iters as usize);
    let mut events = Vec::new();
    let n_cams = bundle.cameras.len();
    let n_frames = bundle.frame_count();

    for it in 0..cfg.total_iters {
        let cam_idx = rng.gen_range(0..n_cams);
        let frame = rng.gen_range(0..n_frames);
        let iter_no = it + 1;

        let mut grads = GradientBuffer::zeros(scene.prims.len(), coeffs);
        let triple = triple_render_step(&scene, bundle, cam_idx, frame, cfg, &settings, &mut grads)?;
        check_finite(iter_no, "rgb_all", triple.rgb_all)?;
        check_finite(iter_no, "rgb_prev", triple.rgb_prev)?;
        check_finite(iter_no, "rgb_next", triple.rgb_next)?;

        let mut flow_term = 0.0;
        let mut flow_grads = GradientBuffer::zeros(scene.prims.len(), coeffs);
        if cfg.enable_flow {
            let (f, _) =
                flow_supervision_step(&scene, bundle, cam_idx, frame, cfg, &settings, &mut flow_grads)?;
            flow_term = check_finite(iter_no, "flow", f)?;
        }

        let reg = check_finite(iter_no, "reg", regularizers(&scene, cfg, &mut grads))?;

        let (global_scale, flow_lr) = lr_schedule(it, cfg);
        main_opt.step_all(&mut scene, &grads, &cfg.lr, global_scale);
        if cfg.enable_flow {
            flow_opt.step_trajectory(&mut scene, &flow_grads, flow_lr);
        }

        let total = triple.rgb_all + triple.rgb_prev + triple.rgb_next + flow_term + reg;
        losses.push(LossRow {
            iter: iter_no,
            total,
            rgb_all: triple.rgb_all,
            rgb_prev: triple.rgb_prev,
            rgb_next: triple.rgb_next,
            flow: flow_term,
            reg,
        });

        // density control; stretching first when both cadences coincide
        let mut event = EventRow {
            iter: iter_no,
            stretched: 0,
            pruned: 0,
            relocated: 0,
        };
        let mut fired = false;
        if cfg.enable_stretch && iter_no % cfg.stretch_every == 0 {
            let stats = dynamic_stretch(&mut scene, &cfg.stretch, &mut rng);
            main_opt.remap(&stats.kept);
            flow_opt.remap(&stats.kept);
            event.stretched = stats.stretched;
            event.pruned = stats.pruned;
            fired = true;
        }
        if iter_no % cfg.relocate_every == 0 {
            let stats = mcmc_relocate(&mut scene, cfg.min_opacity, &mut rng);
            if cfg.relocation_noise {
                for &i in &stats.clones {
                    let s = scene.prims[i].scales().mean();
                    let noise = Vector3::new(
                        rng.gen::<f32>() * 2.0 - 1.0,
                        rng.gen::<f32>() * 2.0 - 1.0,
                        rng.gen::<f32>() * 2.0 - 1.0,
                    ) * s;
                    scene.prims[i].mu += noise;
                }
            }
            main_opt.reset(&stats.touched);
            flow_opt.reset(&stats.touched);
            event.relocated = stats.relocated;
            fired = true;
        }
        if fired {
            events.push(event);
        }
    }

    Ok(TrainResult {
        scene,
        losses,
        events,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::SplitMeta;
    use crate::camera::Camera;
    use crate::render::render;
    use crate::scene::{Primitive, TimeGrid};

    #[test]
    fn desk_preset_keeps_schedule_ratios() {
        let desk = TrainConfig::desk();
        desk.validate().unwrap();
        assert_eq!(desk.total_iters, 2_000);
        assert_eq!(desk.flow_decay_start_iter, 1_200);
        assert_eq!(desk.global_decay_start_iter, 1_800);
        assert_eq!(desk.stretch_every, 300);
        assert_eq!(desk.relocate_every, 100);
        let paper = TrainConfig::default();
        assert_eq!(
            desk.flow_decay_start_iter * paper.total_iters,
            paper.flow_decay_start_iter * desk.total_iters
        );
    }

    #[test]
    fn bad_configs_are_rejected() {
        let mut c = TrainConfig::desk();
        c.lambda_flow = -0.1;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::desk();
        c.relocate_every = 0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::desk();
        c.flow_decay_start_iter = c.total_iters;
        assert!(c.validate().is_err());
    }

    #[test]
    fn toml_round_trip_preserves_every_field() {
        let mut cfg = TrainConfig::desk();
        cfg.lambda_flow = 0.07;
        cfg.trajectory_mode = TrajectoryMode::Linear;
        cfg.stretch.nn_radius = 0.02;
        let text = toml::to_string(&cfg).unwrap();
        let back = TrainConfig::from_toml_str(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn partial_toml_fills_defaults() {
        let text = "total_iters = 50\nflow_decay_start_iter = 30\nglobal_decay_start_iter = 40\nseed = 9\n";
        let cfg = TrainConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg.total_iters, 50);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.lambda_dssim, 0.2);
        assert_eq!(cfg.relocate_every, 100);
        // shrinking total_iters alone leaves the default decay start beyond
        // the run, which the schedule invariant rejects
        assert!(TrainConfig::from_toml_str("total_iters = 50").is_err());
    }

    #[test]
    fn flow_lr_starts_high_and_lands_near_final() {
        let cfg = TrainConfig::default();
        let (_, f0) = lr_schedule(0, &cfg);
        assert_eq!(f0, 0.5);
        let (_, f_last) = lr_schedule(cfg.total_iters - 1, &cfg);
        assert!(f_last <= 2.0 * cfg.flow_lr_final, "{f_last}");
        let mut prev = f32::INFINITY;
        for it in 0..cfg.total_iters {
            let (g, f) = lr_schedule(it, &cfg);
            assert!(f <= prev + 1e-12);
            assert!((0.0..=1.0).contains(&g));
            prev = f;
        }
    }

    #[test]
    fn global_lr_decays_to_one_percent() {
        let cfg = TrainConfig::desk();
        let (g, _) = lr_schedule(cfg.global_decay_start_iter - 1, &cfg);
        assert_eq!(g, 1.0);
        let (g, _) = lr_schedule(cfg.total_iters - 1, &cfg);
        assert!((g - 0.01).abs() < 0.002, "{g}");
    }

    fn tiny_grid() -> TimeGrid {
        TimeGrid::new(3)
    }

    fn two_cam_ring() -> Vec<Camera<f32>> {
        vec![
            Camera::look_at(
                Vector3::new(-3.0, 0.0, 0.0),
                Vector3::zeros(),
                24.0,
                24.0,
                16,
                16,
            ),
            Camera::look_at(
                Vector3::new(0.0, -3.0, 0.5),
                Vector3::zeros(),
                24.0,
                24.0,
                16,
                16,
            ),
        ]
    }

    fn blobby_scene(offset: f32) -> Scene<f32> {
        let grid = tiny_grid();
        let mut scene = Scene::new(grid, 0);
        for k in 0..2u32 {
            for (j, base) in [
                Vector3::new(0.0 + offset, 0.1, 0.0),
                Vector3::new(0.2, -0.15 + offset, 0.1),
            ]
            .into_iter()
            .enumerate()
            {
                let mut p = Primitive::fresh(k, base, 0);
                p.log_scale = Vector3::from_element(-1.6);
                p.opacity_logit = 1.5;
                p.sh[0] = Vector3::new(0.9, -0.4, 0.3) * (1.0 + j as f32);
                p.v2 = Vector3::new(0.05, 0.0, 0.0);
                scene.prims.push(p);
            }
        }
        scene
    }

    /// Bundle whose images are renders of `gt`, so losses against `gt`
    /// itself are 0 and against perturbations small but positive.
    fn render_bundle(gt: &Scene<f32>) -> FrameBundle {
        let cams = two_cam_ring();
        let settings = RasterSettings::default();
        let mut images = Vec::new();
        for cam in &cams {
            for f in 0..3 {
                let req =
                    RenderRequest::rgb_all(f as f32, 0.005, TrajectoryMode::Spline);
                let out = render(gt, cam, &req, &settings).unwrap();
                images.push(out.values);
            }
        }
        FrameBundle {
            cameras: cams,
            width: 16,
            height: 16,
            meta: SplitMeta {
                t_start: 0.0,
                delta_t: 1.0,
                frame_times: vec![0.0, 1.0, 2.0],
            },
            images,
            fwd_flows: vec![None; 4],
            bwd_flows: vec![None; 4],
            masks: vec![None; 6],
            points: Vec::new(),
        }
    }

    #[test]
    fn zero_iteration_train_returns_the_scene_unchanged() {
        let scene = blobby_scene(0.0);
        let bundle = render_bundle(&scene);
        let mut cfg = TrainConfig::desk();
        cfg.total_iters = 0;
        cfg.flow_decay_start_iter = 0;
        cfg.global_decay_start_iter = 0;
        let result = train(scene.clone(), &bundle, &cfg).unwrap();
        assert_eq!(result.scene, scene);
        assert!(result.losses.is_empty());
    }

    #[test]
    fn boundary_frames_render_once_and_interior_thrice() {
        let scene = blobby_scene(0.0);
        let bundle = render_bundle(&scene);
        let cfg = TrainConfig::desk();
        let settings = RasterSettings::default();
        let coeffs = 1;
        for (frame, expect) in [(0usize, 1usize), (1, 3), (2, 1)] {
            let mut grads = GradientBuffer::zeros(scene.prims.len(), coeffs);
            let t =
                triple_render_step(&scene, &bundle, 0, frame, &cfg, &settings, &mut grads).unwrap();
            assert_eq!(t.renders, expect, "frame {frame}");
            if expect == 1 {
                assert_eq!(t.rgb_prev, 0.0);
                assert_eq!(t.rgb_next, 0.0);
            }
        }
    }

    #[test]
    fn perfect_reconstruction_has_near_zero_photometric_loss() {
        let scene = blobby_scene(0.0);
        let bundle = render_bundle(&scene);
        let cfg = TrainConfig::desk();
        let settings = RasterSettings::default();
        let mut grads = GradientBuffer::zeros(scene.prims.len(), 1);
        let t = triple_render_step(&scene, &bundle, 1, 1, &cfg, &settings, &mut grads).unwrap();
        assert!(t.rgb_all < 1e-6, "{}", t.rgb_all);
        // the group renders omit the other half, so they see real loss
        assert!(t.rgb_prev >= 0.0 && t.rgb_next >= 0.0);
    }

    #[test]
    fn flow_terms_follow_grid_edges() {
        let scene = blobby_scene(0.0);
        let mut bundle = render_bundle(&scene);
        // full flow coverage: fwd at frames 0..2, bwd at frames 1..3
        let px = (16 * 16 * 2) as usize;
        bundle.fwd_flows = vec![Some(vec![0.0; px]); 4];
        bundle.bwd_flows = vec![Some(vec![0.0; px]); 4];
        let cfg = TrainConfig::desk();
        let settings = RasterSettings::default();
        for (frame, expect) in [(0usize, 1usize), (1, 4), (2, 1)] {
            let mut grads = GradientBuffer::zeros(scene.prims.len(), 1);
            let (_, terms) =
                flow_supervision_step(&scene, &bundle, 0, frame, &cfg, &settings, &mut grads)
                    .unwrap();
            assert_eq!(terms, expect, "frame {frame}");
        }
        // frame 0 with no forward flow file → no terms at all
        bundle.fwd_flows[0] = None;
        let mut grads = GradientBuffer::zeros(scene.prims.len(), 1);
        let (loss, terms) =
            flow_supervision_step(&scene, &bundle, 0, 0, &cfg, &settings, &mut grads).unwrap();
        assert_eq!(terms, 0);
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn flow_gradients_touch_only_trajectory_parameters() {
        let scene = blobby_scene(0.0);
        let mut bundle = render_bundle(&scene);
        let px = (16 * 16 * 2) as usize;
        bundle.fwd_flows = vec![Some(vec![1.0; px]); 4];
        bundle.bwd_flows = vec![Some(vec![-1.0; px]); 4];
        let cfg = TrainConfig::desk();
        let settings = RasterSettings::default();
        let mut grads = GradientBuffer::zeros(scene.prims.len(), 1);
        let (loss, terms) =
            flow_supervision_step(&scene, &bundle, 0, 1, &cfg, &settings, &mut grads).unwrap();
        assert_eq!(terms, 4);
        assert!(loss > 0.0);
        let moved: f32 = grads.d_mu.iter().chain(&grads.d_v2).map(|g| g.norm()).sum();
        assert!(moved > 0.0, "trajectory gradients expected");
        assert!(grads.d_sh.iter().all(|g| g.norm() == 0.0));
        assert!(grads.d_opacity.iter().all(|&g| g == 0.0));
        assert!(grads.d_log_scale.iter().all(|g| g.norm() == 0.0));
    }

    #[test]
    fn regularizer_value_and_gradients_match_finite_differences() {
        let mut scene = blobby_scene(0.0);
        scene.prims.truncate(2);
        scene.prims[0].opacity_logit = 0.0; // σ = 0.5
        scene.prims[1].opacity_logit = 0.0;
        scene.prims[0].log_scale = Vector3::zeros(); // s = 1
        scene.prims[1].log_scale = Vector3::zeros();
        let cfg = TrainConfig::desk();
        let mut grads = GradientBuffer::zeros(2, 1);
        let val = regularizers(&scene, &cfg, &mut grads);
        assert!((val - (0.01 * 0.5 + 0.1 * 1.0)).abs() < 1e-6, "{val}");

        // doubling all scales doubles the scale term
        for p in &mut scene.prims {
            p.log_scale = Vector3::from_element(2.0f32.ln());
        }
        let mut g2 = GradientBuffer::zeros(2, 1);
        let val2 = regularizers(&scene, &cfg, &mut g2);
        assert!((val2 - (0.01 * 0.5 + 0.2)).abs() < 1e-5, "{val2}");

        // finite differences on one logit and one log-scale entry
        let h = 1e-3;
        let fd = |scene: &Scene<f32>| {
            let mut sink = GradientBuffer::zeros(2, 1);
            regularizers(scene, &cfg, &mut sink)
        };
        let mut sp = scene.clone();
        sp.prims[0].opacity_logit += h;
        let mut sm = scene.clone();
        sm.prims[0].opacity_logit -= h;
        let num = (fd(&sp) - fd(&sm)) / (2.0 * h);
        let mut an = GradientBuffer::zeros(2, 1);
        regularizers(&scene, &cfg, &mut an);
        assert!((num - an.d_opacity[0]).abs() < 1e-4, "{num} vs {}", an.d_opacity[0]);

        let mut sp = scene.clone();
        sp.prims[1].log_scale[2] += h;
        let mut sm = scene.clone();
        sm.prims[1].log_scale[2] -= h;
        let num = (fd(&sp) - fd(&sm)) / (2.0 * h);
        assert!(
            (num - an.d_log_scale[1][2]).abs() < 1e-4,
            "{num} vs {}",
            an.d_log_scale[1][2]
        );
    }

    #[test]
    fn same_seed_runs_are_bit_identical() {
        let gt = blobby_scene(0.0);
        let start = blobby_scene(0.04);
        let bundle = render_bundle(&gt);
        let mut cfg = TrainConfig::desk();
        cfg.total_iters = 25;
        cfg.flow_decay_start_iter = 10;
        cfg.global_decay_start_iter = 20;
        cfg.stretch_every = 11;
        cfg.relocate_every = 7;
        cfg.seed = 42;
        let a = train(start.clone(), &bundle, &cfg).unwrap();
        let b = train(start, &bundle, &cfg).unwrap();
        assert_eq!(a.losses, b.losses);
        assert_eq!(a.scene, b.scene);
        assert_eq!(a.events, b.events);
    }

    #[test]
    fn short_training_reduces_photometric_loss() {
        let gt = blobby_scene(0.0);
        let start = blobby_scene(0.05);
        let bundle = render_bundle(&gt);
        let mut cfg = TrainConfig::desk();
        cfg.total_iters = 120;
        cfg.flow_decay_start_iter = 80;
        cfg.global_decay_start_iter = 100;
        cfg.stretch_every = 1_000; // never fires in 120 iters
        cfg.relocate_every = 1_000;
        cfg.seed = 3;
        let result = train(start, &bundle, &cfg).unwrap();
        let head: f32 = result.losses[..10].iter().map(|r| r.rgb_all).sum::<f32>() / 10.0;
        let tail: f32 = result.losses[result.losses.len() - 10..]
            .iter()
            .map(|r| r.rgb_all)
            .sum::<f32>()
            / 10.0;
        assert!(
            tail < 0.8 * head,
            "rgb_all did not drop: head {head}, tail {tail}"
        );
    }
}
