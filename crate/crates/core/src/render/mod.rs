//! Differentiable tile-based splatter.
//!
//! A render request picks a time, a temporal group, a channel (RGB color or
//! 2D flow features) and optionally opacity compensation. Alpha compositing
//! runs front-to-back per pixel over 16×16 tiles; the per-primitive alpha is
//!
//!   α = min(w_τ · σ · G(pixel), 0.999)
//!
//! with G the projected 2D Gaussian density and w_τ the temporal weight —
//! sigma_tau(t) plain, or min(sigma_tau(t)/sigma_tau(t_anchor), 1) when the
//! crossfade is compensated at a grid frame. Temporal weights are constants
//! in the backward pass; everything else (trajectory, covariance, rotation
//! polynomial, SH color, opacity, flow displacement endpoints) receives
//! analytic gradients.
//!
//! Identical scene + request ⇒ bit-identical output: primitives are depth
//! sorted with an id tie-break, tiles are merged in index order, and thread
//! count never changes any accumulation order.

mod project;
mod raster;
pub mod sh;

pub use project::{jacobian, project_gaussian, project_gaussian_backward, Projection};
pub use raster::RenderGrad;

use nalgebra::{Matrix3, Vector2, Vector3};

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::math::{normalize_backward3, normalize_backward4, quat_to_mat_backward, Real};
use crate::scene::{sh_coeff_count, Primitive, Scene, TimeGrid};
use crate::spline::{
    basis, control_points, local_u, scatter_control_grads, CtrlPt, TrajectoryMode,
};
use crate::topacity::{temporal_opacity, SIGMA_TAU_CULL};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowDirection {
    Forward,
    Backward,
}

/// Temporal membership of a render.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Group {
    All,
    /// Primitives whose window covers [t_{i−1}, t_i]: the set fading out at
    /// frame i.
    PrevOf(u32),
    /// Primitives whose window covers [t_i, t_{i+1}]: the set fading in.
    NextOf(u32),
    /// Primitives natively owning interval k, regardless of stretching.
    Interval(u32),
}

impl Group {
    pub fn validate(&self, grid: &TimeGrid) -> Result<()> {
        let t = grid.frame_count;
        let ok = match *self {
            Group::All => true,
            Group::PrevOf(i) => i >= 1 && i < t,
            Group::NextOf(i) => i + 1 < t,
            Group::Interval(k) => k < grid.intervals(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Contract(format!(
                "group {self:?} out of range for a {t}-frame grid"
            )))
        }
    }

    /// Grid frame at which compensation may anchor.
    pub fn anchor_frame(&self) -> Option<u32> {
        match *self {
            Group::PrevOf(i) | Group::NextOf(i) => Some(i),
            _ => None,
        }
    }

    pub fn contains<T: Real>(&self, p: &Primitive<T>) -> bool {
        match *self {
            Group::All => true,
            Group::PrevOf(i) => p.covers(T::of((i - 1) as f64), T::of(i as f64)),
            Group::NextOf(i) => p.covers(T::of(i as f64), T::of((i + 1) as f64)),
            Group::Interval(k) => p.interval == k,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    Rgb,
    Flow(FlowDirection),
}

impl Channel {
    #[inline]
    pub fn count(&self) -> usize {
        match self {
            Channel::Rgb => 3,
            Channel::Flow(_) => 2,
        }
    }
}

/// Flow displacement endpoints for a (group, direction) pair: the fading-out
/// set reports motion from its interval end onward (P2→P3 forward, P2→P1
/// backward); the fading-in set from its interval start (P1→P2, P1→P0).
pub fn flow_pair(group: Group, dir: FlowDirection) -> Result<(CtrlPt, CtrlPt)> {
    match (group, dir) {
        (Group::PrevOf(_), FlowDirection::Forward) => Ok((CtrlPt::P2, CtrlPt::P3)),
        (Group::PrevOf(_), FlowDirection::Backward) => Ok((CtrlPt::P2, CtrlPt::P1)),
        (Group::NextOf(_), FlowDirection::Forward) => Ok((CtrlPt::P1, CtrlPt::P2)),
        (Group::NextOf(_), FlowDirection::Backward) => Ok((CtrlPt::P1, CtrlPt::P0)),
        _ => Err(Error::Contract(format!(
            "flow channel requires a PrevOf/NextOf group, got {group:?}"
        ))),
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RenderRequest<T: Real> {
    /// Normalized time.
    pub t: T,
    pub group: Group,
    pub channel: Channel,
    /// Undo the temporal crossfade at the group's anchor frame.
    pub compensate: bool,
    pub mode: TrajectoryMode,
    /// Temporal-opacity edge sharpness.
    pub gamma: T,
}

impl<T: Real> RenderRequest<T> {
    pub fn rgb_all(t: T, gamma: T, mode: TrajectoryMode) -> Self {
        RenderRequest {
            t,
            group: Group::All,
            channel: Channel::Rgb,
            compensate: false,
            mode,
            gamma,
        }
    }

    pub fn validate(&self, grid: &TimeGrid) -> Result<()> {
        self.group.validate(grid)?;
        if matches!(self.channel, Channel::Flow(_)) {
            flow_pair(self.group, FlowDirection::Forward)?;
        }
        if self.compensate {
            let anchor = self.group.anchor_frame().ok_or_else(|| {
                Error::Contract(format!(
                    "compensation requires a PrevOf/NextOf group, got {:?}",
                    self.group
                ))
            })?;
            if (self.t - T::of(anchor as f64)).abs() > T::of(1e-6) {
                return Err(Error::Contract(format!(
                    "compensated render must evaluate at its anchor frame {anchor}, got t = {}",
                    self.t.to_f64()
                )));
            }
        }
        Ok(())
    }
}

/// Rasterizer knobs. `default()` is the production path; `reference()` is the
/// exhaustive path gradient tests run in f64: no tile culling, no alpha skip,
/// no early stop, so the image is smooth in the parameters wherever the
/// remaining hard thresholds (opacity cap, color clamp) are inactive.
#[derive(Debug, Clone, Copy)]
pub struct RasterSettings {
    pub tile_size: usize,
    pub radius_sigma: f64,
    pub alpha_skip: f64,
    pub alpha_cap: f64,
    pub early_stop: f64,
    pub cov_floor: f64,
    pub near: f64,
    pub exhaustive: bool,
}

impl Default for RasterSettings {
    fn default() -> Self {
        RasterSettings {
            tile_size: 16,
            radius_sigma: 3.0,
            alpha_skip: 1.0 / 255.0,
            alpha_cap: 0.999,
            early_stop: 1e-4,
            cov_floor: 0.3,
            near: 0.01,
            exhaustive: false,
        }
    }
}

impl RasterSettings {
    pub fn reference() -> Self {
        RasterSettings {
            alpha_skip: 0.0,
            early_stop: 0.0,
            exhaustive: true,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput<T: Real> {
    pub width: u32,
    pub height: u32,
    pub channels: usize,
    /// Row-major H×W×C.
    pub values: Vec<T>,
    /// Row-major H×W accumulated alpha.
    pub alpha: Vec<T>,
}

/// One projected, active primitive ready for compositing.
#[derive(Debug, Clone)]
pub(crate) struct ActiveSplat<T: Real> {
    pub prim: u32,
    pub depth: T,
    pub mean2: Vector2<T>,
    pub conic: (T, T, T),
    pub radius: T,
    /// σ · w_τ
    pub w: T,
    pub w_tau: T,
    pub value: [T; 3],
}

/// Per-primitive parameter gradients, index-aligned with the scene.
#[derive(Debug, Clone)]
pub struct GradientBuffer<T: Real> {
    pub sh_coeffs: usize,
    pub d_mu: Vec<Vector3<T>>,
    pub d_v1: Vec<Vector3<T>>,
    pub d_v2: Vec<Vector3<T>>,
    pub d_v3: Vec<Vector3<T>>,
    pub d_log_scale: Vec<Vector3<T>>,
    pub d_rot_c0: Vec<nalgebra::Vector4<T>>,
    pub d_rot_c1: Vec<nalgebra::Vector4<T>>,
    /// n × sh_coeffs RGB triples.
    pub d_sh: Vec<Vector3<T>>,
    pub d_opacity: Vec<T>,
}

impl<T: Real> GradientBuffer<T> {
    pub fn zeros(n: usize, sh_coeffs: usize) -> Self {
        GradientBuffer {
            sh_coeffs,
            d_mu: vec![Vector3::zeros(); n],
            d_v1: vec![Vector3::zeros(); n],
            d_v2: vec![Vector3::zeros(); n],
            d_v3: vec![Vector3::zeros(); n],
            d_log_scale: vec![Vector3::zeros(); n],
            d_rot_c0: vec![nalgebra::Vector4::zeros(); n],
            d_rot_c1: vec![nalgebra::Vector4::zeros(); n],
            d_sh: vec![Vector3::zeros(); n * sh_coeffs],
            d_opacity: vec![T::zero(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.d_mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d_mu.is_empty()
    }

    pub fn accumulate(&mut self, other: &GradientBuffer<T>) {
        debug_assert_eq!(self.len(), other.len());
        for i in 0..self.len() {
            self.d_mu[i] += other.d_mu[i];
            self.d_v1[i] += other.d_v1[i];
            self.d_v2[i] += other.d_v2[i];
            self.d_v3[i] += other.d_v3[i];
            self.d_log_scale[i] += other.d_log_scale[i];
            self.d_rot_c0[i] += other.d_rot_c0[i];
            self.d_rot_c1[i] += other.d_rot_c1[i];
            self.d_opacity[i] += other.d_opacity[i];
        }
        for i in 0..self.d_sh.len() {
            self.d_sh[i] += other.d_sh[i];
        }
    }

    /// Keeps only trajectory gradients (mu, v1..v3); flow supervision updates
    /// nothing else.
    pub fn mask_to_trajectory(&mut self) {
        for g in &mut self.d_log_scale {
            *g = Vector3::zeros();
        }
        for g in &mut self.d_rot_c0 {
            *g = nalgebra::Vector4::zeros();
        }
        for g in &mut self.d_rot_c1 {
            *g = nalgebra::Vector4::zeros();
        }
        for g in &mut self.d_sh {
            *g = Vector3::zeros();
        }
        for g in &mut self.d_opacity {
            *g = T::zero();
        }
    }
}

/// Filters, projects and depth-sorts the primitives touched by a request.
pub(crate) fn prepare<T: Real>(
    scene: &Scene<T>,
    cam: &Camera<T>,
    req: &RenderRequest<T>,
    settings: &RasterSettings,
) -> Result<Vec<ActiveSplat<T>>> {
    req.validate(&scene.grid)?;
    let near = T::of(settings.near);
    let floor = T::of(settings.cov_floor);
    let radius_sigma = T::of(settings.radius_sigma);
    let cull = T::of(SIGMA_TAU_CULL);
    let cam_center = cam.center();
    let anchor = req.group.anchor_frame().map(|i| T::of(i as f64));

    let mut actives = Vec::new();
    for (idx, p) in scene.prims.iter().enumerate() {
        if !req.group.contains(p) {
            continue;
        }
        let s_tau = temporal_opacity(p, &scene.grid, req.t, req.gamma);
        if s_tau <= cull {
            continue;
        }
        let w_tau = if req.compensate {
            let t_anchor = anchor.expect("validated");
            let s_anchor = temporal_opacity(p, &scene.grid, t_anchor, req.gamma);
            if s_anchor.to_f64() <= SIGMA_TAU_CULL {
                return Err(Error::InactivePrimitive {
                    index: idx,
                    t: t_anchor.to_f64(),
                    value: s_anchor.to_f64(),
                });
            }
            (s_tau / s_anchor).min(T::one())
        } else {
            s_tau
        };
        let w = p.opacity() * w_tau;
        if w.to_f64() <= settings.alpha_skip {
            continue;
        }

        let x_world = crate::spline::position_at(p, &scene.grid, req.t, req.mode);
        let t_cam = cam.world_to_cam(x_world);
        if t_cam[2] <= near {
            continue;
        }
        let cov3 = p.covariance_at(idx, req.t)?;
        let proj = project_gaussian(cam, t_cam, &cov3, floor, radius_sigma);

        if !settings.exhaustive {
            let (w_img, h_img) = (T::of(cam.width as f64), T::of(cam.height as f64));
            if proj.mean2[0] + proj.radius < T::zero()
                || proj.mean2[0] - proj.radius > w_img
                || proj.mean2[1] + proj.radius < T::zero()
                || proj.mean2[1] - proj.radius > h_img
            {
                continue;
            }
        }

        let value = match req.channel {
            Channel::Rgb => {
                let dir = (x_world - cam_center).normalize();
                let c = sh::eval(scene.sh_degree, &p.sh, dir);
                [
                    c[0].clamp(T::zero(), T::one()),
                    c[1].clamp(T::zero(), T::one()),
                    c[2].clamp(T::zero(), T::one()),
                ]
            }
            Channel::Flow(dir) => {
                let (from, to) = flow_pair(req.group, dir)?;
                let cp = control_points(p, &scene.grid, req.mode);
                let a = cam.world_to_cam(cp[from.index()]);
                let b = cam.world_to_cam(cp[to.index()]);
                if a[2] <= near || b[2] <= near {
                    continue;
                }
                let d = cam.project_cam(b) - cam.project_cam(a);
                [d[0], d[1], T::zero()]
            }
        };

        actives.push(ActiveSplat {
            prim: idx as u32,
            depth: t_cam[2],
            mean2: proj.mean2,
            conic: proj.conic,
            radius: proj.radius,
            w,
            w_tau,
            value,
        });
    }

    // front-to-back with a stable id tie-break
    actives.sort_unstable_by(|a, b| {
        a.depth
            .partial_cmp(&b.depth)
            .expect("depths are finite")
            .then(a.prim.cmp(&b.prim))
    });
    Ok(actives)
}

pub fn render<T: Real>(
    scene: &Scene<T>,
    cam: &Camera<T>,
    req: &RenderRequest<T>,
    settings: &RasterSettings,
) -> Result<RenderOutput<T>> {
    let actives = prepare(scene, cam, req, settings)?;
    Ok(raster::forward(
        &actives,
        cam.width,
        cam.height,
        req.channel.count(),
        settings,
    ))
}

/// Forward render plus parameter gradients for the scalar Σ upstream ⊙ image.
/// `upstream` is laid out like `RenderOutput::values` (H×W×C).
pub fn render_backward<T: Real>(
    scene: &Scene<T>,
    cam: &Camera<T>,
    req: &RenderRequest<T>,
    settings: &RasterSettings,
    upstream: &[T],
) -> Result<(RenderOutput<T>, GradientBuffer<T>)> {
    let channels = req.channel.count();
    let expect = cam.width as usize * cam.height as usize * channels;
    if upstream.len() != expect {
        return Err(Error::Contract(format!(
            "upstream gradient has {} values, render is {}×{}×{channels} = {expect}",
            upstream.len(),
            cam.width,
            cam.height
        )));
    }
    let (out, _, buf) = render_with(scene, cam, req, settings, |_| (upstream.to_vec(), ()))?;
    Ok((out, buf))
}

/// Forward render, then backward through a loss whose image-space gradient
/// the closure derives from the forward output. Renders the scene exactly
/// once; `f` returns the upstream gradient (H×W×C, like
/// [`RenderOutput::values`]) and an arbitrary carry value (the loss).
pub fn render_with<T: Real, R>(
    scene: &Scene<T>,
    cam: &Camera<T>,
    req: &RenderRequest<T>,
    settings: &RasterSettings,
    f: impl FnOnce(&RenderOutput<T>) -> (Vec<T>, R),
) -> Result<(RenderOutput<T>, R, GradientBuffer<T>)> {
    let channels = req.channel.count();
    let actives = prepare(scene, cam, req, settings)?;
    let out = raster::forward(&actives, cam.width, cam.height, channels, settings);
    let (upstream, carry) = f(&out);
    let expect = cam.width as usize * cam.height as usize * channels;
    if upstream.len() != expect {
        return Err(Error::Contract(format!(
            "upstream gradient has {} values, render is {}×{}×{channels} = {expect}",
            upstream.len(),
            cam.width,
            cam.height
        )));
    }
    let rgrads = raster::backward(&actives, cam.width, cam.height, channels, settings, &upstream);

    let mut buf = GradientBuffer::zeros(scene.len(), sh_coeff_count(scene.sh_degree));
    for (splat, rg) in actives.iter().zip(rgrads.iter()) {
        geometric_backward(scene, cam, req, settings, splat, rg, &mut buf)?;
    }
    Ok((out, carry, buf))
}

/// Chains render-space gradients (mean2, cov2, value, weight) of one splat
/// into its primitive's parameters.
fn geometric_backward<T: Real>(
    scene: &Scene<T>,
    cam: &Camera<T>,
    req: &RenderRequest<T>,
    settings: &RasterSettings,
    splat: &ActiveSplat<T>,
    rg: &RenderGrad<T>,
    buf: &mut GradientBuffer<T>,
) -> Result<()> {
    let idx = splat.prim as usize;
    let p = &scene.prims[idx];
    let grid = &scene.grid;
    let t = req.t;
    let u = local_u(p, t);
    let cp = control_points(p, grid, req.mode);
    let b = basis(u);
    let x_world = cp[0] * b[0] + cp[1] * b[1] + cp[2] * b[2] + cp[3] * b[3];
    let t_cam = cam.world_to_cam(x_world);

    // opacity: α path, w = σ·w_τ with w_τ constant
    let sig = p.opacity();
    buf.d_opacity[idx] += rg.d_w * splat.w_tau * sig * (T::one() - sig);

    let mut d_x = Vector3::zeros();
    let mut d_cp = [Vector3::<T>::zeros(); 4];

    match req.channel {
        Channel::Rgb => {
            let cam_center = cam.center();
            let dir_raw = x_world - cam_center;
            let dir = dir_raw.normalize();
            let bb = sh::basis(scene.sh_degree, dir);
            // redo the clamp decision: gradient is zero on saturated channels
            let pre = sh::eval(scene.sh_degree, &p.sh, dir);
            let mut d_pre = Vector3::zeros();
            for c in 0..3 {
                if pre[c] > T::zero() && pre[c] < T::one() {
                    d_pre[c] = rg.d_value[c];
                }
            }
            let n_coeffs = p.sh.len();
            let mut d_dir = Vector3::zeros();
            let bg = sh::basis_grad(scene.sh_degree, dir);
            for k in 0..n_coeffs {
                buf.d_sh[idx * buf.sh_coeffs + k] += d_pre * bb[k];
                d_dir += bg[k] * p.sh[k].dot(&d_pre);
            }
            d_x += normalize_backward3(dir_raw, d_dir);
        }
        Channel::Flow(dir) => {
            let (from, to) = flow_pair(req.group, dir)?;
            let d_feat = Vector2::new(rg.d_value[0], rg.d_value[1]);
            let a_cam = cam.world_to_cam(cp[from.index()]);
            let b_cam = cam.world_to_cam(cp[to.index()]);
            let j_a = jacobian(cam, a_cam);
            let j_b = jacobian(cam, b_cam);
            d_cp[to.index()] += cam.r.transpose() * (j_b.transpose() * d_feat);
            d_cp[from.index()] -= cam.r.transpose() * (j_a.transpose() * d_feat);
        }
    }

    // footprint: mean2 + floored cov2 back to camera point and world covariance
    let r_mat = p.rotation_at(idx, t)?;
    let s = p.scales();
    let d_diag = Matrix3::from_diagonal(&Vector3::new(s[0] * s[0], s[1] * s[1], s[2] * s[2]));
    let cov3 = r_mat * d_diag * r_mat.transpose();
    let pg = project_gaussian_backward(cam, t_cam, &cov3, rg.d_mean2, rg.d_cov2);
    d_x += cam.r.transpose() * pg.d_t_cam;

    // Σ₃ = R D Rᵀ: dR = 2 U R D, dD_ii = (Rᵀ U R)_ii, d log s = 2 s² dD_ii
    let d_r = pg.d_cov3 * r_mat * d_diag * T::of(2.0);
    let rtur = r_mat.transpose() * pg.d_cov3 * r_mat;
    for i in 0..3 {
        buf.d_log_scale[idx][i] += T::of(2.0) * d_diag[(i, i)] * rtur[(i, i)];
    }
    let raw = p.raw_quat_at(t);
    let q_unit = raw / raw.norm();
    let d_q = quat_to_mat_backward(q_unit, &d_r);
    let d_raw = normalize_backward4(raw, d_q);
    buf.d_rot_c0[idx] += d_raw;
    buf.d_rot_c1[idx] += d_raw * (t - p.mu_tau);

    // trajectory: position plus any flow-endpoint contributions
    for j in 0..4 {
        d_cp[j] += d_x * b[j];
    }
    let tg = scatter_control_grads(p, grid, req.mode, &d_cp);
    buf.d_mu[idx] += tg.d_mu;
    buf.d_v1[idx] += tg.d_v1;
    buf.d_v2[idx] += tg.d_v2;
    buf.d_v3[idx] += tg.d_v3;

    let _ = settings;
    Ok(())
}
