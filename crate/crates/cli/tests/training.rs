//! Cross-crate training checks that need a generated dataset: flow-aware
//! initialization must produce trajectories whose rendered flow already
//! resembles the ground truth, and a short optimization run must improve on
//! the initialization it started from.

use std::sync::LazyLock;

use retime4d_core::bundle::{load_bundle, FrameBundle};
use retime4d_core::init::init_scene;
use retime4d_core::losses::flow_loss;
use retime4d_core::render::{
    render, Channel, FlowDirection, Group, RasterSettings, RenderRequest,
};
use retime4d_core::spline::TrajectoryMode;
use retime4d_core::train::{train, TrainConfig};
use retime4d_core::Scene;
use retime4d_synth::{generate, SceneScript};
use tempfile::TempDir;

/// One blob sweeping ~1.5 world units over 5 frames, two cameras, 48x48:
/// big enough that lifted flows carry real signal, small enough for tests.
fn mover_script() -> SceneScript {
    let mut s = SceneScript::from_toml_str(
        r#"
name = "mover"
resolution = 48
supersample = 2
cloud_points = 200

[grid]
frame_count = 5
t_start = 0.0
delta_t = 1.0

[cameras]
count = 2
radius = 4.0
fov_deg = 40.0

[[blobs]]
radius = 0.4
motion = { kind = "linear", start = [-0.75, 0.0, -0.3], velocity = [0.375, 0.0, 0.15] }
texture = { kind = "gradient", color_a = [0.9, 0.4, 0.2], color_b = [0.2, 0.4, 0.9] }
"#,
        std::path::Path::new("mover.toml"),
    )
    .unwrap();
    s.validate().unwrap();
    s
}

static MOVER: LazyLock<(TempDir, FrameBundle)> = LazyLock::new(|| {
    let tmp = TempDir::new().unwrap();
    generate(&mover_script(), tmp.path(), 1).unwrap();
    let bundle = load_bundle(&tmp.path().join("train")).unwrap();
    (tmp, bundle)
});

/// Sum of forward-flow L1 against the dataset flows over every camera and
/// every interior frame's fading-in group.
fn total_flow_error(scene: &Scene<f32>, bundle: &FrameBundle) -> f64 {
    let settings = RasterSettings::default();
    let mut total = 0.0;
    let mut terms = 0usize;
    for c in 0..bundle.cameras.len() {
        for i in 0..bundle.frame_count() - 1 {
            let req = RenderRequest {
                t: i as f32,
                group: Group::NextOf(i as u32),
                channel: Channel::Flow(FlowDirection::Forward),
                compensate: false,
                mode: TrajectoryMode::Spline,
                gamma: 0.005,
            };
            let out = render(scene, &bundle.cameras[c], &req, &settings).unwrap();
            let gt = bundle.fwd_flow(c, i).expect("generated dataset has flows");
            let fl = flow_loss(&out.values, gt, &out.alpha).unwrap();
            if fl.covered > 0 {
                total += fl.loss as f64;
                terms += 1;
            }
        }
    }
    assert!(terms > 0, "mover scene must cover some pixels");
    total / terms as f64
}

#[test]
fn flow_lifted_init_beats_a_velocity_free_one() {
    let (_tmp, bundle) = &*MOVER;
    let scene = init_scene(bundle, 400, 0, 9).unwrap();

    let mut frozen = scene.clone();
    for p in &mut frozen.prims {
        p.v1 = nalgebra::Vector3::zeros();
        p.v2 = nalgebra::Vector3::zeros();
        p.v3 = nalgebra::Vector3::zeros();
    }

    let lifted = total_flow_error(&scene, bundle);
    let zeroed = total_flow_error(&frozen, bundle);
    assert!(
        lifted < 0.6 * zeroed,
        "flow-lifted init {lifted:.4} px should clearly beat zero-velocity {zeroed:.4} px"
    );
}

#[test]
fn init_velocities_point_along_the_scripted_motion() {
    let (_tmp, bundle) = &*MOVER;
    let scene = init_scene(bundle, 400, 0, 9).unwrap();
    // Script velocity is (0.375, 0, 0.15)/frame; most lifted v2 vectors
    // should agree with it in direction.
    let gt = nalgebra::Vector3::new(0.375f32, 0.0, 0.15);
    let aligned = scene
        .prims
        .iter()
        .filter(|p| p.v2.norm() > 1e-4)
        .filter(|p| p.v2.normalize().dot(&gt.normalize()) > 0.7)
        .count();
    let moving = scene.prims.iter().filter(|p| p.v2.norm() > 1e-4).count();
    assert!(
        moving > 0 && aligned * 10 >= moving * 7,
        "{aligned}/{moving} lifted velocities aligned with the scripted motion"
    );
}

#[test]
fn short_training_run_improves_on_its_initialization() {
    let (_tmp, bundle) = &*MOVER;
    let scene = init_scene(bundle, 400, 0, 9).unwrap();

    let mut cfg = TrainConfig::desk();
    cfg.total_iters = 120;
    cfg.flow_decay_start_iter = 72;
    cfg.global_decay_start_iter = 108;
    cfg.stretch_every = 60;
    cfg.seed = 5;

    let res = train(scene, bundle, &cfg).unwrap();
    let first = &res.losses[..10];
    let last = &res.losses[res.losses.len() - 10..];
    let mean = |rows: &[retime4d_core::train::LossRow]| {
        rows.iter().map(|r| r.rgb_all as f64).sum::<f64>() / rows.len() as f64
    };
    let (early, late) = (mean(first), mean(last));
    assert!(
        late < 0.8 * early,
        "photometric loss should drop: early {early:.4} late {late:.4}"
    );
}
