//! Command-line front end for the retime4d engine.
//!
//! Subcommands cover the full desk-scale loop: `synth` writes a multi-view
//! dataset from a scene script, `train` fits a dynamic Gaussian scene to the
//! train split, `render`/`interpolate` produce images from a checkpoint at
//! arbitrary timestamps, and `eval` scores a checkpoint against a dataset
//! split with masked PSNR/SSIM plus per-frame error heatmaps.
//!
//! Every subcommand is deterministic for a fixed seed and input set, and
//! exits nonzero with the underlying typed error message on any contract
//! violation (malformed file, missing split, out-of-range camera or time).
//! `RETIME4D_THREADS` caps the rayon worker pool.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use retime4d_core::bundle::load_bundle;
use retime4d_core::io::{
    load_cameras, load_checkpoint, save_checkpoint, save_gray_png, save_rgb_png,
};
use retime4d_core::metrics::{error_heatmap, psnr, ssim_metric, EvalReport, EvalRow};
use retime4d_core::render::{render, RasterSettings, RenderRequest};
use retime4d_core::spline::TrajectoryMode;
use retime4d_core::train::{event_csv, loss_csv, train, TrainConfig};
use retime4d_core::{Camera, Scene};
use retime4d_synth::{generate, SceneScript};

/// Default edge sharpness for the temporal opacity window at render time.
/// Matches the training default; override with `--gamma` when a checkpoint
/// was trained with a different value.
const DEFAULT_GAMMA: f32 = 0.005;

/// Amplification applied to |render − ground truth| before writing the
/// 8-bit heatmap, so small residuals stay visible.
const HEATMAP_GAIN: f32 = 4.0;

#[derive(Parser)]
#[command(
    name = "retime4d",
    version,
    about = "Desk-scale dynamic Gaussian scene engine",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, ValueEnum)]
enum Mode {
    /// Curved per-interval trajectories (full model).
    Spline,
    /// Straight-line trajectories between neighboring frames.
    Linear,
}

impl From<Mode> for TrajectoryMode {
    fn from(m: Mode) -> TrajectoryMode {
        match m {
            Mode::Spline => TrajectoryMode::Spline,
            Mode::Linear => TrajectoryMode::Linear,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-view dataset from a scene script.
    Synth {
        /// Scene script (TOML).
        #[arg(long)]
        script: PathBuf,
        /// Dataset root to create; writes train/ and heldout/ splits.
        #[arg(long)]
        out: PathBuf,
        /// Keep every stride-th scripted frame for training; the frames in
        /// between are held out for interpolation tests.
        #[arg(long, default_value_t = 2)]
        stride: usize,
    },
    /// Fit a dynamic Gaussian scene to a dataset's train split.
    Train {
        /// Dataset root containing a train/ split.
        #[arg(long)]
        data: PathBuf,
        /// Training configuration (TOML); defaults to the desk-scale preset.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Checkpoint output path. Loss and event logs are written next to
        /// it as <out>.losses.csv and <out>.events.csv.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed from the config file.
        #[arg(long)]
        seed: Option<u64>,
        /// Primitive budget at initialization.
        #[arg(long, default_value_t = 4000)]
        budget: usize,
        /// Spherical-harmonic degree for view-dependent color (0-2).
        #[arg(long, default_value_t = 2)]
        sh_degree: u32,
    },
    /// Render one camera at one timestamp from a checkpoint.
    Render {
        /// Checkpoint produced by `train`.
        #[arg(long)]
        ckpt: PathBuf,
        /// cameras.json from the dataset the checkpoint was trained on.
        #[arg(long)]
        cameras: PathBuf,
        /// Camera index into the cameras file.
        #[arg(long)]
        camera: usize,
        /// Timestamp in dataset time units.
        #[arg(long)]
        time: f64,
        /// Output PNG path.
        #[arg(long)]
        out: PathBuf,
        /// Trajectory model to evaluate; must match how the checkpoint was
        /// trained.
        #[arg(long, value_enum, default_value_t = Mode::Spline)]
        mode: Mode,
        /// Temporal-opacity edge sharpness.
        #[arg(long, default_value_t = DEFAULT_GAMMA)]
        gamma: f32,
    },
    /// Render evenly spaced timestamps strictly between two times.
    Interpolate {
        /// Checkpoint produced by `train`.
        #[arg(long)]
        ckpt: PathBuf,
        /// cameras.json from the dataset the checkpoint was trained on.
        #[arg(long)]
        cameras: PathBuf,
        /// Camera index into the cameras file.
        #[arg(long)]
        camera: usize,
        /// Interval start, dataset time units.
        #[arg(long)]
        from: f64,
        /// Interval end, dataset time units.
        #[arg(long)]
        to: f64,
        /// Number of intermediate frames to render.
        #[arg(long)]
        frames: usize,
        /// Output directory; writes frame000.png.. and times.csv.
        #[arg(long)]
        out: PathBuf,
        /// Trajectory model to evaluate.
        #[arg(long, value_enum, default_value_t = Mode::Spline)]
        mode: Mode,
        /// Temporal-opacity edge sharpness.
        #[arg(long, default_value_t = DEFAULT_GAMMA)]
        gamma: f32,
    },
    /// Score a checkpoint against one dataset split.
    Eval {
        /// Checkpoint produced by `train`.
        #[arg(long)]
        ckpt: PathBuf,
        /// Dataset root.
        #[arg(long)]
        data: PathBuf,
        /// Split directory name under the dataset root.
        #[arg(long, default_value = "heldout")]
        split: String,
        /// CSV report path; heatmap PNGs land in "<stem>_heatmaps/".
        #[arg(long)]
        out: PathBuf,
        /// Trajectory model to evaluate.
        #[arg(long, value_enum, default_value_t = Mode::Spline)]
        mode: Mode,
        /// Temporal-opacity edge sharpness.
        #[arg(long, default_value_t = DEFAULT_GAMMA)]
        gamma: f32,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = init_thread_pool() {
        eprintln!("error: {e:#}");
        return ExitCode::FAILURE;
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

/// Caps the global rayon pool when RETIME4D_THREADS is set.
fn init_thread_pool() -> Result<()> {
    let Ok(raw) = std::env::var("RETIME4D_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .with_context(|| format!("RETIME4D_THREADS must be a positive integer, got {raw:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("failed to configure the worker pool")?;
    Ok(())
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth { script, out, stride } => cmd_synth(&script, &out, stride),
        Command::Train {
            data,
            config,
            out,
            seed,
            budget,
            sh_degree,
        } => cmd_train(&data, config.as_deref(), &out, seed, budget, sh_degree),
        Command::Render {
            ckpt,
            cameras,
            camera,
            time,
            out,
            mode,
            gamma,
        } => cmd_render(&ckpt, &cameras, camera, time, &out, mode.into(), gamma),
        Command::Interpolate {
            ckpt,
            cameras,
            camera,
            from,
            to,
            frames,
            out,
            mode,
            gamma,
        } => cmd_interpolate(
            &ckpt,
            &cameras,
            camera,
            from,
            to,
            frames,
            &out,
            mode.into(),
            gamma,
        ),
        Command::Eval {
            ckpt,
            data,
            split,
            out,
            mode,
            gamma,
        } => cmd_eval(&ckpt, &data, &split, &out, mode.into(), gamma),
    }
}

fn cmd_synth(script_path: &Path, out: &Path, stride: usize) -> Result<()> {
    if stride == 0 {
        bail!("--stride must be at least 1");
    }
    let text = fs::read_to_string(script_path)
        .with_context(|| format!("reading scene script {}", script_path.display()))?;
    let script = SceneScript::from_toml_str(&text, script_path)?;
    let splits = generate(&script, out, stride)?;
    println!(
        "scene '{}': {} cameras, {} scripted frames",
        script.name,
        script.cameras.count,
        script.grid.frame_count
    );
    println!("train split: {}", splits.train.display());
    match splits.heldout {
        Some(h) => println!("heldout split: {}", h.display()),
        None => println!("heldout split: (empty, stride covers every frame)"),
    }
    Ok(())
}

fn cmd_train(
    data: &Path,
    config: Option<&Path>,
    out: &Path,
    seed: Option<u64>,
    budget: usize,
    sh_degree: u32,
) -> Result<()> {
    let mut cfg = match config {
        Some(p) => {
            let text = fs::read_to_string(p)
                .with_context(|| format!("reading training config {}", p.display()))?;
            TrainConfig::from_toml_str(&text)?
        }
        None => TrainConfig::desk(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }

    let bundle = load_bundle(&data.join("train"))?;
    let scene = retime4d_core::init::init_scene(&bundle, budget, sh_degree, cfg.seed)?;
    println!(
        "initialized {} primitives over {} frames ({} cameras)",
        scene.prims.len(),
        bundle.frame_count(),
        bundle.cameras.len()
    );

    let result = train(scene, &bundle, &cfg)?;

    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)
            .map_err(|e| retime4d_core::Error::io(parent.to_path_buf(), e))?;
    }
    save_checkpoint(out, &result.scene)?;
    let loss_path = out.with_extension("losses.csv");
    let event_path = out.with_extension("events.csv");
    fs::write(&loss_path, loss_csv(&result.losses))
        .map_err(|e| retime4d_core::Error::io(loss_path.clone(), e))?;
    fs::write(&event_path, event_csv(&result.events))
        .map_err(|e| retime4d_core::Error::io(event_path.clone(), e))?;

    let final_loss = result.losses.last().map(|r| r.total).unwrap_or(f32::NAN);
    println!(
        "trained {} iterations; {} primitives; final loss {final_loss:.6}",
        cfg.total_iters,
        result.scene.prims.len()
    );
    println!("checkpoint: {}", out.display());
    Ok(())
}

/// Maps an external timestamp onto the normalized frame axis, rejecting
/// times outside the grid span.
fn normalized_time(scene: &Scene<f32>, time: f64) -> Result<f32> {
    let t = scene.grid.normalize(time as f32);
    let last = (scene.grid.frame_count - 1) as f32;
    // Tolerate rounding at the endpoints but nothing beyond them.
    if !(t.is_finite() && (-1e-4..=last + 1e-4).contains(&t)) {
        let lo = scene.grid.t_start;
        let hi = scene.grid.t_start + last * scene.grid.delta_t;
        bail!("time {time} outside the scene's grid span [{lo}, {hi}]");
    }
    Ok(t.clamp(0.0, last))
}

fn pick_camera(cams: &[Camera<f32>], index: usize) -> Result<&Camera<f32>> {
    cams.get(index).with_context(|| {
        format!(
            "camera index {index} out of range (cameras file has {})",
            cams.len()
        )
    })
}

fn render_rgb(
    scene: &Scene<f32>,
    cam: &Camera<f32>,
    t_norm: f32,
    mode: TrajectoryMode,
    gamma: f32,
) -> Result<Vec<f32>> {
    let req = RenderRequest::rgb_all(t_norm, gamma, mode);
    let out = render(scene, cam, &req, &RasterSettings::default())?;
    Ok(out.values)
}

fn write_png(path: &Path, width: u32, height: u32, data: &[f32]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)
            .map_err(|e| retime4d_core::Error::io(parent.to_path_buf(), e))?;
    }
    save_rgb_png(path, width, height, data)?;
    Ok(())
}

fn cmd_render(
    ckpt: &Path,
    cameras: &Path,
    camera: usize,
    time: f64,
    out: &Path,
    mode: TrajectoryMode,
    gamma: f32,
) -> Result<()> {
    let scene = load_checkpoint(ckpt)?;
    let cams = load_cameras(cameras)?;
    let cam = pick_camera(&cams, camera)?;
    let t = normalized_time(&scene, time)?;
    let rgb = render_rgb(&scene, cam, t, mode, gamma)?;
    write_png(out, cam.width, cam.height, &rgb)?;
    println!("rendered camera {camera} at t={time} -> {}", out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_interpolate(
    ckpt: &Path,
    cameras: &Path,
    camera: usize,
    from: f64,
    to: f64,
    frames: usize,
    out: &Path,
    mode: TrajectoryMode,
    gamma: f32,
) -> Result<()> {
    if frames == 0 {
        bail!("--frames must be at least 1");
    }
    if to < from {
        bail!("--to ({to}) must not precede --from ({from})");
    }
    let scene = load_checkpoint(ckpt)?;
    let cams = load_cameras(cameras)?;
    let cam = pick_camera(&cams, camera)?;
    // Validate the endpoints up front so an out-of-span request fails before
    // any file is written.
    normalized_time(&scene, from)?;
    normalized_time(&scene, to)?;

    fs::create_dir_all(out).map_err(|e| retime4d_core::Error::io(out.to_path_buf(), e))?;
    let mut times_csv = String::from("index,time\n");
    for k in 1..=frames {
        let time = from + (to - from) * k as f64 / (frames as f64 + 1.0);
        let t = normalized_time(&scene, time)?;
        let rgb = render_rgb(&scene, cam, t, mode, gamma)?;
        let path = out.join(format!("frame{:03}.png", k - 1));
        write_png(&path, cam.width, cam.height, &rgb)?;
        times_csv.push_str(&format!("{},{time}\n", k - 1));
    }
    let times_path = out.join("times.csv");
    fs::write(&times_path, times_csv)
        .map_err(|e| retime4d_core::Error::io(times_path.clone(), e))?;
    println!(
        "rendered {frames} intermediate frames in ({from}, {to}) -> {}",
        out.display()
    );
    Ok(())
}

fn cmd_eval(
    ckpt: &Path,
    data: &Path,
    split: &str,
    out: &Path,
    mode: TrajectoryMode,
    gamma: f32,
) -> Result<()> {
    let scene = load_checkpoint(ckpt)?;
    let split_dir = data.join(split);
    if !split_dir.is_dir() {
        return Err(retime4d_core::Error::dataset(
            split_dir,
            format!("split '{split}' not found under {}", data.display()),
        )
        .into());
    }
    let bundle = load_bundle(&split_dir)?;
    let n_cams = bundle.cameras.len();
    let n_frames = bundle.frame_count();
    let masked = (0..n_cams)
        .any(|c| (0..n_frames).any(|f| bundle.mask(c, f).is_some()));

    let heatmap_dir = heatmap_dir_for(out);
    fs::create_dir_all(&heatmap_dir)
        .map_err(|e| retime4d_core::Error::io(heatmap_dir.clone(), e))?;

    // One row per camera × split frame, camera-major, rendered in parallel.
    let jobs: Vec<(usize, usize)> = (0..n_cams)
        .flat_map(|c| (0..n_frames).map(move |f| (c, f)))
        .collect();
    let rows: Vec<EvalRow> = jobs
        .par_iter()
        .map(|&(c, f)| -> Result<EvalRow> {
            let cam = &bundle.cameras[c];
            let time = bundle.meta.frame_times[f];
            let t = normalized_time(&scene, time)?;
            let rgb = render_rgb(&scene, cam, t, mode, gamma)?;
            let gt = bundle.image(c, f);
            let mask = bundle.mask(c, f);
            let psnr_db = psnr(&rgb, gt, 3, mask)?;
            let ssim = ssim_metric(&rgb, gt, cam.width as usize, cam.height as usize, mask)?;
            let heat = error_heatmap(&rgb, gt, 3, HEATMAP_GAIN);
            let heat_path = heatmap_dir.join(format!("cam{c}_frame{f}.png"));
            save_gray_png(&heat_path, cam.width, cam.height, &heat)?;
            Ok(EvalRow {
                camera: c,
                time,
                psnr: psnr_db,
                ssim,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let report = EvalReport { rows, masked };
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)
            .map_err(|e| retime4d_core::Error::io(parent.to_path_buf(), e))?;
    }
    fs::write(out, report.to_csv()).map_err(|e| retime4d_core::Error::io(out.to_path_buf(), e))?;
    println!(
        "evaluated {} renders: mean PSNR {:.2} dB, mean SSIM {:.4} (masked: {})",
        report.rows.len(),
        report.mean_psnr(),
        report.mean_ssim(),
        report.masked
    );
    println!("report: {}", out.display());
    Ok(())
}

/// `report.csv` -> `report_heatmaps/` next to it.
fn heatmap_dir_for(report: &Path) -> PathBuf {
    let stem = report
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "report".to_string());
    report.with_file_name(format!("{stem}_heatmaps"))
}
