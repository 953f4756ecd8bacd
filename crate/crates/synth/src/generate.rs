//! Dataset generation with analytic ground truth.
//!
//! Frames are ray-traced: each pixel casts an S×S grid of rays, every ray is
//! intersected with the alive blob spheres, and the nearest hit is shaded as
//!
//!   color = albedo(m) · (0.35 + 0.65·max(0, m·l))
//!
//! with m the unit surface direction in the blob's local frame (which is also
//! the outward normal) and l a fixed light direction. Shading depends only on
//! the material point, so a surface point keeps its color as the blob
//! translates or pulses — the property that makes the emitted flows
//! photometrically consistent.
//!
//! Flow between two frames is the projected displacement of the front surface
//! point visible in the pixel: the hit at center c₁ + m·r₁ reappears at
//! c₂ + m·r₂ and the flow is the difference of the two projections. At
//! occlusion boundaries the front surface wins; pixels with no surface (or
//! whose blob is not alive at the other frame) get zero flow, like the
//! background.
//!
//! One script renders two splits: frames at indices 0, stride, 2·stride, …
//! form the train split, every skipped frame goes to the held-out split.
//! Both splits share cameras and the time origin; the train split's frame
//! spacing is stride·Δt, so held-out frames sit at fractional positions
//! between consecutive train frames.

use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use retime4d_core::bundle::{save_meta, SplitMeta};
use retime4d_core::io::{save_cameras, save_flo, save_mask_png, save_rgb_png, save_ply, PlyPoint};
use retime4d_core::{Camera, Error, Result};

use crate::script::SceneScript;

const AMBIENT: f64 = 0.35;
const DIFFUSE: f64 = 0.65;
const RAY_NEAR: f64 = 1e-4;

fn light_dir() -> Vector3<f64> {
    Vector3::new(0.35, -0.45, 0.82).normalize()
}

/// Where `generate` put the two splits.
#[derive(Debug, Clone)]
pub struct GeneratedSplits {
    pub train: PathBuf,
    /// Absent when the stride skips nothing.
    pub heldout: Option<PathBuf>,
}

/// All blob states at one script frame.
struct FrameGeom {
    centers: Vec<Vector3<f64>>,
    radii: Vec<f64>,
    alive: Vec<bool>,
}

impl FrameGeom {
    fn at(script: &SceneScript, frame: u32) -> Self {
        let t = script.grid.frame_time(frame);
        FrameGeom {
            centers: script.blobs.iter().map(|b| b.center_at(t)).collect(),
            radii: script.blobs.iter().map(|b| b.radius_at(t)).collect(),
            alive: script.blobs.iter().map(|b| b.alive(frame)).collect(),
        }
    }
}

/// Front surface under one pixel: which blob, the material direction of the
/// hit, and the hit's own projected image position. Flow is the difference of
/// two projections of the same material point, so a static blob's flow is
/// exactly zero rather than zero up to ray round-off.
#[derive(Clone)]
struct FrontHit {
    blob: usize,
    m: Vector3<f64>,
    uv: (f64, f64),
}

/// Nearest ray/sphere intersection over alive blobs; returns (depth, blob).
fn trace(origin: &Vector3<f64>, dir: &Vector3<f64>, geom: &FrameGeom) -> Option<(f64, usize)> {
    let mut best: Option<(f64, usize)> = None;
    for b in 0..geom.centers.len() {
        if !geom.alive[b] {
            continue;
        }
        let oc = origin - geom.centers[b];
        let h = oc.dot(dir);
        let disc = h * h - (oc.norm_squared() - geom.radii[b] * geom.radii[b]);
        if disc <= 0.0 {
            continue;
        }
        let s = -h - disc.sqrt();
        if s > RAY_NEAR && best.map_or(true, |(bs, _)| s < bs) {
            best = Some((s, b));
        }
    }
    best
}

fn shade(script: &SceneScript, blob: usize, m: &Vector3<f64>) -> Vector3<f64> {
    let albedo = script.blobs[blob].texture.albedo(m);
    albedo * (AMBIENT + DIFFUSE * m.dot(&light_dir()).max(0.0))
}

/// One camera's view of one frame: antialiased RGB, coverage mask (≥ half the
/// subpixels on a surface), and the front hit per pixel for flow.
fn render_view(
    script: &SceneScript,
    cam: &Camera<f64>,
    geom: &FrameGeom,
) -> (Vec<f32>, Vec<bool>, Vec<Option<FrontHit>>) {
    let res = script.resolution as usize;
    let ss = script.supersample as usize;
    let origin = cam.center();
    let rt = cam.r.transpose();
    let bg = Vector3::new(
        script.background[0] as f64,
        script.background[1] as f64,
        script.background[2] as f64,
    );

    let mut rgb = vec![0.0f32; res * res * 3];
    let mut mask = vec![false; res * res];
    let mut hits: Vec<Option<FrontHit>> = vec![None; res * res];

    for y in 0..res {
        for x in 0..res {
            let mut acc = Vector3::zeros();
            let mut covered = 0usize;
            let mut front: Option<(f64, FrontHit)> = None;
            for sy in 0..ss {
                for sx in 0..ss {
                    let px = x as f64 + (sx as f64 + 0.5) / ss as f64;
                    let py = y as f64 + (sy as f64 + 0.5) / ss as f64;
                    let dir = (rt
                        * Vector3::new((px - cam.cx) / cam.fx, (py - cam.cy) / cam.fy, 1.0))
                    .normalize();
                    match trace(&origin, &dir, geom) {
                        Some((s, b)) => {
                            let p = origin + dir * s;
                            let m = (p - geom.centers[b]) / geom.radii[b];
                            acc += shade(script, b, &m);
                            covered += 1;
                            if front.as_ref().map_or(true, |(fs, _)| s < *fs) {
                                let src = cam.project_world(geom.centers[b] + m * geom.radii[b]);
                                front = Some((s, FrontHit { blob: b, m, uv: (src.x, src.y) }));
                            }
                        }
                        None => acc += bg,
                    }
                }
            }
            let i = y * res + x;
            let c = acc / (ss * ss) as f64;
            rgb[3 * i] = c.x as f32;
            rgb[3 * i + 1] = c.y as f32;
            rgb[3 * i + 2] = c.z as f32;
            mask[i] = 2 * covered >= ss * ss;
            hits[i] = front.map(|(_, h)| h);
        }
    }
    (rgb, mask, hits)
}

/// Flow from the frame that produced `hits` toward `dst`: per pixel, the
/// projected displacement of the front material point, zero where there is no
/// surface or the blob does not exist at the destination.
fn flow_field(
    script: &SceneScript,
    cam: &Camera<f64>,
    hits: &[Option<FrontHit>],
    dst: &FrameGeom,
) -> Vec<f32> {
    let res = script.resolution as usize;
    let mut flow = vec![0.0f32; res * res * 2];
    for (i, hit) in hits.iter().enumerate() {
        let Some(h) = hit else { continue };
        if !dst.alive[h.blob] {
            continue;
        }
        let p = dst.centers[h.blob] + h.m * dst.radii[h.blob];
        let pc = cam.world_to_cam(p);
        if pc.z <= RAY_NEAR {
            continue;
        }
        let uv = cam.project_cam(pc);
        flow[2 * i] = (uv.x - h.uv.0) as f32;
        flow[2 * i + 1] = (uv.y - h.uv.1) as f32;
    }
    flow
}

/// Uniform surface samples of every alive blob, apportioned by surface area.
fn cloud_points(script: &SceneScript, geom: &FrameGeom, rng: &mut ChaCha8Rng) -> Vec<PlyPoint> {
    let alive: Vec<usize> = (0..script.blobs.len()).filter(|&b| geom.alive[b]).collect();
    let weights: Vec<f64> = alive.iter().map(|&b| geom.radii[b] * geom.radii[b]).collect();
    let total_w: f64 = weights.iter().sum();
    let n = script.cloud_points as usize;

    // Largest-remainder apportionment so counts sum exactly to n.
    let quotas: Vec<f64> = weights.iter().map(|w| w / total_w * n as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..alive.len()).collect();
    order.sort_by(|&a, &b| {
        (quotas[b] - quotas[b].floor())
            .partial_cmp(&(quotas[a] - quotas[a].floor()))
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut short = n - counts.iter().sum::<usize>();
    for &j in &order {
        if short == 0 {
            break;
        }
        counts[j] += 1;
        short -= 1;
    }

    let mut points = Vec::with_capacity(n);
    for (j, &b) in alive.iter().enumerate() {
        for _ in 0..counts[j] {
            // Rejection-sample a unit direction.
            let m = loop {
                let v = Vector3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                );
                let n2: f64 = v.norm_squared();
                if n2 > 1e-6 && n2 <= 1.0 {
                    break v / n2.sqrt();
                }
            };
            let p = geom.centers[b] + m * geom.radii[b];
            let c = shade(script, b, &m);
            let to_u8 = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            points.push(PlyPoint {
                position: Vector3::new(p.x as f32, p.y as f32, p.z as f32),
                color: [to_u8(c.x), to_u8(c.y), to_u8(c.z)],
            });
        }
    }
    points
}

fn mkdir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Renders the script into `out/train` and `out/heldout`.
pub fn generate(script: &SceneScript, out: &Path, stride: usize) -> Result<GeneratedSplits> {
    script.validate()?;
    if stride == 0 {
        return Err(Error::Config("stride must be >= 1".into()));
    }
    let frames = script.grid.frame_count as usize;
    let train_frames: Vec<usize> = (0..frames).step_by(stride).collect();
    let heldout_frames: Vec<usize> = (0..frames).filter(|f| f % stride != 0).collect();
    if train_frames.len() < 2 {
        return Err(Error::Config(format!(
            "stride {stride} leaves {} training frame(s); need at least 2",
            train_frames.len()
        )));
    }

    let cams = script.ring_cameras();
    let cams64: Vec<Camera<f64>> = cams.iter().map(|c| c.to_f64()).collect();
    let geoms: Vec<FrameGeom> = (0..frames).map(|f| FrameGeom::at(script, f as u32)).collect();

    let train_dir = out.join("train");
    let heldout_dir = out.join("heldout");
    mkdir(&train_dir)?;
    save_cameras(&train_dir.join("cameras.json"), &cams)?;
    let split_delta = script.grid.delta_t * stride as f64;
    save_meta(
        &train_dir.join("meta.json"),
        &SplitMeta {
            t_start: script.grid.t_start,
            delta_t: split_delta,
            frame_times: train_frames.iter().map(|&f| script.grid.frame_time(f as u32)).collect(),
        },
    )?;
    if !heldout_frames.is_empty() {
        mkdir(&heldout_dir)?;
        save_cameras(&heldout_dir.join("cameras.json"), &cams)?;
        save_meta(
            &heldout_dir.join("meta.json"),
            &SplitMeta {
                t_start: script.grid.t_start,
                delta_t: split_delta,
                frame_times: heldout_frames
                    .iter()
                    .map(|&f| script.grid.frame_time(f as u32))
                    .collect(),
            },
        )?;
    }

    let res = script.resolution;
    cams64
        .par_iter()
        .enumerate()
        .try_for_each(|(ci, cam)| -> Result<()> {
            let train_cam = train_dir.join(format!("cam{ci}"));
            mkdir(&train_cam)?;
            let mut prev_hits: Option<Vec<Option<FrontHit>>> = None;
            for (i, &f) in train_frames.iter().enumerate() {
                let (rgb, mask, hits) = render_view(script, cam, &geoms[f]);
                save_rgb_png(&train_cam.join(format!("frame{i}.png")), res, res, &rgb)?;
                save_mask_png(&train_cam.join(format!("mask{i}.png")), res, res, &mask)?;
                if let Some(ph) = &prev_hits {
                    let fwd = flow_field(script, cam, ph, &geoms[f]);
                    save_flo(&train_cam.join(format!("fwd{}.flo", i - 1)), res, res, &fwd)?;
                    let bwd = flow_field(script, cam, &hits, &geoms[train_frames[i - 1]]);
                    save_flo(&train_cam.join(format!("bwd{i}.flo")), res, res, &bwd)?;
                }
                prev_hits = Some(hits);
            }
            if !heldout_frames.is_empty() {
                let held_cam = heldout_dir.join(format!("cam{ci}"));
                mkdir(&held_cam)?;
                for (j, &f) in heldout_frames.iter().enumerate() {
                    let (rgb, mask, _) = render_view(script, cam, &geoms[f]);
                    save_rgb_png(&held_cam.join(format!("frame{j}.png")), res, res, &rgb)?;
                    save_mask_png(&held_cam.join(format!("mask{j}.png")), res, res, &mask)?;
                }
            }
            Ok(())
        })?;

    let points_dir = train_dir.join("points");
    mkdir(&points_dir)?;
    for (i, &f) in train_frames.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(
            script.seed.wrapping_add((f as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)),
        );
        let points = cloud_points(script, &geoms[f], &mut rng);
        save_ply(&points_dir.join(format!("frame{i}.ply")), &points)?;
    }

    Ok(GeneratedSplits {
        train: train_dir,
        heldout: (!heldout_frames.is_empty()).then_some(heldout_dir),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::script::{BlobSpec, GridSpec, Motion, RingSpec, Texture};

    fn one_blob_script() -> SceneScript {
        SceneScript {
            name: "unit".into(),
            seed: 3,
            resolution: 48,
            supersample: 2,
            background: [0.1, 0.1, 0.12],
            cloud_points: 96,
            grid: GridSpec { frame_count: 3, t_start: 0.0, delta_t: 1.0 },
            cameras: RingSpec { count: 2, radius: 4.0, height: 0.0, fov_deg: 40.0, target: [0.0; 3] },
            blobs: vec![BlobSpec {
                radius: 0.5,
                motion: Motion::Linear { start: [0.0, 0.0, -0.3], velocity: [0.0, 0.0, 0.3] },
                texture: Texture::Solid { color: [0.8, 0.4, 0.2] },
                birth: 0,
                death: None,
                pulse: None,
            }],
        }
    }

    #[test]
    fn front_hit_flow_matches_projected_center_motion_for_a_centered_blob() {
        let script = one_blob_script();
        let cams: Vec<Camera<f64>> = script.ring_cameras().iter().map(|c| c.to_f64()).collect();
        let g0 = FrameGeom::at(&script, 0);
        let g1 = FrameGeom::at(&script, 1);
        let (_, mask, hits) = render_view(&script, &cams[0], &g0);
        let flow = flow_field(&script, &cams[0], &hits, &g1);

        // The blob center projects with displacement fy·Δz/depth; surface
        // points vary with their own depth, so compare against the center's
        // displacement loosely but require coverage to agree with the mask.
        let center_now = cams[0].project_world(g0.centers[0]);
        let center_next = cams[0].project_world(g1.centers[0]);
        let expected = center_next - center_now;
        let mut inspected = 0;
        for i in 0..mask.len() {
            if !mask[i] {
                continue;
            }
            let (u, v) = (flow[2 * i] as f64, flow[2 * i + 1] as f64);
            assert!((u - expected.x).abs() < 1.0 && (v - expected.y).abs() < 1.5,
                "pixel {i}: flow ({u:.2}, {v:.2}) vs center displacement ({:.2}, {:.2})",
                expected.x, expected.y);
            inspected += 1;
        }
        assert!(inspected > 20, "mask unexpectedly small: {inspected}");
    }

    #[test]
    fn coverage_mask_is_a_filled_disk_of_the_projected_radius() {
        let script = one_blob_script();
        let cams: Vec<Camera<f64>> = script.ring_cameras().iter().map(|c| c.to_f64()).collect();
        let g0 = FrameGeom::at(&script, 0);
        let (_, mask, _) = render_view(&script, &cams[0], &g0);
        let area = mask.iter().filter(|&&m| m).count() as f64;
        // A sphere's silhouette is the tangent cone: projected radius
        // fx·r/√(d²−r²) with d the eye-to-center distance (√(16+0.09) here).
        let d2 = 16.0 + 0.09;
        let pr = cams[0].fx * 0.5 / (d2 - 0.25f64).sqrt();
        let disk = std::f64::consts::PI * pr * pr;
        assert!((area - disk).abs() / disk < 0.15, "area {area} vs disk {disk}");
    }

    #[test]
    fn clouds_apportion_points_by_surface_area() {
        let mut script = one_blob_script();
        script.blobs.push(BlobSpec {
            radius: 0.25, // quarter the area of the 0.5 blob
            motion: Motion::Static { center: [0.9, 0.0, 0.0] },
            texture: Texture::Solid { color: [0.2, 0.6, 0.9] },
            birth: 0,
            death: None,
            pulse: None,
        });
        let g = FrameGeom::at(&script, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts = cloud_points(&script, &g, &mut rng);
        assert_eq!(pts.len(), 96);
        let near_small = pts
            .iter()
            .filter(|p| {
                let d = (p.position.map(|v| v as f64) - Vector3::new(0.9, 0.0, 0.0)).norm();
                (d - 0.25).abs() < 1e-3
            })
            .count();
        // Weights r²: 0.25 of the mass on the small blob (±ceil rounding).
        let expect = 96.0 * (0.25f64 * 0.25) / (0.25 * 0.25 + 0.5 * 0.5);
        assert!((near_small as f64 - expect).abs() <= 1.0, "{near_small} vs {expect}");
        for p in &pts {
            let on_big = ((p.position.map(|v| v as f64)
                - Vector3::new(0.0, 0.0, -0.3)).norm() - 0.5).abs() < 1e-3;
            let on_small = ((p.position.map(|v| v as f64)
                - Vector3::new(0.9, 0.0, 0.0)).norm() - 0.25).abs() < 1e-3;
            assert!(on_big || on_small);
        }
    }
}
