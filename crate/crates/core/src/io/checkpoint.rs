//! Scene checkpoints.
//!
//! Layout (all little-endian):
//!   magic "R4GS" | version u32 | count u64
//!   grid: t_start f32, frame_count u32, delta_t f32, epsilon f32
//!   sh_degree u32
//!   count records of f32 fields:
//!     mu_tau, tau_l, tau_r, mu[3], v1[3], v2[3], v3[3], log_scale[3],
//!     rot_c0[4], rot_c1[4], sh[3·coeffs], opacity_logit
//!
//! The owning interval is not stored: temporal means live on the half-grid,
//! so it is recovered as floor(mu_tau) clamped to the valid range.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{Vector3, Vector4};

use crate::error::{Error, Result};
use crate::scene::{sh_coeff_count, Primitive, Scene, TimeGrid};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"R4GS";
pub const CHECKPOINT_VERSION: u32 = 1;

struct Writer<W: Write> {
    inner: W,
    path: std::path::PathBuf,
}

impl<W: Write> Writer<W> {
    fn bytes(&mut self, b: &[u8]) -> Result<()> {
        self.inner
            .write_all(b)
            .map_err(|e| Error::io(&self.path, e))
    }
    fn f32(&mut self, v: f32) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    fn u32(&mut self, v: u32) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    fn v3(&mut self, v: &Vector3<f32>) -> Result<()> {
        for i in 0..3 {
            self.f32(v[i])?;
        }
        Ok(())
    }
    fn v4(&mut self, v: &Vector4<f32>) -> Result<()> {
        for i in 0..4 {
            self.f32(v[i])?;
        }
        Ok(())
    }
}

pub fn save_checkpoint(path: &Path, scene: &Scene<f32>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = Writer {
        inner: BufWriter::new(file),
        path: path.to_path_buf(),
    };
    w.bytes(&CHECKPOINT_MAGIC)?;
    w.u32(CHECKPOINT_VERSION)?;
    w.bytes(&(scene.prims.len() as u64).to_le_bytes())?;
    w.f32(scene.grid.t_start)?;
    w.u32(scene.grid.frame_count)?;
    w.f32(scene.grid.delta_t)?;
    w.f32(scene.grid.epsilon)?;
    w.u32(scene.sh_degree)?;
    let coeffs = sh_coeff_count(scene.sh_degree);
    for p in &scene.prims {
        w.f32(p.mu_tau)?;
        w.f32(p.tau_l)?;
        w.f32(p.tau_r)?;
        w.v3(&p.mu)?;
        w.v3(&p.v1)?;
        w.v3(&p.v2)?;
        w.v3(&p.v3)?;
        w.v3(&p.log_scale)?;
        w.v4(&p.rot_c0)?;
        w.v4(&p.rot_c1)?;
        if p.sh.len() != coeffs {
            return Err(Error::Contract(format!(
                "primitive has {} SH coefficients, scene degree implies {coeffs}",
                p.sh.len()
            )));
        }
        for c in &p.sh {
            w.v3(c)?;
        }
        w.f32(p.opacity_logit)?;
    }
    w.inner.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

struct Reader<R: Read> {
    inner: R,
    path: std::path::PathBuf,
}

impl<R: Read> Reader<R> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner.read_exact(&mut buf).map_err(|_| {
            Error::format("checkpoint", &self.path, "file truncated mid-record")
        })?;
        Ok(buf)
    }
    fn f32(&mut self) -> Result<f32> {
        let b = self.bytes(4)?;
        Ok(f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
    fn u32(&mut self) -> Result<u32> {
        let b = self.bytes(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
    fn u64(&mut self) -> Result<u64> {
        let b = self.bytes(8)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }
    fn v3(&mut self) -> Result<Vector3<f32>> {
        Ok(Vector3::new(self.f32()?, self.f32()?, self.f32()?))
    }
    fn v4(&mut self) -> Result<Vector4<f32>> {
        Ok(Vector4::new(
            self.f32()?,
            self.f32()?,
            self.f32()?,
            self.f32()?,
        ))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Scene<f32>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader {
        inner: BufReader::new(file),
        path: path.to_path_buf(),
    };
    let magic = r.bytes(4)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::format(
            "checkpoint",
            path,
            format!("bad magic {magic:02x?}, expected \"R4GS\""),
        ));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(
            "checkpoint",
            path,
            format!("unsupported version {version}"),
        ));
    }
    let count = r.u64()? as usize;
    let grid = TimeGrid {
        t_start: r.f32()?,
        frame_count: r.u32()?,
        delta_t: r.f32()?,
        epsilon: r.f32()?,
    };
    grid.validate().map_err(|e| {
        Error::format("checkpoint", path, format!("invalid time grid: {e}"))
    })?;
    let sh_degree = r.u32()?;
    if sh_degree > 2 {
        return Err(Error::format(
            "checkpoint",
            path,
            format!("unsupported SH degree {sh_degree}"),
        ));
    }
    let coeffs = sh_coeff_count(sh_degree);
    let max_interval = grid.intervals().saturating_sub(1);
    let mut prims = Vec::with_capacity(count);
    for _ in 0..count {
        let mu_tau = r.f32()?;
        let tau_l = r.f32()?;
        let tau_r = r.f32()?;
        let mu = r.v3()?;
        let v1 = r.v3()?;
        let v2 = r.v3()?;
        let v3 = r.v3()?;
        let log_scale = r.v3()?;
        let rot_c0 = r.v4()?;
        let rot_c1 = r.v4()?;
        let mut sh = Vec::with_capacity(coeffs);
        for _ in 0..coeffs {
            sh.push(r.v3()?);
        }
        let opacity_logit = r.f32()?;
        let interval = (mu_tau.floor().max(0.0) as u32).min(max_interval);
        prims.push(Primitive {
            mu_tau,
            tau_l,
            tau_r,
            interval,
            mu,
            v1,
            v2,
            v3,
            log_scale,
            rot_c0,
            rot_c1,
            sh,
            opacity_logit,
        });
    }
    // reject trailing garbage so truncation errors can't hide
    let mut extra = [0u8; 1];
    if r.inner.read(&mut extra).map_err(|e| Error::io(path, e))? != 0 {
        return Err(Error::format(
            "checkpoint",
            path,
            "trailing bytes after final record",
        ));
    }
    let scene = Scene {
        grid,
        sh_degree,
        prims,
    };
    scene.validate()?;
    Ok(scene)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::Scene;

    fn sample_scene() -> Scene<f32> {
        let grid = TimeGrid::new(4);
        let mut prims = Vec::new();
        for k in 0..3u32 {
            let mut p = Primitive::fresh(k, Vector3::new(k as f32, -0.5, 2.0), 1);
            p.v2 = Vector3::new(0.1, 0.2, -0.3);
            p.sh[1] = Vector3::new(0.05, -0.02, 0.01);
            p.opacity_logit = 0.7;
            prims.push(p);
        }
        Scene {
            grid,
            sh_degree: 1,
            prims,
        }
    }

    #[test]
    fn checkpoint_round_trips_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scene.r4gs");
        let scene = sample_scene();
        save_checkpoint(&path, &scene).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.prims.len(), scene.prims.len());
        assert_eq!(loaded.sh_degree, scene.sh_degree);
        for (a, b) in scene.prims.iter().zip(&loaded.prims) {
            assert_eq!(a.mu_tau.to_bits(), b.mu_tau.to_bits());
            assert_eq!(a.mu, b.mu);
            assert_eq!(a.v2, b.v2);
            assert_eq!(a.rot_c0, b.rot_c0);
            assert_eq!(a.sh, b.sh);
            assert_eq!(a.opacity_logit.to_bits(), b.opacity_logit.to_bits());
            assert_eq!(a.interval, b.interval);
        }
    }

    #[test]
    fn bad_magic_is_rejected_with_path() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.r4gs");
        std::fs::write(&path, b"NOPE????????").unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("junk.r4gs"), "{err}");
    }

    #[test]
    fn truncated_checkpoint_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scene.r4gs");
        save_checkpoint(&path, &sample_scene()).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
