//! Middlebury .flo optical-flow files.
//!
//! Layout: the float 202021.25 as a little-endian sanity tag ("PIEH"),
//! width i32, height i32, then row-major interleaved (u, v) float pairs,
//! displacements in pixels.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

const TAG: f32 = 202021.25;

pub fn save_flo(path: &Path, width: u32, height: u32, flow: &[f32]) -> Result<()> {
    if flow.len() != (width * height * 2) as usize {
        return Err(Error::Contract(format!(
            "flow buffer has {} floats, expected {}",
            flow.len(),
            width * height * 2
        )));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut out = Vec::with_capacity(12 + flow.len() * 4);
    out.extend_from_slice(&TAG.to_le_bytes());
    out.extend_from_slice(&(width as i32).to_le_bytes());
    out.extend_from_slice(&(height as i32).to_le_bytes());
    for v in flow {
        out.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&out).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn load_flo(path: &Path) -> Result<(u32, u32, Vec<f32>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut head = [0u8; 12];
    r.read_exact(&mut head)
        .map_err(|_| Error::format("flo", path, "file shorter than the 12-byte header"))?;
    let tag = f32::from_le_bytes(head[0..4].try_into().unwrap());
    if tag != TAG {
        return Err(Error::format(
            "flo",
            path,
            format!("bad sanity tag {tag}, expected {TAG}"),
        ));
    }
    let width = i32::from_le_bytes(head[4..8].try_into().unwrap());
    let height = i32::from_le_bytes(head[8..12].try_into().unwrap());
    if width <= 0 || height <= 0 || width > 1 << 16 || height > 1 << 16 {
        return Err(Error::format(
            "flo",
            path,
            format!("implausible dimensions {width}x{height}"),
        ));
    }
    let count = (width as usize) * (height as usize) * 2;
    let mut bytes = vec![0u8; count * 4];
    r.read_exact(&mut bytes)
        .map_err(|_| Error::format("flo", path, "truncated flow payload"))?;
    let mut flow = Vec::with_capacity(count);
    for c in bytes.chunks_exact(4) {
        flow.push(f32::from_le_bytes(c.try_into().unwrap()));
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra).map_err(|e| Error::io(path, e))? != 0 {
        return Err(Error::format("flo", path, "trailing bytes after payload"));
    }
    Ok((width as u32, height as u32, flow))
}
