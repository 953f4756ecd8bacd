//! Binary little-endian PLY point clouds with positions and 8-bit colors.
//!
//! The reader insists on the exact property layout the writer emits
//! (float x, y, z; uchar red, green, blue) — anything else is a format error
//! naming the file, rather than a silent misread.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PlyPoint {
    pub position: Vector3<f32>,
    pub color: [u8; 3],
}

pub fn save_ply(path: &Path, points: &[PlyPoint]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let header = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\n\
         property float x\nproperty float y\nproperty float z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\n\
         end_header\n",
        points.len()
    );
    let mut bytes = Vec::with_capacity(header.len() + points.len() * 15);
    bytes.extend_from_slice(header.as_bytes());
    for p in points {
        for i in 0..3 {
            bytes.extend_from_slice(&p.position[i].to_le_bytes());
        }
        bytes.extend_from_slice(&p.color);
    }
    w.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn load_ply(path: &Path) -> Result<Vec<PlyPoint>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut raw = Vec::new();
    r.read_to_end(&mut raw).map_err(|e| Error::io(path, e))?;

    // the header is ASCII lines up to and including "end_header\n"
    let header_end = raw
        .windows(11)
        .position(|w| w == b"end_header\n")
        .ok_or_else(|| Error::format("ply", path, "missing end_header"))?
        + 11;
    let header = std::str::from_utf8(&raw[..header_end])
        .map_err(|_| Error::format("ply", path, "non-ASCII header"))?;
    let mut lines = header.lines();
    if lines.next() != Some("ply") {
        return Err(Error::format("ply", path, "first line is not \"ply\""));
    }
    let mut count: Option<usize> = None;
    let mut format_ok = false;
    let mut props: Vec<String> = Vec::new();
    for line in lines {
        let line = line.trim();
        if line == "end_header" {
            break;
        }
        if line.starts_with("comment") {
            continue;
        }
        if line == "format binary_little_endian 1.0" {
            format_ok = true;
        } else if let Some(rest) = line.strip_prefix("element vertex ") {
            count = Some(rest.trim().parse().map_err(|_| {
                Error::format("ply", path, format!("bad vertex count {rest:?}"))
            })?);
        } else if line.starts_with("element ") {
            return Err(Error::format(
                "ply",
                path,
                format!("unsupported element: {line}"),
            ));
        } else if line.starts_with("property ") {
            props.push(line.to_string());
        } else if line.starts_with("format ") {
            return Err(Error::format(
                "ply",
                path,
                format!("unsupported format: {line}"),
            ));
        }
    }
    if !format_ok {
        return Err(Error::format("ply", path, "missing binary_little_endian format line"));
    }
    let expected = [
        "property float x",
        "property float y",
        "property float z",
        "property uchar red",
        "property uchar green",
        "property uchar blue",
    ];
    if props != expected {
        return Err(Error::format(
            "ply",
            path,
            format!("unsupported property layout {props:?}"),
        ));
    }
    let count = count.ok_or_else(|| Error::format("ply", path, "missing element vertex line"))?;
    let body = &raw[header_end..];
    if body.len() != count * 15 {
        return Err(Error::format(
            "ply",
            path,
            format!(
                "payload is {} bytes, expected {} for {count} vertices",
                body.len(),
                count * 15
            ),
        ));
    }
    let mut points = Vec::with_capacity(count);
    for rec in body.chunks_exact(15) {
        let x = f32::from_le_bytes(rec[0..4].try_into().unwrap());
        let y = f32::from_le_bytes(rec[4..8].try_into().unwrap());
        let z = f32::from_le_bytes(rec[8..12].try_into().unwrap());
        points.push(PlyPoint {
            position: Vector3::new(x, y, z),
            color: [rec[12], rec[13], rec[14]],
        });
    }
    Ok(points)
}
