//! PFM (portable float map) images, 1 or 3 channels.
//!
//! Header: "PF" (color) or "Pf" (gray), dimensions, then a scale whose sign
//! encodes endianness (negative = little-endian, which is what we write).
//! Pixel rows are stored bottom-to-top per the format's convention; the
//! in-memory buffers here are top-down row-major.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub fn save_pfm(path: &Path, width: u32, height: u32, channels: usize, data: &[f32]) -> Result<()> {
    if channels != 1 && channels != 3 {
        return Err(Error::Contract(format!("PFM supports 1 or 3 channels, got {channels}")));
    }
    if data.len() != (width * height) as usize * channels {
        return Err(Error::Contract(format!(
            "PFM buffer has {} floats, expected {}",
            data.len(),
            (width * height) as usize * channels
        )));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let tag = if channels == 3 { "PF" } else { "Pf" };
    let header = format!("{tag}\n{width} {height}\n-1.0\n");
    let mut bytes = Vec::with_capacity(header.len() + data.len() * 4);
    bytes.extend_from_slice(header.as_bytes());
    let row = width as usize * channels;
    for y in (0..height as usize).rev() {
        for v in &data[y * row..(y + 1) * row] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn load_pfm(path: &Path) -> Result<(u32, u32, usize, Vec<f32>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut raw = Vec::new();
    r.read_to_end(&mut raw).map_err(|e| Error::io(path, e))?;

    // three whitespace-delimited header tokens, then binary payload
    let mut pos = 0usize;
    let mut token = |raw: &[u8]| -> Result<String> {
        while pos < raw.len() && raw[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < raw.len() && !raw[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format("pfm", path, "truncated header"));
        }
        let s = std::str::from_utf8(&raw[start..pos])
            .map_err(|_| Error::format("pfm", path, "non-ASCII header"))?
            .to_string();
        pos += 1; // single whitespace after each token
        Ok(s)
    };
    let tag = token(&raw)?;
    let channels = match tag.as_str() {
        "PF" => 3usize,
        "Pf" => 1usize,
        other => {
            return Err(Error::format("pfm", path, format!("bad tag {other:?}")));
        }
    };
    let width: u32 = token(&raw)?
        .parse()
        .map_err(|_| Error::format("pfm", path, "bad width"))?;
    let height: u32 = token(&raw)?
        .parse()
        .map_err(|_| Error::format("pfm", path, "bad height"))?;
    let scale: f32 = token(&raw)?
        .parse()
        .map_err(|_| Error::format("pfm", path, "bad scale"))?;
    if scale >= 0.0 {
        return Err(Error::format("pfm", path, "big-endian PFM not supported"));
    }
    let count = (width * height) as usize * channels;
    let body = &raw[pos..];
    if body.len() != count * 4 {
        return Err(Error::format(
            "pfm",
            path,
            format!("payload {} bytes, expected {}", body.len(), count * 4),
        ));
    }
    let mut bottom_up = Vec::with_capacity(count);
    for c in body.chunks_exact(4) {
        bottom_up.push(f32::from_le_bytes(c.try_into().unwrap()));
    }
    let row = width as usize * channels;
    let mut data = vec![0.0f32; count];
    for y in 0..height as usize {
        let src = (height as usize - 1 - y) * row;
        data[y * row..(y + 1) * row].copy_from_slice(&bottom_up[src..src + row]);
    }
    Ok((width, height, channels, data))
}
