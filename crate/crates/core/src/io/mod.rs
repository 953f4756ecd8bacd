//! File formats: checkpoints, Middlebury .flo flow fields, binary PLY point
//! clouds, PFM/PNG images, and camera JSON.
//!
//! Everything is little-endian and written with fixed field orders so that
//! write → read round-trips bit-exactly; malformed inputs surface as typed
//! [`crate::Error`] values naming the offending file.

mod cameras;
mod checkpoint;
mod flo;
mod pfm;
mod png_io;
mod ply;

pub use cameras::{load_cameras, save_cameras};
pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use flo::{load_flo, save_flo};
pub use pfm::{load_pfm, save_pfm};
pub use png_io::{load_mask_png, load_rgb_png, save_gray_png, save_mask_png, save_rgb_png};
pub use ply::{load_ply, save_ply, PlyPoint};
