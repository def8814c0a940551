//! File formats. Binary formats are little-endian with `f32` reals.

pub mod binary;
pub mod checkpoint;
pub mod fwsq;
pub mod mesh;
pub mod metrics;
pub mod raster;
pub mod replay;
pub mod tracks;

use std::fs;
use std::path::Path;

use fenwarp_core::distill::Latent;
use fenwarp_core::geom::TriMesh;
use fenwarp_core::optim::SceneState;

use crate::error::{CliError, FormatError, Result};

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn decode_file<T>(path: &Path, f: impl FnOnce(&[u8]) -> Result<T, FormatError>) -> Result<T> {
    f(&read_bytes(path)?).map_err(|e| CliError::format(path, e))
}

/// Reads `.obj` or `.ply` by extension.
pub fn load_mesh(path: &Path) -> Result<TriMesh> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase);
    match ext.as_deref() {
        Some("obj") => decode_file(path, mesh::parse_obj),
        Some("ply") => decode_file(path, mesh::parse_ply),
        _ => Err(CliError::format(path, FormatError::new("expected a .obj or .ply mesh"))),
    }
}

pub fn load_checkpoint(path: &Path) -> Result<SceneState> {
    decode_file(path, checkpoint::decode)
}

pub fn save_checkpoint(path: &Path, state: &SceneState) -> Result<()> {
    write_bytes(path, &checkpoint::encode(state))
}

pub fn load_tracks(path: &Path) -> Result<Latent> {
    decode_file(path, tracks::decode)
}

pub fn save_tracks(path: &Path, latent: &Latent) -> Result<()> {
    write_bytes(path, &tracks::encode(latent))
}

pub fn load_replay(path: &Path) -> Result<replay::Replay> {
    decode_file(path, replay::decode)
}

pub fn save_replay(path: &Path, r: &replay::Replay) -> Result<()> {
    write_bytes(path, &replay::encode(r))
}
