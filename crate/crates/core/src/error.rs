use alloc::string::String;

use thiserror::Error;

/// Errors raised by the numeric core.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("mesh has no vertices or faces")]
    EmptyMesh,
    #[error("face {face} references vertex {index} but mesh has {count} vertices")]
    FaceIndex { face: usize, index: usize, count: usize },
    #[error("voxel size must be positive, got {0}")]
    InvalidVoxelSize(f64),
    #[error("empty interior: no voxel center has a non-positive signed distance")]
    EmptyInterior,
    #[error("empty shell: no voxel center within the distance threshold")]
    EmptyShell,
    #[error("voxel size search failed: {0}")]
    VoxelSearch(&'static str),
    #[error("{what} = {value} outside [{lo}, {hi}]")]
    OutOfRange {
        what: &'static str,
        value: i64,
        lo: i64,
        hi: i64,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("quaternion norm {0:e} too small to normalize (antipodal cancellation?)")]
    ZeroNormQuat(f64),
    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("noise level {0} outside (0, 1)")]
    InvalidTau(f64),
    #[error("weight integral {0} is not finite and positive")]
    DegenerateWeight(f64),
    #[error("guidance oracle failed: {0}")]
    Oracle(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("first frame of a prefix sequence must be the identity")]
    NonIdentityFirstFrame,
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn check_range(what: &'static str, value: usize, lo: usize, hi: usize) -> Result<()> {
    if value < lo || value > hi {
        return Err(Error::OutOfRange {
            what,
            value: value as i64,
            lo: lo as i64,
            hi: hi as i64,
        });
    }
    Ok(())
}
