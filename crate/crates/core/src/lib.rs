//! Hierarchical 4D scene deformation optimized by score distillation from
//! rectified-flow velocity predictors.
//!
//! Each object carries two layers of control points (coarse and fine). Every
//! control point stores its per-frame rigid motion in a Fenwick tree of raw
//! deltas, so neighboring frames share parameters. Points are deformed by
//! linear blend skinning, and training pulls a point-track observable towards
//! what a velocity oracle predicts, regularized by temporal smoothness and
//! as-rigid-as-possible terms.
//!
//! The crate is `no_std` and needs only `alloc`.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod distill;
pub mod error;
pub mod fenwick;
pub mod geom;
pub mod optim;
pub mod regularizers;
pub mod skinning;

pub use error::{Error, Result};
