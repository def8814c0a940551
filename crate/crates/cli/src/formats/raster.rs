//! Flow raster: width, height and channel count (3) as `u32`, then row-major
//! little-endian `f32` pixels.

use fenwarp_core::geom::Vec3;
use fenwarp_core::regularizers::FlowImage;

use super::binary::{Reader, Writer};
use crate::error::FormatError;

pub const CHANNELS: u32 = 3;

pub fn encode(img: &FlowImage) -> Vec<u8> {
    let mut w = Writer::new();
    w.len(img.width);
    w.len(img.height);
    w.u32(CHANNELS);
    for p in &img.data {
        w.f64(p.x);
        w.f64(p.y);
        w.f64(p.z);
    }
    w.into_inner()
}

pub fn decode(bytes: &[u8]) -> Result<FlowImage, FormatError> {
    let mut r = Reader::new(bytes);
    let width = r.usize()?;
    let height = r.usize()?;
    let ch = r.u32()?;
    if ch != CHANNELS {
        return Err(FormatError::new(format!("{ch} channels, expected {CHANNELS}")));
    }
    let vals = r.f32s(width * height * 3)?;
    r.finish()?;
    let data = vals
        .chunks_exact(3)
        .map(|c| Vec3::new(c[0] as f64, c[1] as f64, c[2] as f64))
        .collect();
    Ok(FlowImage { width, height, data })
}
