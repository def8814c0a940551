//! Point-track file: `"PTRK"`, version, object count, frame count, one sample
//! count per object, then positions as little-endian `f32` in object, frame,
//! sample, xyz order.

use fenwarp_core::distill::{Latent, LatentLayout};

use super::binary::{Reader, Writer};
use crate::error::FormatError;

pub const MAGIC: &[u8; 4] = b"PTRK";
pub const VERSION: u32 = 1;

pub fn header_len(objects: usize) -> usize {
    16 + 4 * objects
}

pub fn encode(latent: &Latent) -> Vec<u8> {
    let l = &latent.layout;
    let mut w = Writer::new();
    w.bytes(MAGIC);
    w.u32(VERSION);
    w.len(l.samples.len());
    w.len(l.frames);
    for &s in &l.samples {
        w.len(s);
    }
    for &v in &latent.z {
        w.f64(v);
    }
    w.into_inner()
}

pub fn decode(bytes: &[u8]) -> Result<Latent, FormatError> {
    let mut r = Reader::new(bytes);
    r.magic(MAGIC)?;
    r.version(VERSION)?;
    let objects = r.usize()?;
    let frames = r.usize()?;
    r.expect(objects, 4)?;
    let samples = (0..objects).map(|_| r.usize()).collect::<Result<Vec<_>, _>>()?;
    let layout = LatentLayout { frames, samples };
    let n = layout.len();
    if r.remaining() != 4 * n {
        return Err(FormatError::new(format!(
            "payload is {} bytes, header implies {}",
            r.remaining(),
            4 * n
        )));
    }
    let z = r.f32s(n)?.into_iter().map(f64::from).collect();
    r.finish()?;
    Ok(Latent { layout, z })
}
