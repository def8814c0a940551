//! Fenwick sequence blob: `"FWSQ"`, version, frame count, values per node,
//! then the node array in index order as little-endian `f32`.

use fenwarp_core::fenwick::{FenwickSeq, RigidDelta};

use super::binary::{Reader, Writer};
use crate::error::FormatError;

pub const MAGIC: &[u8; 4] = b"FWSQ";
pub const VERSION: u32 = 1;
pub const NODE_WIDTH: u32 = 7;
pub const HEADER_LEN: usize = 16;

pub fn write_into(w: &mut Writer, seq: &FenwickSeq) {
    w.bytes(MAGIC);
    w.u32(VERSION);
    w.len(seq.frame_count());
    w.u32(NODE_WIDTH);
    for n in seq.nodes() {
        for v in n.to_array() {
            w.f64(v);
        }
    }
}

pub fn read_from(r: &mut Reader) -> Result<FenwickSeq, FormatError> {
    r.magic(MAGIC)?;
    r.version(VERSION)?;
    let frames = r.usize()?;
    let width = r.u32()?;
    if width != NODE_WIDTH {
        return Err(FormatError::new(format!("node width {width}, expected {NODE_WIDTH}")));
    }
    if frames == 0 {
        return Err(FormatError::new("sequence has no frames"));
    }
    let vals = r.f32s(frames * NODE_WIDTH as usize)?;
    let nodes = vals
        .chunks_exact(NODE_WIDTH as usize)
        .map(|c| RigidDelta::from_array(std::array::from_fn(|i| c[i] as f64)))
        .collect();
    Ok(FenwickSeq::from_nodes(nodes)?)
}

pub fn encode(seq: &FenwickSeq) -> Vec<u8> {
    let mut w = Writer::new();
    write_into(&mut w, seq);
    w.into_inner()
}

pub fn decode(bytes: &[u8]) -> Result<FenwickSeq, FormatError> {
    let mut r = Reader::new(bytes);
    let seq = read_from(&mut r)?;
    r.finish()?;
    Ok(seq)
}
