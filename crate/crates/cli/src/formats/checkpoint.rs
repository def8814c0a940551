//! Scene checkpoint: `"FWCK"`, version, frame count and object count, then per
//! object a flag word, the mesh, shell and interior point sets and both
//! control layers. Every control point stores its position, covariance scale
//! and rotation followed by its Fenwick blob. All reals are little-endian
//! `f32`, so reading and rewriting a file reproduces it byte for byte.

use fenwarp_core::geom::{RawQuat, TriMesh, UnitQuat, Vec3};
use fenwarp_core::optim::{ObjectState, SceneState};
use fenwarp_core::skinning::{ControlLayer, ControlPoint, DeformModel};

use super::binary::{Reader, Writer};
use super::fwsq;
use crate::error::FormatError;

pub const MAGIC: &[u8; 4] = b"FWCK";
pub const VERSION: u32 = 1;

const FINE_ENABLED: u32 = 1;

fn put_vec3(w: &mut Writer, v: Vec3) {
    w.f64(v.x);
    w.f64(v.y);
    w.f64(v.z);
}

fn get_vec3(r: &mut Reader) -> Result<Vec3, FormatError> {
    Ok(Vec3::new(r.f64()?, r.f64()?, r.f64()?))
}

fn put_points(w: &mut Writer, pts: &[Vec3]) {
    w.len(pts.len());
    for &p in pts {
        put_vec3(w, p);
    }
}

fn get_points(r: &mut Reader) -> Result<Vec<Vec3>, FormatError> {
    let n = r.usize()?;
    r.expect(n, 12)?;
    (0..n).map(|_| get_vec3(r)).collect()
}

fn put_layer(w: &mut Writer, layer: &ControlLayer) {
    w.len(layer.len());
    w.len(layer.k);
    for cp in &layer.points {
        put_vec3(w, cp.position);
        put_vec3(w, cp.cov_scale);
        for c in cp.cov_rot.to_array() {
            w.f64(c);
        }
        fwsq::write_into(w, &cp.seq);
    }
}

fn get_layer(r: &mut Reader) -> Result<ControlLayer, FormatError> {
    let n = r.usize()?;
    let k = r.usize()?;
    r.expect(n, 40 + fwsq::HEADER_LEN)?;
    let points = (0..n)
        .map(|_| {
            let position = get_vec3(r)?;
            let cov_scale = get_vec3(r)?;
            let q = RawQuat::new(r.f64()?, r.f64()?, r.f64()?, r.f64()?);
            let cov_rot = UnitQuat::from_stored(q)?;
            let seq = fwsq::read_from(r)?;
            Ok(ControlPoint {
                position,
                cov_scale,
                cov_rot,
                seq,
            })
        })
        .collect::<Result<Vec<_>, FormatError>>()?;
    Ok(ControlLayer::new(points, k)?)
}

pub fn encode(state: &SceneState) -> Vec<u8> {
    let mut w = Writer::new();
    w.bytes(MAGIC);
    w.u32(VERSION);
    w.len(state.frames);
    w.len(state.objects.len());
    for o in &state.objects {
        w.u32(if o.model.fine_enabled { FINE_ENABLED } else { 0 });
        put_points(&mut w, &o.mesh.vertices);
        w.len(o.mesh.faces.len());
        for f in &o.mesh.faces {
            f.iter().for_each(|&i| w.u32(i));
        }
        put_points(&mut w, &o.shell);
        put_points(&mut w, &o.interior);
        put_layer(&mut w, &o.model.coarse);
        put_layer(&mut w, &o.model.fine);
    }
    w.into_inner()
}

pub fn decode(bytes: &[u8]) -> Result<SceneState, FormatError> {
    let mut r = Reader::new(bytes);
    r.magic(MAGIC)?;
    r.version(VERSION)?;
    let frames = r.usize()?;
    let count = r.usize()?;
    let mut objects = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let flags = r.u32()?;
        if flags & !FINE_ENABLED != 0 {
            return Err(FormatError::new(format!("unknown object flags {flags:#x}")));
        }
        let vertices = get_points(&mut r)?;
        let nf = r.usize()?;
        r.expect(nf, 12)?;
        let faces = (0..nf)
            .map(|_| Ok([r.u32()?, r.u32()?, r.u32()?]))
            .collect::<Result<Vec<_>, FormatError>>()?;
        let mesh = TriMesh::new(vertices, faces)?;
        let shell = get_points(&mut r)?;
        let interior = get_points(&mut r)?;
        let coarse = get_layer(&mut r)?;
        let fine = get_layer(&mut r)?;
        let mut model = DeformModel::new(coarse, fine)?;
        model.fine_enabled = flags & FINE_ENABLED != 0;
        if model.frame_count() != frames {
            return Err(FormatError::new(format!(
                "object has {} frames, header says {frames}",
                model.frame_count()
            )));
        }
        objects.push(ObjectState {
            mesh,
            shell,
            interior,
            model,
        });
    }
    r.finish()?;
    Ok(SceneState::new(objects)?)
}
