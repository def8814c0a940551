#![allow(dead_code)]

use fenwarp_core::fenwick::{FenwickSeq, RigidDelta};
use fenwarp_core::geom::{RawQuat, TriMesh, UnitQuat, Vec3};
use fenwarp_core::optim::{InitConfig, ObjectState, SceneState};
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uni(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * ((rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64)
}

pub fn small_init(frames: usize) -> InitConfig {
    InitConfig {
        frames,
        shell_target: 600,
        coarse: 8,
        fine: 24,
        ..InitConfig::default()
    }
}

pub fn sphere_scene(frames: usize) -> SceneState {
    let mesh = TriMesh::icosphere(Vec3::ZERO, 1.0, 2);
    SceneState::new(vec![ObjectState::from_mesh(mesh, &small_init(frames)).unwrap()]).unwrap()
}

/// Writes random motion into every node after the first.
pub fn randomize(state: &mut SceneState, seed: u64, amp: f64) {
    let mut r = rng(seed);
    for o in &mut state.objects {
        o.model.fine_enabled = true;
        for layer in [&mut o.model.coarse, &mut o.model.fine] {
            for cp in &mut layer.points {
                for j in 2..=cp.seq.frame_count() {
                    let q = RawQuat::new(uni(&mut r, -amp, amp), uni(&mut r, -amp, amp), uni(&mut r, -amp, amp), uni(&mut r, -amp, amp));
                    let t = Vec3::new(uni(&mut r, -amp, amp), uni(&mut r, -amp, amp), uni(&mut r, -amp, amp));
                    *cp.seq.node_mut(j) = RigidDelta::new(q, t);
                }
                cp.cov_rot = UnitQuat::from_axis_angle(Vec3::new(uni(&mut r, -1.0, 1.0), 0.3, 1.0), uni(&mut r, -1.0, 1.0));
            }
        }
    }
}

/// Every control point of both layers holds `rot` and `trans` about the
/// origin from frame 2 on, which makes the deformation a global rigid map.
pub fn global_rigid(state: &mut SceneState, rot: UnitQuat, trans: Vec3) {
    for o in &mut state.objects {
        for (li, layer) in [&mut o.model.coarse, &mut o.model.fine].into_iter().enumerate() {
            for cp in &mut layer.points {
                let frames = cp.seq.frame_count();
                let mut prefix = vec![RigidDelta::new(RawQuat::IDENTITY, Vec3::ZERO); frames];
                if li == 0 {
                    // rotation about the origin expressed about the control point
                    let t = trans + rot.rotate(cp.position) - cp.position;
                    for p in prefix.iter_mut().skip(1) {
                        *p = RigidDelta::new(rot.raw(), t);
                    }
                }
                cp.seq = FenwickSeq::from_prefix(&prefix).unwrap();
            }
        }
    }
}

pub fn obj_text(mesh: &TriMesh) -> String {
    let mut s = String::new();
    for v in &mesh.vertices {
        s.push_str(&format!("v {} {} {}\n", v.x, v.y, v.z));
    }
    for f in &mesh.faces {
        s.push_str(&format!("f {} {} {}\n", f[0] + 1, f[1] + 1, f[2] + 1));
    }
    s
}
