//! Reverse-mode gradients of the skinning forward pass.
//!
//! Gradients are first collected per control point and frame (on the pose
//! matrix, translation and unit rotation) and then pulled through the
//! normalization and the Fenwick prefix sums onto the stored nodes.
//! Covariance gradients flow through the blend weights.

use alloc::vec::Vec;

use super::{blend_weights, BoundPoints, BoundWeights, ControlLayer, DeformModel, LayerPoses, ModelPoses};
use crate::error::{check_range, Result};
use crate::fenwick::{scatter_grad, FenwickGrad, RigidDelta};
use crate::geom::quat::{hamilton_vjp, normalize_vjp, rotation_matrix_vjp};
use crate::geom::{quat_normalize, Mat3, RawQuat, UnitQuat, Vec3};

/// Which layer a parameter lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSel {
    Coarse,
    Fine,
}

/// Optimizer group of a flat parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    /// Raw rotation coefficient of Fenwick node `node` (1-based).
    NodeRot { node: usize },
    /// Translation component of Fenwick node `node` (1-based).
    NodeTrans { node: usize },
    /// Log of a covariance scale axis.
    LogScale,
    /// Covariance rotation coefficient.
    CovRot,
}

/// Address of one scalar parameter. Each control point owns a block of
/// `7 T + 7` scalars: the nodes (4 rotation + 3 translation each), then
/// three log-scales, then the covariance rotation quaternion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId {
    pub layer: LayerSel,
    pub point: usize,
    pub offset: usize,
}

pub fn block_len(frames: usize) -> usize {
    7 * frames + 7
}

pub fn group_of(offset: usize, frames: usize) -> ParamGroup {
    if offset < 7 * frames {
        let node = offset / 7 + 1;
        if offset % 7 < 4 {
            ParamGroup::NodeRot { node }
        } else {
            ParamGroup::NodeTrans { node }
        }
    } else if offset < 7 * frames + 3 {
        ParamGroup::LogScale
    } else {
        ParamGroup::CovRot
    }
}

impl ControlLayer {
    pub fn param(&self, point: usize, offset: usize) -> f64 {
        let cp = &self.points[point];
        let frames = cp.seq.frame_count();
        if offset < 7 * frames {
            cp.seq.node(offset / 7 + 1).to_array()[offset % 7]
        } else if offset < 7 * frames + 3 {
            libm::log(cp.cov_scale[offset - 7 * frames])
        } else {
            cp.cov_rot.to_array()[offset - 7 * frames - 3]
        }
    }

    /// Writes one parameter. Covariance rotations are renormalized.
    pub fn set_param(&mut self, point: usize, offset: usize, v: f64) -> Result<()> {
        let cp = &mut self.points[point];
        let frames = cp.seq.frame_count();
        if offset < 7 * frames {
            let node = cp.seq.node_mut(offset / 7 + 1);
            let mut a = node.to_array();
            a[offset % 7] = v;
            *node = RigidDelta::from_array(a);
        } else if offset < 7 * frames + 3 {
            let mut s = cp.cov_scale.to_array();
            s[offset - 7 * frames] = libm::exp(v);
            cp.cov_scale = Vec3::from_array(s);
        } else {
            let mut q = cp.cov_rot.to_array();
            q[offset - 7 * frames - 3] = v;
            cp.cov_rot = quat_normalize(RawQuat::from_array(q))?;
        }
        Ok(())
    }

    /// All parameters, point-major.
    pub fn to_flat(&self) -> Vec<f64> {
        let frames = self.frame_count();
        let bl = block_len(frames);
        let mut out = Vec::with_capacity(self.len() * bl);
        for cp in &self.points {
            for n in cp.seq.nodes() {
                out.extend_from_slice(&n.to_array());
            }
            out.extend(cp.cov_scale.to_array().iter().map(|&s| libm::log(s)));
            out.extend_from_slice(&cp.cov_rot.to_array());
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        let frames = self.frame_count();
        let bl = block_len(frames);
        assert_eq!(flat.len(), self.len() * bl, "flat parameter length");
        for (cp, block) in self.points.iter_mut().zip(flat.chunks(bl)) {
            for (j, n) in cp.seq.nodes_mut().iter_mut().enumerate() {
                *n = RigidDelta::from_array(block[7 * j..7 * j + 7].try_into().unwrap());
            }
            let s = &block[7 * frames..7 * frames + 3];
            cp.cov_scale = Vec3::new(libm::exp(s[0]), libm::exp(s[1]), libm::exp(s[2]));
            cp.cov_rot = quat_normalize(RawQuat::from_array(block[7 * frames + 3..].try_into().unwrap()))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlGrad {
    pub nodes: FenwickGrad,
    pub log_scale: Vec3,
    pub cov_rot: RawQuat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub points: Vec<ControlGrad>,
}

impl LayerGrad {
    pub fn zeros(n: usize, frames: usize) -> LayerGrad {
        LayerGrad {
            points: (0..n)
                .map(|_| ControlGrad {
                    nodes: FenwickGrad::zeros(frames),
                    log_scale: Vec3::ZERO,
                    cov_rot: RawQuat::ZERO,
                })
                .collect(),
        }
    }

    pub fn get(&self, point: usize, offset: usize) -> f64 {
        let g = &self.points[point];
        let frames = g.nodes.nodes.len();
        if offset < 7 * frames {
            g.nodes.nodes[offset / 7].to_array()[offset % 7]
        } else if offset < 7 * frames + 3 {
            g.log_scale[offset - 7 * frames]
        } else {
            g.cov_rot.to_array()[offset - 7 * frames - 3]
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for g in &self.points {
            for n in &g.nodes.nodes {
                out.extend_from_slice(&n.to_array());
            }
            out.extend_from_slice(&g.log_scale.to_array());
            out.extend_from_slice(&g.cov_rot.to_array());
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrad {
    pub coarse: LayerGrad,
    pub fine: LayerGrad,
}

impl ModelGrad {
    pub fn get(&self, id: ParamId) -> f64 {
        match id.layer {
            LayerSel::Coarse => self.coarse.get(id.point, id.offset),
            LayerSel::Fine => self.fine.get(id.point, id.offset),
        }
    }
}

impl DeformModel {
    pub fn layer(&self, sel: LayerSel) -> &ControlLayer {
        match sel {
            LayerSel::Coarse => &self.coarse,
            LayerSel::Fine => &self.fine,
        }
    }

    pub fn layer_mut(&mut self, sel: LayerSel) -> &mut ControlLayer {
        match sel {
            LayerSel::Coarse => &mut self.coarse,
            LayerSel::Fine => &mut self.fine,
        }
    }

    pub fn param(&self, id: ParamId) -> f64 {
        self.layer(id.layer).param(id.point, id.offset)
    }

    pub fn set_param(&mut self, id: ParamId, v: f64) -> Result<()> {
        self.layer_mut(id.layer).set_param(id.point, id.offset, v)
    }

    /// Gradient of `Σ_t Σ_i ⟨grads[t][i], x_i^t⟩` over bound points, with
    /// `grads` frame-major like the positions.
    pub fn backprop_positions(&self, pts: &BoundPoints, w: &BoundWeights, poses: &ModelPoses, grads: &[Vec3]) -> ModelGrad {
        let n = pts.len();
        let frames = self.frame_count();
        assert_eq!(grads.len(), n * frames, "gradient length");
        let mut coarse = LayerAccum::new(&self.coarse);
        let mut fine = poses.fine.as_ref().map(|_| LayerAccum::new(&self.fine));
        let (kc, kf) = (pts.coarse.k, pts.fine.k);
        let mut gb_c = alloc::vec![0.0; kc];
        let mut gb_f = alloc::vec![0.0; kf];
        for (i, &x) in pts.positions.iter().enumerate() {
            let (idx_c, beta_c) = (pts.coarse.of(i), &w.coarse[i * kc..(i + 1) * kc]);
            gb_c.iter_mut().for_each(|g| *g = 0.0);
            gb_f.iter_mut().for_each(|g| *g = 0.0);
            for t in 1..=frames {
                let u = grads[(t - 1) * n + i];
                if u == Vec3::ZERO {
                    continue;
                }
                coarse.add_displacement(&self.coarse, &poses.coarse, x, t, idx_c, beta_c, u, &mut gb_c);
                if let (Some(acc), Some(fp)) = (fine.as_mut(), poses.fine.as_ref()) {
                    acc.add_displacement(&self.fine, fp, x, t, pts.fine.of(i), &w.fine[i * kf..(i + 1) * kf], u, &mut gb_f);
                }
            }
            coarse.add_weights(&self.coarse, x, idx_c, beta_c, w.coarse_fallback[i], &gb_c);
            if let Some(acc) = fine.as_mut() {
                acc.add_weights(&self.fine, x, pts.fine.of(i), &w.fine[i * kf..(i + 1) * kf], w.fine_fallback[i], &gb_f);
            }
        }
        ModelGrad {
            coarse: coarse.finish(&self.coarse, &poses.coarse),
            fine: match (fine, poses.fine.as_ref()) {
                (Some(acc), Some(fp)) => acc.finish(&self.fine, fp),
                _ => LayerGrad::zeros(self.fine.len(), frames),
            },
        }
    }
}

/// Gradient accumulator for one layer.
#[derive(Debug, Clone)]
pub struct LayerAccum {
    n: usize,
    frames: usize,
    d_mat: Vec<Mat3>,
    d_trans: Vec<Vec3>,
    d_rot: Vec<RawQuat>,
    d_log_scale: Vec<Vec3>,
    d_cov_mat: Vec<Mat3>,
}

impl LayerAccum {
    pub fn new(layer: &ControlLayer) -> LayerAccum {
        let n = layer.len();
        let frames = layer.frame_count();
        LayerAccum {
            n,
            frames,
            d_mat: alloc::vec![Mat3::ZERO; n * frames],
            d_trans: alloc::vec![Vec3::ZERO; n * frames],
            d_rot: alloc::vec![RawQuat::ZERO; n * frames],
            d_log_scale: alloc::vec![Vec3::ZERO; n],
            d_cov_mat: alloc::vec![Mat3::ZERO; n],
        }
    }

    /// Backprop of `displacement` for an upstream gradient `u`; adds the
    /// gradient on each blend weight to `gbeta`.
    #[allow(clippy::too_many_arguments)]
    pub fn add_displacement(
        &mut self,
        layer: &ControlLayer,
        poses: &LayerPoses,
        x: Vec3,
        t: usize,
        idx: &[u32],
        beta: &[f64],
        u: Vec3,
        gbeta: &mut [f64],
    ) {
        for ((&k, &b), gb) in idx.iter().zip(beta).zip(gbeta.iter_mut()) {
            let a = poses.at(t, k as usize);
            let d = x - layer.points[k as usize].position;
            self.d_mat[a].add_outer(b, u, d);
            self.d_trans[a] += u * b;
            *gb += u.dot(poses.mat[a].mul_vec(d) - d + poses.trans[a]);
        }
    }

    /// Backprop of `blended_rotation` for an upstream gradient `g` on the raw blend.
    pub fn add_blended_rotation(&mut self, poses: &LayerPoses, t: usize, idx: &[u32], beta: &[f64], g: RawQuat, gbeta: &mut [f64]) {
        for ((&k, &b), gb) in idx.iter().zip(beta).zip(gbeta.iter_mut()) {
            let a = poses.at(t, k as usize);
            self.d_rot[a] += g * b;
            *gb += poses.rot[a].raw().dot(g);
        }
    }

    /// Pulls weight gradients onto the covariance parameters of the neighbors.
    pub fn add_weights(&mut self, layer: &ControlLayer, x: Vec3, idx: &[u32], beta: &[f64], fallback: bool, gbeta: &[f64]) {
        if fallback {
            return;
        }
        let mean: f64 = beta.iter().zip(gbeta).map(|(b, g)| b * g).sum();
        for ((&k, &b), &g) in idx.iter().zip(beta).zip(gbeta) {
            let dm = -0.5 * b * (g - mean);
            if dm == 0.0 {
                continue;
            }
            let cp = &layer.points[k as usize];
            let (_, u) = cp.mahalanobis(x);
            let s2 = Vec3::new(cp.cov_scale.x * cp.cov_scale.x, cp.cov_scale.y * cp.cov_scale.y, cp.cov_scale.z * cp.cov_scale.z);
            let k = k as usize;
            self.d_log_scale[k] += Vec3::new(
                -2.0 * u.x * u.x / s2.x,
                -2.0 * u.y * u.y / s2.y,
                -2.0 * u.z * u.z / s2.z,
            ) * dm;
            let v = Vec3::new(2.0 * u.x / s2.x, 2.0 * u.y / s2.y, 2.0 * u.z / s2.z);
            self.d_cov_mat[k].add_outer(dm, x - cp.position, v);
        }
    }

    pub fn merge(&mut self, o: &LayerAccum) {
        for (a, b) in self.d_mat.iter_mut().zip(&o.d_mat) {
            a.add_assign(b);
        }
        for (a, b) in self.d_trans.iter_mut().zip(&o.d_trans) {
            *a += *b;
        }
        for (a, b) in self.d_rot.iter_mut().zip(&o.d_rot) {
            *a += *b;
        }
        for (a, b) in self.d_log_scale.iter_mut().zip(&o.d_log_scale) {
            *a += *b;
        }
        for (a, b) in self.d_cov_mat.iter_mut().zip(&o.d_cov_mat) {
            a.add_assign(b);
        }
    }

    /// Gradients on the stored parameters.
    pub fn finish(&self, layer: &ControlLayer, poses: &LayerPoses) -> LayerGrad {
        let mut out = LayerGrad::zeros(self.n, self.frames);
        for (k, g) in out.points.iter_mut().enumerate() {
            for t in 1..=self.frames {
                let a = poses.at(t, k);
                let g_unit = rotation_matrix_vjp(poses.rot[a].raw(), &self.d_mat[a]) + self.d_rot[a];
                let g_raw = normalize_vjp(poses.raw_rot[a], g_unit);
                scatter_grad(&mut g.nodes, t, &RigidDelta::new(g_raw, self.d_trans[a]));
            }
            g.log_scale = self.d_log_scale[k];
            let q = layer.points[k].cov_rot.raw();
            g.cov_rot = normalize_vjp(q, rotation_matrix_vjp(q, &self.d_cov_mat[k]));
        }
        out
    }
}

/// Exact gradient of a scalar objective `⟨grad_pos, x_t⟩ + ⟨grad_rot, q_t⟩`
/// of one sample's [`super::deform_full`] output with respect to every
/// parameter of the model.
pub fn deform_vjp(x: Vec3, q: UnitQuat, model: &DeformModel, t: usize, grad_pos: Vec3, grad_rot: RawQuat) -> Result<ModelGrad> {
    check_range("frame", t, 1, model.frame_count())?;
    let pts = model.bind(core::slice::from_ref(&x));
    let poses = model.poses()?;
    let frames = model.frame_count();

    let layer_pass = |layer: &ControlLayer, lp: &LayerPoses, idx: &[u32], g_blend: Option<RawQuat>| {
        let w = blend_weights(x, layer, idx);
        let mut acc = LayerAccum::new(layer);
        let mut gbeta = alloc::vec![0.0; idx.len()];
        acc.add_displacement(layer, lp, x, t, idx, &w.beta, grad_pos, &mut gbeta);
        if let Some(g) = g_blend {
            acc.add_blended_rotation(lp, t, idx, &w.beta, g, &mut gbeta);
        }
        acc.add_weights(layer, x, idx, &w.beta, w.fallback, &gbeta);
        acc.finish(layer, lp)
    };

    // forward through the orientation chain
    let wc = blend_weights(x, &model.coarse, pts.coarse.of(0));
    let bc_raw = poses.coarse.blended_rotation(t, pts.coarse.of(0), &wc.beta)?;
    let bc = quat_normalize(bc_raw)?.raw();
    let prod1 = bc.hamilton(q.raw());
    let q1 = quat_normalize(prod1)?.raw();

    let (g_q1, fine) = match &poses.fine {
        Some(fp) => {
            let wf = blend_weights(x, &model.fine, pts.fine.of(0));
            let bf_raw = fp.blended_rotation(t, pts.fine.of(0), &wf.beta)?;
            let bf = quat_normalize(bf_raw)?.raw();
            let prod2 = bf.hamilton(q1);
            let g_prod2 = normalize_vjp(prod2, grad_rot);
            let (g_bf, g_q1) = hamilton_vjp(bf, q1, g_prod2);
            let g_bf_raw = normalize_vjp(bf_raw, g_bf);
            (g_q1, layer_pass(&model.fine, fp, pts.fine.of(0), Some(g_bf_raw)))
        }
        None => (grad_rot, LayerGrad::zeros(model.fine.len(), frames)),
    };
    let g_prod1 = normalize_vjp(prod1, g_q1);
    let (g_bc, _) = hamilton_vjp(bc, q.raw(), g_prod1);
    let g_bc_raw = normalize_vjp(bc_raw, g_bc);
    let coarse = layer_pass(&model.coarse, &poses.coarse, pts.coarse.of(0), Some(g_bc_raw));
    Ok(ModelGrad { coarse, fine })
}
