//! Two-level control-point skinning.
//!
//! A control point has a fixed center `p`, a covariance `Σ = R diag(s²) Rᵀ`
//! and a [`FenwickSeq`] of rigid motions. A point `x` is moved by its `K`
//! nearest control points with Gaussian blend weights
//! `β_k ∝ exp(-½ (x - p_k)ᵀ Σ_k⁻¹ (x - p_k))`:
//!
//! ```text
//! x_t = Σ β_k (R_k(x - p_k) + p_k + T_k)
//!     = x + Σ β_k ((R_k - I)(x - p_k) + T_k)      (Σ β_k = 1)
//! ```
//!
//! The second form is what gets evaluated, so identity motions leave points
//! bit-unchanged. Orientations blend raw quaternion coefficients. The fine
//! layer adds its displacement, computed from canonical positions, on top of
//! the coarse result, and composes its rotation on the left.

mod adjoint;

pub use adjoint::{
    block_len, deform_vjp, group_of, ControlGrad, LayerAccum, LayerGrad, LayerSel, ModelGrad, ParamGroup,
    ParamId,
};

use alloc::vec::Vec;

use crate::error::{check_range, Error, Result};
use crate::fenwick::FenwickSeq;
use crate::geom::{fps, kmeans, knn, quat_blend, quat_compose, quat_normalize, KnnGrid, Mat3, RawQuat, TriMesh, UnitQuat, Vec3};

pub const DEFAULT_COARSE_COUNT: usize = 64;
pub const DEFAULT_FINE_COUNT: usize = 512;
pub const DEFAULT_NEIGHBORS: usize = 4;
const KMEANS_ITERS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct ControlPoint {
    pub position: Vec3,
    pub cov_scale: Vec3,
    pub cov_rot: UnitQuat,
    pub seq: FenwickSeq,
}

impl ControlPoint {
    pub fn new(position: Vec3, scale: f64, frame_count: usize) -> ControlPoint {
        ControlPoint {
            position,
            cov_scale: Vec3::splat(scale),
            cov_rot: UnitQuat::IDENTITY,
            seq: FenwickSeq::new(frame_count),
        }
    }

    /// Squared Mahalanobis distance `dᵀ Σ⁻¹ d` and the rotated offset `Rᵀ d`.
    pub fn mahalanobis(&self, x: Vec3) -> (f64, Vec3) {
        let u = self.cov_rot.to_mat().tmul_vec(x - self.position);
        let s = self.cov_scale;
        let m = (u.x / s.x) * (u.x / s.x) + (u.y / s.y) * (u.y / s.y) + (u.z / s.z) * (u.z / s.z);
        (m, u)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlLayer {
    pub points: Vec<ControlPoint>,
    pub k: usize,
}

impl ControlLayer {
    pub fn new(points: Vec<ControlPoint>, k: usize) -> Result<ControlLayer> {
        if points.is_empty() {
            return Err(Error::InvalidArgument("control layer needs at least one point".into()));
        }
        check_range("neighbor count K", k, 1, points.len())?;
        let frames = points[0].seq.frame_count();
        if points.iter().any(|p| p.seq.frame_count() != frames) {
            return Err(Error::InvalidArgument("control points disagree on frame count".into()));
        }
        Ok(ControlLayer { points, k })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn frame_count(&self) -> usize {
        self.points[0].seq.frame_count()
    }

    pub fn positions(&self) -> Vec<Vec3> {
        self.points.iter().map(|p| p.position).collect()
    }

    /// Cached neighbor lists for a set of canonical points.
    pub fn bind(&self, xs: &[Vec3]) -> Binding {
        let centers = self.positions();
        let grid = KnnGrid::new(&centers);
        let mut neighbors = Vec::with_capacity(xs.len() * self.k);
        for &x in xs {
            neighbors.extend(grid.query(x, self.k).into_iter().map(|i| i as u32));
        }
        Binding { k: self.k, neighbors }
    }

    /// True when every node of every sequence is zero.
    pub fn is_rest(&self) -> bool {
        self.points
            .iter()
            .all(|p| p.seq.nodes().iter().all(|n| *n == crate::fenwick::RigidDelta::ZERO))
    }
}

/// Control points for one object from its interior voxel centers: FPS seeds,
/// k-means refinement, isotropic scale from the three nearest neighbors.
///
/// With fewer than four points the scale averages over the neighbors that
/// exist; a single point falls back to a quarter of the interior's bounding
/// box diagonal. `k` is clamped to the point count.
pub fn init_layer(interior: &[Vec3], count: usize, k: usize, frame_count: usize) -> Result<ControlLayer> {
    if count == 0 || count > interior.len() {
        return Err(Error::OutOfRange {
            what: "control point count",
            value: count as i64,
            lo: 1,
            hi: interior.len() as i64,
        });
    }
    if frame_count == 0 {
        return Err(Error::InvalidArgument("frame count must be positive".into()));
    }
    let seeds = fps(interior, count, 0)?;
    let centers = kmeans(interior, &seeds, KMEANS_ITERS)?.points;
    let scales: Vec<f64> = if count == 1 {
        let ps = crate::geom::PointSet::new(interior.to_vec());
        let (lo, hi) = ps.bbox();
        let s = (hi - lo).norm() / 4.0;
        alloc::vec![if s > 0.0 { s } else { 1.0 }]
    } else {
        let nn = (count - 1).min(3);
        let lists = knn(&centers, &centers, nn + 1)?;
        lists
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let ds: Vec<f64> = l.iter().filter(|&&j| j != i).take(nn).map(|&j| centers[i].dist(centers[j])).collect();
                let s = ds.iter().sum::<f64>() / ds.len() as f64;
                if s > 0.0 {
                    s
                } else {
                    1e-6
                }
            })
            .collect()
    };
    let points = centers
        .iter()
        .zip(scales)
        .map(|(&p, s)| ControlPoint::new(p, s, frame_count))
        .collect();
    ControlLayer::new(points, k.min(count))
}

/// Neighbor indices of a fixed point set into one layer (`k` per point).
#[derive(Debug, Clone, PartialEq)]
pub struct Binding {
    pub k: usize,
    pub neighbors: Vec<u32>,
}

impl Binding {
    pub fn of(&self, i: usize) -> &[u32] {
        &self.neighbors[i * self.k..(i + 1) * self.k]
    }

    pub fn len(&self) -> usize {
        if self.k == 0 {
            0
        } else {
            self.neighbors.len() / self.k
        }
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlendWeights {
    pub beta: Vec<f64>,
    /// All Gaussian weights underflowed; inverse-distance weights were used.
    pub fallback: bool,
}

/// Normalized Gaussian blend weights of `x` over the given neighbors.
pub fn blend_weights(x: Vec3, layer: &ControlLayer, neighbor_idx: &[u32]) -> BlendWeights {
    let mut beta = alloc::vec![0.0; neighbor_idx.len()];
    let fallback = blend_weights_into(x, layer, neighbor_idx, &mut beta);
    BlendWeights { beta, fallback }
}

pub(crate) fn blend_weights_into(x: Vec3, layer: &ControlLayer, idx: &[u32], out: &mut [f64]) -> bool {
    let mut m_min = f64::INFINITY;
    for (o, &k) in out.iter_mut().zip(idx) {
        let (m, _) = layer.points[k as usize].mahalanobis(x);
        *o = m;
        m_min = m_min.min(m);
    }
    if libm::exp(-0.5 * m_min) > 0.0 {
        let mut sum = 0.0;
        for o in out.iter_mut() {
            *o = libm::exp(-0.5 * (*o - m_min));
            sum += *o;
        }
        for o in out.iter_mut() {
            *o /= sum;
        }
        false
    } else {
        let mut sum = 0.0;
        for (o, &k) in out.iter_mut().zip(idx) {
            *o = 1.0 / x.dist(layer.points[k as usize].position).max(1e-300);
            sum += *o;
        }
        for o in out.iter_mut() {
            *o /= sum;
        }
        true
    }
}

/// Per-frame rigid motion of every control point in a layer.
#[derive(Debug, Clone)]
pub struct LayerPoses {
    pub(crate) n: usize,
    pub(crate) raw_rot: Vec<RawQuat>,
    pub(crate) rot: Vec<UnitQuat>,
    pub(crate) mat: Vec<Mat3>,
    pub(crate) trans: Vec<Vec3>,
}

impl LayerPoses {
    pub fn compute(layer: &ControlLayer) -> Result<LayerPoses> {
        let n = layer.len();
        let frames = layer.frame_count();
        let mut out = LayerPoses {
            n,
            raw_rot: Vec::with_capacity(n * frames),
            rot: Vec::with_capacity(n * frames),
            mat: Vec::with_capacity(n * frames),
            trans: Vec::with_capacity(n * frames),
        };
        for t in 1..=frames {
            for cp in &layer.points {
                let raw = cp.seq.raw_query_unchecked(t);
                let q = quat_normalize(raw.rot)?;
                out.raw_rot.push(raw.rot);
                out.rot.push(q);
                out.mat.push(q.to_mat());
                out.trans.push(raw.trans);
            }
        }
        Ok(out)
    }

    #[inline]
    pub(crate) fn at(&self, t: usize, k: usize) -> usize {
        (t - 1) * self.n + k
    }

    pub fn frame_count(&self) -> usize {
        self.rot.len() / self.n.max(1)
    }

    /// `Σ β_k ((R_k - I)(x - p_k) + T_k)` at frame `t`.
    pub fn displacement(&self, layer: &ControlLayer, x: Vec3, t: usize, idx: &[u32], beta: &[f64]) -> Vec3 {
        let mut acc = Vec3::ZERO;
        for (&k, &b) in idx.iter().zip(beta) {
            let a = self.at(t, k as usize);
            let d = x - layer.points[k as usize].position;
            let m = &self.mat[a];
            acc += (m.mul_vec(d) - d + self.trans[a]) * b;
        }
        acc
    }

    /// `Σ β_k r_k` (raw blended rotation) at frame `t`.
    pub fn blended_rotation(&self, t: usize, idx: &[u32], beta: &[f64]) -> Result<RawQuat> {
        let qs: Vec<RawQuat> = idx.iter().map(|&k| self.rot[self.at(t, k as usize)].raw()).collect();
        quat_blend(beta, &qs)
    }
}

/// Skinned position of `x` at frame `t` through one layer.
pub fn deform_point(x: Vec3, layer: &ControlLayer, t: usize) -> Result<Vec3> {
    check_range("frame", t, 1, layer.frame_count())?;
    let b = layer.bind(core::slice::from_ref(&x));
    let w = blend_weights(x, layer, b.of(0));
    let poses = LayerPoses::compute(layer)?;
    Ok(x + poses.displacement(layer, x, t, b.of(0), &w.beta))
}

/// Orientation `q` of a sample at `x`, rotated by the blended layer rotation.
pub fn deform_quat(x: Vec3, q: UnitQuat, layer: &ControlLayer, t: usize) -> Result<UnitQuat> {
    check_range("frame", t, 1, layer.frame_count())?;
    let b = layer.bind(core::slice::from_ref(&x));
    let w = blend_weights(x, layer, b.of(0));
    let poses = LayerPoses::compute(layer)?;
    let blend = quat_normalize(poses.blended_rotation(t, b.of(0), &w.beta)?)?;
    Ok(quat_compose(blend, q))
}

/// Coarse and fine layers of one object.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformModel {
    pub coarse: ControlLayer,
    pub fine: ControlLayer,
    pub fine_enabled: bool,
}

/// Canonical points with cached neighbor lists into both layers.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundPoints {
    pub positions: Vec<Vec3>,
    pub coarse: Binding,
    pub fine: Binding,
}

impl BoundPoints {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Blend weights of bound points under the current covariances.
#[derive(Debug, Clone)]
pub struct BoundWeights {
    pub coarse: Vec<f64>,
    pub fine: Vec<f64>,
    /// Per point: the coarse weights fell back to inverse distance.
    pub coarse_fallback: Vec<bool>,
    pub fine_fallback: Vec<bool>,
}

impl BoundWeights {
    pub fn fallbacks(&self) -> usize {
        self.coarse_fallback.iter().chain(&self.fine_fallback).filter(|&&f| f).count()
    }
}

/// Poses of both layers for every frame.
#[derive(Debug, Clone)]
pub struct ModelPoses {
    pub coarse: LayerPoses,
    pub fine: Option<LayerPoses>,
}

impl DeformModel {
    pub fn new(coarse: ControlLayer, fine: ControlLayer) -> Result<DeformModel> {
        if coarse.frame_count() != fine.frame_count() {
            return Err(Error::InvalidArgument("coarse and fine layers disagree on frame count".into()));
        }
        Ok(DeformModel {
            coarse,
            fine,
            fine_enabled: false,
        })
    }

    pub fn frame_count(&self) -> usize {
        self.coarse.frame_count()
    }

    pub fn bind(&self, xs: &[Vec3]) -> BoundPoints {
        BoundPoints {
            positions: xs.to_vec(),
            coarse: self.coarse.bind(xs),
            fine: self.fine.bind(xs),
        }
    }

    pub fn weights(&self, pts: &BoundPoints) -> BoundWeights {
        let mut coarse = alloc::vec![0.0; pts.coarse.neighbors.len()];
        let kc = pts.coarse.k;
        let coarse_fallback = pts
            .positions
            .iter()
            .enumerate()
            .map(|(i, &x)| blend_weights_into(x, &self.coarse, pts.coarse.of(i), &mut coarse[i * kc..(i + 1) * kc]))
            .collect();
        let mut fine = Vec::new();
        let mut fine_fallback = Vec::new();
        if self.fine_enabled {
            let kf = pts.fine.k;
            fine = alloc::vec![0.0; pts.fine.neighbors.len()];
            fine_fallback = pts
                .positions
                .iter()
                .enumerate()
                .map(|(i, &x)| blend_weights_into(x, &self.fine, pts.fine.of(i), &mut fine[i * kf..(i + 1) * kf]))
                .collect();
        }
        BoundWeights {
            coarse,
            fine,
            coarse_fallback,
            fine_fallback,
        }
    }

    pub fn poses(&self) -> Result<ModelPoses> {
        Ok(ModelPoses {
            coarse: LayerPoses::compute(&self.coarse)?,
            fine: if self.fine_enabled {
                Some(LayerPoses::compute(&self.fine)?)
            } else {
                None
            },
        })
    }

    /// Position of bound point `i` at frame `t`.
    pub fn position(&self, pts: &BoundPoints, w: &BoundWeights, poses: &ModelPoses, i: usize, t: usize) -> Vec3 {
        let x = pts.positions[i];
        let kc = pts.coarse.k;
        let mut d = poses
            .coarse
            .displacement(&self.coarse, x, t, pts.coarse.of(i), &w.coarse[i * kc..(i + 1) * kc]);
        if let Some(fp) = &poses.fine {
            let kf = pts.fine.k;
            d += fp.displacement(&self.fine, x, t, pts.fine.of(i), &w.fine[i * kf..(i + 1) * kf]);
        }
        x + d
    }

    /// Orientation of bound point `i` at frame `t`, given its canonical orientation.
    pub fn orientation(&self, pts: &BoundPoints, w: &BoundWeights, poses: &ModelPoses, i: usize, t: usize, q: UnitQuat) -> Result<UnitQuat> {
        let kc = pts.coarse.k;
        let bc = poses.coarse.blended_rotation(t, pts.coarse.of(i), &w.coarse[i * kc..(i + 1) * kc])?;
        let mut out = quat_compose(quat_normalize(bc)?, q);
        if let Some(fp) = &poses.fine {
            let kf = pts.fine.k;
            let bf = fp.blended_rotation(t, pts.fine.of(i), &w.fine[i * kf..(i + 1) * kf])?;
            out = quat_compose(quat_normalize(bf)?, out);
        }
        Ok(out)
    }

    /// Positions of all bound points at frame `t`.
    pub fn positions_at(&self, pts: &BoundPoints, t: usize) -> Result<Vec<Vec3>> {
        check_range("frame", t, 1, self.frame_count())?;
        let w = self.weights(pts);
        let poses = self.poses()?;
        Ok((0..pts.len()).map(|i| self.position(pts, &w, &poses, i, t)).collect())
    }
}

/// Full two-level deformation of a single sample.
pub fn deform_full(x: Vec3, q: UnitQuat, model: &DeformModel, t: usize) -> Result<(Vec3, UnitQuat)> {
    check_range("frame", t, 1, model.frame_count())?;
    let pts = model.bind(core::slice::from_ref(&x));
    let w = model.weights(&pts);
    let poses = model.poses()?;
    Ok((
        model.position(&pts, &w, &poses, 0, t),
        model.orientation(&pts, &w, &poses, 0, t, q)?,
    ))
}

/// Mesh vertices carried through the deformation; connectivity is unchanged.
pub fn deform_mesh(mesh: &TriMesh, model: &DeformModel, t: usize) -> Result<TriMesh> {
    let pts = model.bind(&mesh.vertices);
    Ok(TriMesh {
        vertices: model.positions_at(&pts, t)?,
        faces: mesh.faces.clone(),
    })
}
