//! Temporal smoothness and as-rigid-as-possible losses over point tracks,
//! and a small orthographic flow rasterizer.

use alloc::vec::Vec;

use nalgebra::Matrix3;

use crate::error::{Error, Result};
use crate::geom::{knn, Mat3, Vec3};

pub const DEFAULT_ARAP_NEIGHBORS: usize = 10;

/// Positions of a fixed sample set over all frames, frame-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tracks {
    pub samples: usize,
    pub frames: usize,
    pub pos: Vec<Vec3>,
}

impl Tracks {
    pub fn new(samples: usize, frames: usize, pos: Vec<Vec3>) -> Result<Tracks> {
        if pos.len() != samples * frames {
            return Err(Error::ShapeMismatch {
                expected: samples * frames,
                found: pos.len(),
            });
        }
        Ok(Tracks { samples, frames, pos })
    }

    /// Every frame equal to `canonical`.
    pub fn constant(canonical: &[Vec3], frames: usize) -> Tracks {
        let mut pos = Vec::with_capacity(canonical.len() * frames);
        for _ in 0..frames {
            pos.extend_from_slice(canonical);
        }
        Tracks {
            samples: canonical.len(),
            frames,
            pos,
        }
    }

    /// Positions at frame `t` (1-based).
    pub fn frame(&self, t: usize) -> &[Vec3] {
        &self.pos[(t - 1) * self.samples..t * self.samples]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [Vec3] {
        &mut self.pos[(t - 1) * self.samples..t * self.samples]
    }

    pub fn at(&self, t: usize, i: usize) -> Vec3 {
        self.pos[(t - 1) * self.samples + i]
    }

    /// Per-sample flow `x^t - x^{t+1}` for `t` in `1..frames`.
    pub fn flow(&self, t: usize) -> Vec<Vec3> {
        self.frame(t).iter().zip(self.frame(t + 1)).map(|(a, b)| *a - *b).collect()
    }
}

/// `Σ_t Σ_i ||x_i^t - x_i^{t+1}||²` and its gradient with respect to every position.
pub fn temporal_flow_loss(tracks: &Tracks) -> (f64, Vec<Vec3>) {
    let mut grad = alloc::vec![Vec3::ZERO; tracks.pos.len()];
    let mut loss = 0.0;
    let n = tracks.samples;
    for t in 1..tracks.frames {
        for i in 0..n {
            let a = (t - 1) * n + i;
            let f = tracks.pos[a] - tracks.pos[a + n];
            loss += f.norm2();
            grad[a] += f * 2.0;
            grad[a + n] -= f * 2.0;
        }
    }
    (loss, grad)
}

/// Image plane for [`rasterize_flow`]. Pixel `(u, v)` has its center at
/// `origin + (u + ½) pixel_size · right + (v + ½) pixel_size · up`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrthoCamera {
    pub origin: Vec3,
    pub right: Vec3,
    pub up: Vec3,
    pub pixel_size: f64,
    pub width: usize,
    pub height: usize,
    /// Gaussian footprint standard deviation, in pixels.
    pub footprint: f64,
}

/// Row-major image of 3D flow vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<Vec3>,
}

impl FlowImage {
    pub fn at(&self, u: usize, v: usize) -> Vec3 {
        self.data[v * self.width + u]
    }
}

/// Splats per-sample flows with a Gaussian footprint. A pixel holds
/// `Σ w f / max(1, Σ w)`: a weighted average where coverage is full and a
/// faded value at the footprint's edge.
pub fn rasterize_flow(positions: &[Vec3], flows: &[Vec3], cam: &OrthoCamera) -> Result<FlowImage> {
    if positions.len() != flows.len() {
        return Err(Error::ShapeMismatch {
            expected: positions.len(),
            found: flows.len(),
        });
    }
    if cam.width == 0 || cam.height == 0 {
        return Err(Error::InvalidArgument("image resolution must be at least 1x1".into()));
    }
    if !(cam.pixel_size > 0.0) || !(cam.footprint > 0.0) {
        return Err(Error::InvalidArgument("pixel size and footprint must be positive".into()));
    }
    let n = cam.width * cam.height;
    let mut acc = alloc::vec![Vec3::ZERO; n];
    let mut wsum = alloc::vec![0.0; n];
    let reach = libm::ceil(3.0 * cam.footprint) as i64;
    let inv2s2 = 0.5 / (cam.footprint * cam.footprint);
    for (p, f) in positions.iter().zip(flows) {
        let rel = *p - cam.origin;
        let pu = rel.dot(cam.right) / cam.pixel_size - 0.5;
        let pv = rel.dot(cam.up) / cam.pixel_size - 0.5;
        let (cu, cv) = (libm::round(pu) as i64, libm::round(pv) as i64);
        for v in (cv - reach).max(0)..=(cv + reach).min(cam.height as i64 - 1) {
            for u in (cu - reach).max(0)..=(cu + reach).min(cam.width as i64 - 1) {
                let (du, dv) = (u as f64 - pu, v as f64 - pv);
                let w = libm::exp(-(du * du + dv * dv) * inv2s2);
                let k = v as usize * cam.width + u as usize;
                acc[k] += *f * w;
                wsum[k] += w;
            }
        }
    }
    let data = acc.iter().zip(&wsum).map(|(a, &w)| *a * (1.0 / w.max(1.0))).collect();
    Ok(FlowImage {
        width: cam.width,
        height: cam.height,
        data,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationFit {
    pub r: Mat3,
    /// The cross-covariance vanished; `r` is the identity.
    pub degenerate: bool,
}

/// Rotation `R` minimizing `Σ ||c_i - R d_i||²`, with `det R = +1`.
pub fn estimate_rotation(canonical: &[Vec3], deformed: &[Vec3]) -> Result<RotationFit> {
    if canonical.len() != deformed.len() {
        return Err(Error::ShapeMismatch {
            expected: canonical.len(),
            found: deformed.len(),
        });
    }
    if canonical.is_empty() {
        return Err(Error::InvalidArgument("rotation fit needs at least one offset pair".into()));
    }
    let mut h = Mat3::ZERO;
    let mut scale = 0.0;
    for (c, d) in canonical.iter().zip(deformed) {
        h.add_outer(1.0, *c, *d);
        scale += c.norm() * d.norm();
    }
    Ok(rotation_from_cross(&h, scale))
}

/// Kabsch from an accumulated `H = Σ c dᵀ`; `scale` bounds `||H||` for the degeneracy test.
fn rotation_from_cross(h: &Mat3, scale: f64) -> RotationFit {
    let frob = libm::sqrt(h.frob_dot(h));
    if !(frob > 1e-12 * scale) || !frob.is_finite() {
        return RotationFit {
            r: Mat3::IDENTITY,
            degenerate: true,
        };
    }
    let m = Matrix3::from_fn(|i, j| h.0[i][j]);
    let svd = m.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut r = u * vt;
    if r.determinant() < 0.0 {
        // flip the axis of the smallest singular value
        let (imin, _) = svd
            .singular_values
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, &s)| if s < acc.1 { (i, s) } else { acc });
        let mut d = Matrix3::identity();
        d[(imin, imin)] = -1.0;
        r = u * d * vt;
    }
    RotationFit {
        r: Mat3(core::array::from_fn(|i| core::array::from_fn(|j| r[(i, j)]))),
        degenerate: false,
    }
}

/// Canonical-space neighbor lists: the `k` nearest other samples of each sample.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborGraph {
    pub k: usize,
    pub neighbors: Vec<u32>,
}

impl NeighborGraph {
    /// `k` is reduced to `len - 1` on small sets.
    pub fn build(points: &[Vec3], k: usize) -> Result<NeighborGraph> {
        let k = k.min(points.len().saturating_sub(1));
        if k == 0 {
            return Ok(NeighborGraph {
                k: 0,
                neighbors: Vec::new(),
            });
        }
        let lists = knn(points, points, k + 1)?;
        let mut neighbors = Vec::with_capacity(points.len() * k);
        for (i, l) in lists.iter().enumerate() {
            neighbors.extend(l.iter().filter(|&&j| j != i).take(k).map(|&j| j as u32));
        }
        Ok(NeighborGraph { k, neighbors })
    }

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

/// Best-fit local rotations, one per sample and frame (frame-major). Frames
/// whose neighborhoods are exactly canonical get the identity without a fit.
pub fn arap_rotations(shell: &[Vec3], graph: &NeighborGraph, tracks: &Tracks) -> (Vec<Mat3>, usize) {
    let n = shell.len();
    let mut out = Vec::with_capacity(n * tracks.frames);
    let mut degenerate = 0;
    for t in 1..=tracks.frames {
        let cur = tracks.frame(t);
        for (i, &x) in shell.iter().enumerate() {
            let xt = cur[i];
            let mut h = Mat3::ZERO;
            let mut scale = 0.0;
            let mut rest = true;
            for &j in graph.of(i) {
                let c = x - shell[j as usize];
                let d = xt - cur[j as usize];
                rest &= c == d;
                h.add_outer(1.0, c, d);
                scale += c.norm() * d.norm();
            }
            if rest {
                out.push(Mat3::IDENTITY);
                continue;
            }
            let fit = rotation_from_cross(&h, scale);
            degenerate += fit.degenerate as usize;
            out.push(fit.r);
        }
    }
    (out, degenerate)
}

/// `Σ_t Σ_x Σ_{y ∈ N(x)} ||(x - y) - R̂ (x^t - y^t)||²` with the given
/// rotations held fixed, and its gradient with respect to every track position.
pub fn arap_loss_fixed(shell: &[Vec3], graph: &NeighborGraph, tracks: &Tracks, rots: &[Mat3]) -> (f64, Vec<Vec3>) {
    let n = shell.len();
    let mut grad = alloc::vec![Vec3::ZERO; tracks.pos.len()];
    let mut loss = 0.0;
    for t in 1..=tracks.frames {
        let cur = tracks.frame(t);
        let base = (t - 1) * n;
        for (i, &x) in shell.iter().enumerate() {
            let r = &rots[base + i];
            for &j in graph.of(i) {
                let j = j as usize;
                let e = (x - shell[j]) - r.mul_vec(cur[i] - cur[j]);
                loss += e.norm2();
                let g = r.tmul_vec(e) * -2.0;
                grad[base + i] += g;
                grad[base + j] -= g;
            }
        }
    }
    (loss, grad)
}

/// ARAP value and gradient with rotations re-estimated and held fixed.
pub fn arap_loss(shell: &[Vec3], graph: &NeighborGraph, tracks: &Tracks) -> Result<(f64, Vec<Vec3>)> {
    let graph_ok = graph.k == 0 || graph.len() == shell.len();
    if tracks.samples != shell.len() || !graph_ok {
        return Err(Error::ShapeMismatch {
            expected: shell.len(),
            found: tracks.samples,
        });
    }
    let (rots, _) = arap_rotations(shell, graph, tracks);
    Ok(arap_loss_fixed(shell, graph, tracks, &rots))
}
