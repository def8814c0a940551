//! Signed distance fields sampled on voxel grids, and the voxel-center point
//! sets derived from them.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geom::bvh::TriangleBvh;
use crate::geom::{PointSet, TriMesh, Vec3};

/// Fixed ray directions for the parity vote; generic enough to avoid grazing
/// axis-aligned edges.
const SIGN_RAYS: [[f64; 3]; 7] = [
    [0.5773, 0.5774, 0.5775],
    [-0.6124, 0.3536, 0.7071],
    [0.2673, -0.8018, 0.5345],
    [-0.3015, -0.3015, -0.9045],
    [0.8729, 0.2182, -0.4364],
    [-0.7071, 0.6124, -0.3536],
    [0.1104, 0.9939, 0.0131],
];

/// Exact distance queries against a triangle mesh.
#[derive(Debug, Clone)]
pub struct MeshSdf {
    bvh: TriangleBvh,
    rays: [Vec3; 7],
}

impl MeshSdf {
    pub fn new(mesh: &TriMesh) -> Result<MeshSdf> {
        mesh.validate()?;
        let rays = SIGN_RAYS.map(|d| Vec3::from_array(d).normalized());
        Ok(MeshSdf {
            bvh: TriangleBvh::build(mesh),
            rays,
        })
    }

    pub fn unsigned(&self, p: Vec3) -> f64 {
        libm::sqrt(self.bvh.nearest_dist2(p, f64::INFINITY).unwrap_or(f64::INFINITY))
    }

    /// Unsigned distance if it is at most `max_dist`.
    pub fn unsigned_within(&self, p: Vec3, max_dist: f64) -> Option<f64> {
        self.bvh.nearest_dist2(p, max_dist * max_dist).map(libm::sqrt)
    }

    /// Majority vote of ray-crossing parity over seven directions.
    pub fn is_inside(&self, p: Vec3) -> bool {
        let odd = self
            .rays
            .iter()
            .filter(|&&d| self.bvh.crossings(p, d) % 2 == 1)
            .count();
        odd * 2 > self.rays.len()
    }

    /// Negative inside.
    pub fn signed(&self, p: Vec3) -> f64 {
        let d = self.unsigned(p);
        if self.is_inside(p) {
            -d
        } else {
            d
        }
    }
}

/// Signed distances at voxel centers. Voxel `(i, j, k)` has its center at
/// `origin + ((i, j, k) + 0.5) · voxel_size`; values are stored x-fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct SdfGrid {
    pub origin: Vec3,
    pub voxel_size: f64,
    pub dims: [usize; 3],
    pub values: Vec<f64>,
}

impl SdfGrid {
    /// Grid of `voxel_size` cells centered on the box `[lo, hi]` grown by `padding`.
    pub fn layout(lo: Vec3, hi: Vec3, voxel_size: f64, padding: f64) -> (Vec3, [usize; 3]) {
        let center = (lo + hi) * 0.5;
        let ext = hi - lo;
        let n = |e: f64| (libm::ceil((e + 2.0 * padding) / voxel_size - 1e-9) as usize).max(1);
        let dims = [n(ext.x), n(ext.y), n(ext.z)];
        let half = Vec3::new(dims[0] as f64, dims[1] as f64, dims[2] as f64) * (0.5 * voxel_size);
        (center - half, dims)
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn center(&self, i: usize, j: usize, k: usize) -> Vec3 {
        center_of(self.origin, self.voxel_size, i, j, k)
    }

    /// Voxel centers in storage order.
    pub fn centers(&self) -> impl Iterator<Item = Vec3> + '_ {
        let [nx, ny, nz] = self.dims;
        (0..nz).flat_map(move |k| {
            (0..ny).flat_map(move |j| (0..nx).map(move |i| self.center(i, j, k)))
        })
    }
}

fn center_of(origin: Vec3, s: f64, i: usize, j: usize, k: usize) -> Vec3 {
    origin + Vec3::new(i as f64 + 0.5, j as f64 + 0.5, k as f64 + 0.5) * s
}

fn check_voxel_size(voxel_size: f64) -> Result<()> {
    if !(voxel_size > 0.0) || !voxel_size.is_finite() {
        return Err(Error::InvalidVoxelSize(voxel_size));
    }
    Ok(())
}

/// Samples the signed distance of `mesh` at every voxel center.
pub fn sdf_from_mesh(mesh: &TriMesh, voxel_size: f64, padding: f64) -> Result<SdfGrid> {
    check_voxel_size(voxel_size)?;
    let sdf = MeshSdf::new(mesh)?;
    let (lo, hi) = mesh.bbox();
    let (origin, dims) = SdfGrid::layout(lo, hi, voxel_size, padding.max(0.0));
    let mut grid = SdfGrid {
        origin,
        voxel_size,
        dims,
        values: Vec::new(),
    };
    grid.values = grid.centers().map(|p| sdf.signed(p)).collect();
    Ok(grid)
}

/// Centers with `φ <= 0`.
pub fn interior_centers(sdf: &SdfGrid) -> Result<PointSet> {
    let pts: Vec<Vec3> = sdf
        .centers()
        .zip(&sdf.values)
        .filter(|(_, &v)| v <= 0.0)
        .map(|(p, _)| p)
        .collect();
    if pts.is_empty() {
        return Err(Error::EmptyInterior);
    }
    Ok(PointSet::new(pts))
}

/// Centers with `|φ| <= tau`.
pub fn shell_centers(sdf: &SdfGrid, tau: f64) -> Result<PointSet> {
    if tau < 0.0 || tau.is_nan() {
        return Err(Error::InvalidArgument(alloc::format!("shell threshold {tau} must be positive")));
    }
    let pts: Vec<Vec3> = sdf
        .centers()
        .zip(&sdf.values)
        .filter(|(_, &v)| v.abs() <= tau)
        .map(|(p, _)| p)
        .collect();
    if pts.is_empty() {
        return Err(Error::EmptyShell);
    }
    Ok(PointSet::new(pts))
}

/// Grid padding used by [`voxel_size_search`]; wide enough that every center
/// within the shell threshold lies inside the grid.
pub fn shell_padding(voxel_size: f64, tau_factor: f64) -> f64 {
    voxel_size * tau_factor.max(1.0)
}

/// Number of shell centers for a candidate voxel size, without evaluating signs.
pub fn shell_count(sdf: &MeshSdf, lo: Vec3, hi: Vec3, voxel_size: f64, tau_factor: f64) -> usize {
    let tau = tau_factor * voxel_size;
    let (origin, [nx, ny, nz]) = SdfGrid::layout(lo, hi, voxel_size, shell_padding(voxel_size, tau_factor));
    let mut count = 0;
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let p = center_of(origin, voxel_size, i, j, k);
                if sdf.unsigned_within(p, tau).is_some() {
                    count += 1;
                }
            }
        }
    }
    count
}

const MAX_HALVINGS: usize = 64;

/// Finds a voxel size whose shell (threshold `tau_factor · s`) holds within
/// ±10% of `target_count` centers.
pub fn voxel_size_search(mesh: &TriMesh, target_count: usize, tau_factor: f64) -> Result<f64> {
    if target_count < 1 {
        return Err(Error::InvalidArgument(alloc::format!("target count {target_count} must be positive")));
    }
    if !(tau_factor > 0.0) {
        return Err(Error::InvalidArgument(alloc::format!("tau factor {tau_factor} must be positive")));
    }
    let diag = mesh.bbox_diagonal();
    let volume = mesh.signed_volume().abs();
    if !(diag > 0.0) || volume <= 1e-9 * diag * diag * diag {
        return Err(Error::VoxelSearch("mesh encloses no volume"));
    }
    let sdf = MeshSdf::new(mesh)?;
    let (lo, hi) = mesh.bbox();
    let target = target_count as f64;
    let accept = |c: usize| (c as f64 - target).abs() <= 0.1 * target;
    let count = |s: f64| shell_count(&sdf, lo, hi, s, tau_factor);

    // bracket: `small` gives too many centers, `large` too few
    let mut s = diag / 8.0;
    let mut c = count(s);
    if accept(c) {
        return Ok(s);
    }
    let (mut small, mut large);
    if (c as f64) > target {
        small = s;
        let mut n = 0;
        loop {
            s *= 2.0;
            c = count(s);
            if accept(c) {
                return Ok(s);
            }
            if (c as f64) < target {
                large = s;
                break;
            }
            small = s;
            n += 1;
            if n >= MAX_HALVINGS {
                return Err(Error::VoxelSearch("no voxel size gives too few centers"));
            }
        }
    } else {
        large = s;
        let mut n = 0;
        loop {
            s *= 0.5;
            c = count(s);
            if accept(c) {
                return Ok(s);
            }
            if (c as f64) > target {
                small = s;
                break;
            }
            large = s;
            n += 1;
            if n >= MAX_HALVINGS {
                return Err(Error::VoxelSearch("no voxel size gives enough centers"));
            }
        }
    }
    for _ in 0..MAX_HALVINGS {
        let mid = libm::sqrt(small * large);
        let c = count(mid);
        if accept(c) {
            return Ok(mid);
        }
        if (c as f64) > target {
            small = mid;
        } else {
            large = mid;
        }
    }
    Err(Error::VoxelSearch("bisection did not reach the target count"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube() -> TriMesh {
        TriMesh::cuboid(Vec3::splat(-1.0), Vec3::splat(1.0))
    }

    fn cube_sdf(p: Vec3) -> f64 {
        let q = Vec3::new(p.x.abs() - 1.0, p.y.abs() - 1.0, p.z.abs() - 1.0);
        let outside = q.max(Vec3::ZERO).norm();
        let inside = q.x.max(q.y).max(q.z).min(0.0);
        outside + inside
    }

    #[test]
    fn cube_probes() {
        let s = MeshSdf::new(&cube()).unwrap();
        assert!((s.signed(Vec3::ZERO) + 1.0).abs() < 1e-12);
        assert!((s.signed(Vec3::new(2.0, 0.0, 0.0)) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sphere_probe_matches_analytic() {
        let m = TriMesh::icosphere(Vec3::ZERO, 1.0, 4);
        let s = MeshSdf::new(&m).unwrap();
        let v = s.signed(Vec3::new(0.5, 0.0, 0.0));
        assert!((v + 0.5).abs() <= 0.01, "{v}");
    }

    #[test]
    fn sign_matches_convexity() {
        let m = TriMesh::icosphere(Vec3::ZERO, 1.0, 3);
        let s = MeshSdf::new(&m).unwrap();
        for r in [0.0, 0.3, 0.9, 1.05, 1.5, 3.0] {
            for d in [Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.3, -0.5, 0.8).normalized()] {
                let v = s.signed(d * r);
                if r < 0.95 {
                    assert!(v < 0.0, "r={r}");
                } else {
                    assert!(v > 0.0, "r={r}");
                }
            }
        }
    }

    #[test]
    fn grid_distances_match_analytic_cube() {
        let g = sdf_from_mesh(&cube(), 0.37, 0.5).unwrap();
        let tol = 1e-6 * 2.0 * 3f64.sqrt();
        for (p, &v) in g.centers().zip(&g.values) {
            assert!((v - cube_sdf(p)).abs() <= tol, "{p:?}: {v} vs {}", cube_sdf(p));
        }
    }

    #[test]
    fn cube_interior_count() {
        let g = sdf_from_mesh(&cube(), 1.0, 0.0).unwrap();
        assert_eq!(interior_centers(&g).unwrap().len(), 8);
        let g = sdf_from_mesh(&cube(), 1.0, 1.0).unwrap();
        assert_eq!(interior_centers(&g).unwrap().len(), 8);
    }

    #[test]
    fn all_positive_grid_has_no_interior() {
        let g = SdfGrid {
            origin: Vec3::ZERO,
            voxel_size: 1.0,
            dims: [2, 2, 1],
            values: alloc::vec![0.5, 1.0, 2.0, 0.1],
        };
        assert_eq!(interior_centers(&g), Err(Error::EmptyInterior));
    }

    #[test]
    fn sphere_interior_volume() {
        let m = TriMesh::icosphere(Vec3::ZERO, 1.0, 4);
        let s = 0.25;
        let g = sdf_from_mesh(&m, s, s).unwrap();
        let n = interior_centers(&g).unwrap().len() as f64;
        let expect = 4.0 / 3.0 * core::f64::consts::PI / (s * s * s);
        assert!((n - expect).abs() <= 0.1 * expect, "{n} vs {expect}");
    }

    #[test]
    fn cube_shell_within_threshold() {
        let g = sdf_from_mesh(&cube(), 0.5, 0.5).unwrap();
        let shell = shell_centers(&g, 0.3).unwrap();
        assert!(!shell.is_empty());
        for p in shell.iter() {
            assert!(cube_sdf(*p).abs() <= 0.3 + 1e-12);
        }
        // and nothing that qualifies was dropped
        let expected = g.centers().filter(|p| cube_sdf(*p).abs() <= 0.3).count();
        assert_eq!(shell.len(), expected);
    }

    #[test]
    fn zero_threshold_shell_is_empty() {
        let m = TriMesh::icosphere(Vec3::ZERO, 1.0, 2);
        let g = sdf_from_mesh(&m, 0.21, 0.2).unwrap();
        assert_eq!(shell_centers(&g, 0.0), Err(Error::EmptyShell));
    }

    #[test]
    fn voxel_search_cube_small_target() {
        let s = voxel_size_search(&cube(), 8, 0.5).unwrap();
        let g = sdf_from_mesh(&cube(), s, shell_padding(s, 0.5)).unwrap();
        let n = shell_centers(&g, 0.5 * s).unwrap().len();
        assert!((7..=9).contains(&n), "s={s} n={n}");
    }

    #[test]
    fn voxel_search_flat_mesh_fails() {
        let quad = TriMesh::new(
            alloc::vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(1.0, 1.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
            ],
            alloc::vec![[0, 1, 2], [0, 2, 3]],
        )
        .unwrap();
        assert!(matches!(voxel_size_search(&quad, 100, 0.5), Err(Error::VoxelSearch(_))));
    }

    #[test]
    fn invalid_voxel_size() {
        assert_eq!(sdf_from_mesh(&cube(), 0.0, 0.0), Err(Error::InvalidVoxelSize(0.0)));
        assert_eq!(sdf_from_mesh(&TriMesh::default(), 1.0, 0.0), Err(Error::EmptyMesh));
    }
}
