//! Point-set utilities: farthest point sampling, Lloyd k-means and exact
//! K-nearest-neighbor queries over a uniform grid.

use alloc::vec::Vec;
use core::ops::Deref;

use crate::error::{check_range, Error, Result};
use crate::geom::Vec3;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointSet {
    pub points: Vec<Vec3>,
}

impl PointSet {
    pub fn new(points: Vec<Vec3>) -> PointSet {
        PointSet { points }
    }

    pub fn centroid(&self) -> Vec3 {
        let mut c = Vec3::ZERO;
        for &p in &self.points {
            c += p;
        }
        c * (1.0 / self.points.len() as f64)
    }

    pub fn bbox(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::splat(f64::INFINITY);
        let mut hi = Vec3::splat(f64::NEG_INFINITY);
        for &p in &self.points {
            lo = lo.min(p);
            hi = hi.max(p);
        }
        (lo, hi)
    }
}

impl Deref for PointSet {
    type Target = [Vec3];
    fn deref(&self) -> &[Vec3] {
        &self.points
    }
}

impl From<Vec<Vec3>> for PointSet {
    fn from(points: Vec<Vec3>) -> Self {
        PointSet { points }
    }
}

/// Greedy max-min selection of `n` indices starting from `seed_index`.
/// Ties go to the lower index.
pub fn fps(points: &[Vec3], n: usize, seed_index: usize) -> Result<Vec<usize>> {
    check_range("sample count", n, 1, points.len())?;
    check_range("seed index", seed_index, 0, points.len() - 1)?;
    let mut min_d = alloc::vec![f64::INFINITY; points.len()];
    let mut chosen = alloc::vec![false; points.len()];
    let mut out = Vec::with_capacity(n);
    let mut cur = seed_index;
    loop {
        out.push(cur);
        chosen[cur] = true;
        if out.len() == n {
            return Ok(out);
        }
        let c = points[cur];
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for (i, p) in points.iter().enumerate() {
            if chosen[i] {
                continue;
            }
            let d = p.dist2(c);
            if d < min_d[i] {
                min_d[i] = d;
            }
            if min_d[i] > best_d {
                best_d = min_d[i];
                best = i;
            }
        }
        cur = best;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub centroids: PointSet,
    pub assignment: Vec<usize>,
    /// Within-cluster sum of squares after each assignment step.
    pub objective: Vec<f64>,
}

fn nearest_centroid(p: Vec3, centroids: &[Vec3]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centroids.iter().enumerate() {
        let d = p.dist2(*c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

/// Lloyd iterations from the points at `init`.
pub fn kmeans(points: &[Vec3], init: &[usize], iters: usize) -> Result<PointSet> {
    kmeans_detailed(points, init, iters).map(|r| r.centroids)
}

pub fn kmeans_detailed(points: &[Vec3], init: &[usize], iters: usize) -> Result<KMeansResult> {
    if init.is_empty() {
        return Err(Error::InvalidArgument("k-means needs at least one seed".into()));
    }
    for &i in init {
        check_range("k-means seed", i, 0, points.len().saturating_sub(1))?;
    }
    if points.is_empty() {
        return Err(Error::InvalidArgument("k-means on an empty point set".into()));
    }
    let k = init.len();
    let mut centroids: Vec<Vec3> = init.iter().map(|&i| points[i]).collect();
    let mut assignment = alloc::vec![usize::MAX; points.len()];
    let mut dists = alloc::vec![0.0; points.len()];
    let mut objective = Vec::new();
    for _ in 0..iters.max(1) {
        let mut changed = false;
        for (i, &p) in points.iter().enumerate() {
            let (c, d) = nearest_centroid(p, &centroids);
            if assignment[i] != c {
                changed = true;
                assignment[i] = c;
            }
            dists[i] = d;
        }
        objective.push(dists.iter().sum());
        if !changed && objective.len() > 1 {
            break;
        }
        let mut sums = alloc::vec![Vec3::ZERO; k];
        let mut counts = alloc::vec![0usize; k];
        for (i, &p) in points.iter().enumerate() {
            sums[assignment[i]] += p;
            counts[assignment[i]] += 1;
        }
        let mut taken = alloc::vec![false; points.len()];
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c] * (1.0 / counts[c] as f64);
            } else {
                // re-seed at the point farthest from its centroid
                let far = (0..points.len())
                    .filter(|&i| !taken[i])
                    .fold((usize::MAX, -1.0), |b, i| if dists[i] > b.1 { (i, dists[i]) } else { b });
                if far.0 != usize::MAX {
                    taken[far.0] = true;
                    centroids[c] = points[far.0];
                    dists[far.0] = 0.0;
                }
            }
        }
    }
    Ok(KMeansResult {
        centroids: PointSet::new(centroids),
        assignment,
        objective,
    })
}

/// Uniform grid over a fixed base point set for exact KNN queries.
#[derive(Debug, Clone)]
pub struct KnnGrid<'a> {
    base: &'a [Vec3],
    origin: Vec3,
    cell: f64,
    dims: [i64; 3],
    starts: Vec<u32>,
    items: Vec<u32>,
}

impl<'a> KnnGrid<'a> {
    pub fn new(base: &'a [Vec3]) -> KnnGrid<'a> {
        let mut lo = Vec3::splat(f64::INFINITY);
        let mut hi = Vec3::splat(f64::NEG_INFINITY);
        for &p in base {
            lo = lo.min(p);
            hi = hi.max(p);
        }
        let ext = (hi - lo).max(Vec3::splat(1e-12));
        let vol = ext.x.max(1e-9) * ext.y.max(1e-9) * ext.z.max(1e-9);
        // about two points per cell
        let mut cell = libm::cbrt(2.0 * vol / base.len().max(1) as f64);
        let longest = ext.x.max(ext.y).max(ext.z);
        cell = cell.max(longest / 256.0).max(1e-12);
        let dim = |e: f64| ((e / cell) as i64 + 1).clamp(1, 1024);
        let dims = [dim(ext.x), dim(ext.y), dim(ext.z)];
        let ncells = (dims[0] * dims[1] * dims[2]) as usize;
        let mut counts = alloc::vec![0u32; ncells + 1];
        let mut grid = KnnGrid {
            base,
            origin: lo,
            cell,
            dims,
            starts: Vec::new(),
            items: alloc::vec![0; base.len()],
        };
        let ids: Vec<usize> = base.iter().map(|&p| grid.flat(grid.cell_of(p))).collect();
        for &c in &ids {
            counts[c + 1] += 1;
        }
        for c in 0..ncells {
            counts[c + 1] += counts[c];
        }
        let mut fill = counts.clone();
        for (i, &c) in ids.iter().enumerate() {
            grid.items[fill[c] as usize] = i as u32;
            fill[c] += 1;
        }
        grid.starts = counts;
        grid
    }

    fn cell_of(&self, p: Vec3) -> [i64; 3] {
        let f = |v: f64, o: f64, n: i64| (libm::floor((v - o) / self.cell) as i64).clamp(0, n - 1);
        [
            f(p.x, self.origin.x, self.dims[0]),
            f(p.y, self.origin.y, self.dims[1]),
            f(p.z, self.origin.z, self.dims[2]),
        ]
    }

    fn flat(&self, c: [i64; 3]) -> usize {
        (c[0] + self.dims[0] * (c[1] + self.dims[1] * c[2])) as usize
    }

    /// Lower bound on the distance from `q` to any cell at Chebyshev ring `r`
    /// or beyond around the clamped cell `c`.
    fn ring_lower_bound(&self, q: Vec3, c: [i64; 3], r: i64) -> f64 {
        let mut lb = f64::INFINITY;
        for a in 0..3 {
            let lo = self.origin[a] + (c[a] - r + 1) as f64 * self.cell;
            let hi = self.origin[a] + (c[a] + r) as f64 * self.cell;
            if c[a] - r >= 0 {
                lb = lb.min(q[a] - lo);
            }
            if c[a] + r < self.dims[a] {
                lb = lb.min(hi - q[a]);
            }
        }
        lb
    }

    /// Exact `k` nearest base indices to `q`, by distance then index.
    pub fn query(&self, q: Vec3, k: usize) -> Vec<usize> {
        let mut best: Vec<(f64, u32)> = Vec::with_capacity(k + 1);
        let c = self.cell_of(q);
        let max_r = (0..3)
            .map(|a| c[a].max(self.dims[a] - 1 - c[a]))
            .max()
            .unwrap_or(0);
        for r in 0..=max_r {
            let (z0, z1) = ((c[2] - r).max(0), (c[2] + r).min(self.dims[2] - 1));
            let (y0, y1) = ((c[1] - r).max(0), (c[1] + r).min(self.dims[1] - 1));
            let (x0, x1) = ((c[0] - r).max(0), (c[0] + r).min(self.dims[0] - 1));
            for z in z0..=z1 {
                for y in y0..=y1 {
                    let on_face = (z - c[2]).abs() == r || (y - c[1]).abs() == r;
                    let mut x = x0;
                    while x <= x1 {
                        if on_face || (x - c[0]).abs() == r {
                            let cell = self.flat([x, y, z]);
                            let (s, e) = (self.starts[cell] as usize, self.starts[cell + 1] as usize);
                            for &i in &self.items[s..e] {
                                let d = q.dist2(self.base[i as usize]);
                                insert_top_k(&mut best, k, (d, i));
                            }
                            x += 1;
                        } else {
                            // interior of the ring: jump to the far face
                            x = c[0] + r;
                        }
                    }
                }
            }
            if best.len() == k {
                let lb = self.ring_lower_bound(q, c, r + 1);
                if lb > 0.0 && best[k - 1].0 < lb * lb * (1.0 - 1e-12) {
                    break;
                }
            }
        }
        best.into_iter().map(|(_, i)| i as usize).collect()
    }
}

fn insert_top_k(best: &mut Vec<(f64, u32)>, k: usize, item: (f64, u32)) {
    if best.len() == k {
        let last = best[k - 1];
        if (item.0, item.1) >= (last.0, last.1) {
            return;
        }
    }
    let pos = best
        .iter()
        .position(|&(d, i)| (item.0, item.1) < (d, i))
        .unwrap_or(best.len());
    best.insert(pos, item);
    best.truncate(k);
}

/// Exact `k` nearest neighbors in `base` for every query; ties by lower index.
pub fn knn(queries: &[Vec3], base: &[Vec3], k: usize) -> Result<Vec<Vec<usize>>> {
    if k > base.len() {
        return Err(Error::InvalidArgument(alloc::format!(
            "K = {k} exceeds base size {}",
            base.len()
        )));
    }
    if k == 0 {
        return Ok(alloc::vec![Vec::new(); queries.len()]);
    }
    let grid = KnnGrid::new(base);
    Ok(queries.iter().map(|&q| grid.query(q, k)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn lcg_points(n: usize, seed: u64) -> Vec<Vec3> {
        let mut s = seed;
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64
        };
        (0..n).map(|_| Vec3::new(next(), next(), next())).collect()
    }

    fn brute_knn(q: Vec3, base: &[Vec3], k: usize) -> Vec<usize> {
        let mut idx: Vec<(f64, usize)> = base.iter().enumerate().map(|(i, b)| (q.dist2(*b), i)).collect();
        idx.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        idx.into_iter().take(k).map(|(_, i)| i).collect()
    }

    #[test]
    fn fps_collinear() {
        let pts: Vec<Vec3> = (0..4).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
        assert_eq!(fps(&pts, 2, 0).unwrap(), vec![0, 3]);
        let mut all = fps(&pts, 4, 1).unwrap();
        assert_eq!(all[0], 1);
        all.sort();
        assert_eq!(all, vec![0, 1, 2, 3]);
        assert!(fps(&pts, 5, 0).is_err());
        assert!(fps(&pts, 0, 0).is_err());
    }

    #[test]
    fn fps_permutation_with_duplicates() {
        let pts = vec![Vec3::ZERO; 5];
        let mut all = fps(&pts, 5, 2).unwrap();
        all.sort();
        assert_eq!(all, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn kmeans_two_blobs() {
        let a = [Vec3::new(0.0, 0.0, 0.0), Vec3::new(0.2, 0.0, 0.0), Vec3::new(0.1, 0.3, 0.0)];
        let b = [Vec3::new(10.0, 10.0, 10.0), Vec3::new(10.4, 10.0, 9.0), Vec3::new(9.5, 10.2, 10.0)];
        let pts: Vec<Vec3> = a.iter().chain(b.iter()).copied().collect();
        let mean = |s: &[Vec3]| s.iter().fold(Vec3::ZERO, |acc, &p| acc + p) * (1.0 / s.len() as f64);
        let c = kmeans(&pts, &[0, 3], 10).unwrap();
        assert!(c[0].dist(mean(&a)) < 1e-6);
        assert!(c[1].dist(mean(&b)) < 1e-6);
    }

    #[test]
    fn kmeans_k_equals_n_and_single() {
        let pts = lcg_points(7, 3);
        let init: Vec<usize> = (0..7).collect();
        let c = kmeans(&pts, &init, 5).unwrap();
        assert_eq!(c.points, pts);
        let same = vec![Vec3::new(1.0, 2.0, 3.0); 4];
        assert_eq!(kmeans(&same, &[2], 3).unwrap().points, vec![Vec3::new(1.0, 2.0, 3.0)]);
    }

    #[test]
    fn kmeans_objective_non_increasing() {
        let pts = lcg_points(400, 11);
        let init = fps(&pts, 12, 0).unwrap();
        let r = kmeans_detailed(&pts, &init, 30).unwrap();
        for w in r.objective.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{:?}", r.objective);
        }
    }

    #[test]
    fn kmeans_reseeds_empty_cluster() {
        // two seeds on the same point: one cluster starts empty
        let pts = vec![Vec3::ZERO, Vec3::ZERO, Vec3::new(5.0, 0.0, 0.0), Vec3::new(5.0, 1.0, 0.0)];
        let r = kmeans_detailed(&pts, &[0, 1], 10).unwrap();
        let obj = *r.objective.last().unwrap();
        assert!(obj <= 0.5 + 1e-12, "{:?}", r);
    }

    #[test]
    fn knn_self_and_grid_neighbors() {
        let mut grid = Vec::new();
        for y in -1..=1 {
            for x in -1..=1 {
                grid.push(Vec3::new(x as f64, y as f64, 0.0));
            }
        }
        let r = knn(&[grid[5]], &grid, 1).unwrap();
        assert_eq!(r[0], vec![5]);
        let mut r = knn(&[Vec3::ZERO], &grid, 5).unwrap().remove(0);
        assert_eq!(r[0], 4);
        r.remove(0);
        r.sort();
        assert_eq!(r, vec![1, 3, 5, 7]);
        assert!(knn(&[Vec3::ZERO], &grid, 10).is_err());
    }

    #[test]
    fn knn_matches_brute_force() {
        let base = lcg_points(500, 7);
        let queries = lcg_points(100, 8);
        for k in [1, 4, 10, 37] {
            let got = knn(&queries, &base, k).unwrap();
            for (q, g) in queries.iter().zip(&got) {
                assert_eq!(*g, brute_knn(*q, &base, k));
            }
        }
        let far: Vec<Vec3> = vec![Vec3::new(5.0, -3.0, 2.0)];
        assert_eq!(knn(&far, &base, 10).unwrap()[0], brute_knn(far[0], &base, 10));
    }

    #[test]
    fn knn_ties_lower_index() {
        let base = vec![Vec3::new(1.0, 0.0, 0.0), Vec3::new(-1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)];
        assert_eq!(knn(&[Vec3::ZERO], &base, 2).unwrap()[0], vec![0, 1]);
    }
}
