//! Bounding-volume hierarchy over mesh triangles for nearest-triangle and
//! ray-crossing queries.

use alloc::vec::Vec;

use crate::geom::{TriMesh, Vec3};

const LEAF_SIZE: usize = 4;

#[derive(Debug, Clone)]
struct Node {
    lo: Vec3,
    hi: Vec3,
    // leaf: tris[start..start+count]; inner: children at `start`, `start + 1`
    start: u32,
    count: u32,
}

#[derive(Debug, Clone)]
pub struct TriangleBvh {
    nodes: Vec<Node>,
    tris: Vec<[Vec3; 3]>,
}

fn aabb_dist2(p: Vec3, lo: Vec3, hi: Vec3) -> f64 {
    let d = |v: f64, l: f64, h: f64| {
        if v < l {
            l - v
        } else if v > h {
            v - h
        } else {
            0.0
        }
    };
    let (dx, dy, dz) = (d(p.x, lo.x, hi.x), d(p.y, lo.y, hi.y), d(p.z, lo.z, hi.z));
    dx * dx + dy * dy + dz * dz
}

/// Squared distance from `p` to triangle `abc` (closest-feature classification).
pub fn point_triangle_dist2(p: Vec3, a: Vec3, b: Vec3, c: Vec3) -> f64 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(ap);
    let d2 = ac.dot(ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return ap.norm2();
    }
    let bp = p - b;
    let d3 = ab.dot(bp);
    let d4 = ac.dot(bp);
    if d3 >= 0.0 && d4 <= d3 {
        return bp.norm2();
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (p - (a + ab * v)).norm2();
    }
    let cp = p - c;
    let d5 = ab.dot(cp);
    let d6 = ac.dot(cp);
    if d6 >= 0.0 && d5 <= d6 {
        return cp.norm2();
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (p - (a + ac * w)).norm2();
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (p - (b + (c - b) * w)).norm2();
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    (p - (a + ab * v + ac * w)).norm2()
}

/// Möller–Trumbore; true when the ray `o + t d`, `t > 0`, crosses the triangle.
fn ray_hits(o: Vec3, d: Vec3, [a, b, c]: &[Vec3; 3]) -> bool {
    let e1 = *b - *a;
    let e2 = *c - *a;
    let pv = d.cross(e2);
    let det = e1.dot(pv);
    if det.abs() < 1e-14 {
        return false;
    }
    let inv = 1.0 / det;
    let tv = o - *a;
    let u = tv.dot(pv) * inv;
    if !(0.0..=1.0).contains(&u) {
        return false;
    }
    let qv = tv.cross(e1);
    let v = d.dot(qv) * inv;
    if v < 0.0 || u + v > 1.0 {
        return false;
    }
    e2.dot(qv) * inv > 0.0
}

fn ray_box(o: Vec3, inv_d: Vec3, lo: Vec3, hi: Vec3) -> bool {
    let mut tmin: f64 = 0.0;
    let mut tmax = f64::INFINITY;
    for a in 0..3 {
        let t1 = (lo[a] - o[a]) * inv_d[a];
        let t2 = (hi[a] - o[a]) * inv_d[a];
        tmin = tmin.max(t1.min(t2));
        tmax = tmax.min(t1.max(t2));
    }
    tmin <= tmax
}

impl TriangleBvh {
    pub fn build(mesh: &TriMesh) -> TriangleBvh {
        let tris: Vec<[Vec3; 3]> = (0..mesh.faces.len()).map(|f| mesh.triangle(f)).collect();
        let mut order: Vec<u32> = (0..tris.len() as u32).collect();
        let centroids: Vec<Vec3> = tris
            .iter()
            .map(|t| (t[0] + t[1] + t[2]) * (1.0 / 3.0))
            .collect();
        let mut nodes = Vec::with_capacity(2 * tris.len() / LEAF_SIZE + 1);
        nodes.push(Node {
            lo: Vec3::ZERO,
            hi: Vec3::ZERO,
            start: 0,
            count: 0,
        });
        let mut stack = alloc::vec![(0usize, 0usize, tris.len())];
        while let Some((ni, s, e)) = stack.pop() {
            let mut lo = Vec3::splat(f64::INFINITY);
            let mut hi = Vec3::splat(f64::NEG_INFINITY);
            let mut clo = lo;
            let mut chi = hi;
            for &t in &order[s..e] {
                for v in tris[t as usize] {
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
                clo = clo.min(centroids[t as usize]);
                chi = chi.max(centroids[t as usize]);
            }
            nodes[ni].lo = lo;
            nodes[ni].hi = hi;
            if e - s <= LEAF_SIZE {
                nodes[ni].start = s as u32;
                nodes[ni].count = (e - s) as u32;
                continue;
            }
            let ext = chi - clo;
            let axis = if ext.x >= ext.y && ext.x >= ext.z {
                0
            } else if ext.y >= ext.z {
                1
            } else {
                2
            };
            let mid = (s + e) / 2;
            order[s..e].select_nth_unstable_by(mid - s, |&a, &b| {
                centroids[a as usize][axis].total_cmp(&centroids[b as usize][axis])
            });
            let left = nodes.len();
            for _ in 0..2 {
                nodes.push(Node {
                    lo: Vec3::ZERO,
                    hi: Vec3::ZERO,
                    start: 0,
                    count: 0,
                });
            }
            nodes[ni].start = left as u32;
            nodes[ni].count = 0;
            stack.push((left, s, mid));
            stack.push((left + 1, mid, e));
        }
        let tris = order.iter().map(|&i| tris[i as usize]).collect();
        TriangleBvh { nodes, tris }
    }

    /// Squared distance to the nearest triangle, if one lies within `max_dist2`.
    pub fn nearest_dist2(&self, p: Vec3, max_dist2: f64) -> Option<f64> {
        let mut best = max_dist2;
        let mut found = false;
        let mut stack: Vec<u32> = Vec::with_capacity(64);
        stack.push(0);
        while let Some(ni) = stack.pop() {
            let n = &self.nodes[ni as usize];
            if aabb_dist2(p, n.lo, n.hi) > best {
                continue;
            }
            if n.count > 0 {
                for t in &self.tris[n.start as usize..(n.start + n.count) as usize] {
                    let d = point_triangle_dist2(p, t[0], t[1], t[2]);
                    if d <= best {
                        best = d;
                        found = true;
                    }
                }
            } else {
                let (a, b) = (n.start, n.start + 1);
                let da = aabb_dist2(p, self.nodes[a as usize].lo, self.nodes[a as usize].hi);
                let db = aabb_dist2(p, self.nodes[b as usize].lo, self.nodes[b as usize].hi);
                // visit the closer child first
                if da <= db {
                    stack.push(b);
                    stack.push(a);
                } else {
                    stack.push(a);
                    stack.push(b);
                }
            }
        }
        found.then_some(best)
    }

    /// Number of triangles crossed by the ray `o + t d`, `t > 0`.
    pub fn crossings(&self, o: Vec3, d: Vec3) -> usize {
        let inv = Vec3::new(1.0 / d.x, 1.0 / d.y, 1.0 / d.z);
        let mut hits = 0;
        let mut stack: Vec<u32> = Vec::with_capacity(64);
        stack.push(0);
        while let Some(ni) = stack.pop() {
            let n = &self.nodes[ni as usize];
            if !ray_box(o, inv, n.lo, n.hi) {
                continue;
            }
            if n.count > 0 {
                hits += self.tris[n.start as usize..(n.start + n.count) as usize]
                    .iter()
                    .filter(|t| ray_hits(o, d, t))
                    .count();
            } else {
                stack.push(n.start);
                stack.push(n.start + 1);
            }
        }
        hits
    }
}
