//! Per-control-point deformation sequences stored as a Fenwick tree.
//!
//! Node `j` (1-based) covers frames `(j - lowbit(j), j]` and holds a raw
//! rotation delta plus a translation. The deformation at frame `t` sums the
//! nodes on the prefix decomposition of `t`; the rotation sum starts from the
//! identity quaternion and is normalized afterwards. Node 1 stays at zero, so
//! frame 1 is always exactly the identity.

use alloc::vec::Vec;

use crate::error::{check_range, Error, Result};
use crate::geom::{quat_normalize, RawQuat, UnitQuat, Vec3};

#[inline]
pub fn lowbit(j: usize) -> usize {
    j & j.wrapping_neg()
}

/// Frames covered by node `j`, as the inclusive range `(start, end)`.
pub fn coverage(j: usize) -> (usize, usize) {
    (j - lowbit(j) + 1, j)
}

/// Iterator over the prefix decomposition `t, t - lowbit(t), ...`.
#[derive(Debug, Clone)]
pub struct BitIndices(usize);

impl Iterator for BitIndices {
    type Item = usize;
    fn next(&mut self) -> Option<usize> {
        if self.0 == 0 {
            return None;
        }
        let j = self.0;
        self.0 -= lowbit(j);
        Some(j)
    }
}

/// Nodes whose sum gives the prefix at frame `t`.
pub fn bit_indices(t: usize, frame_count: usize) -> Result<Vec<usize>> {
    check_range("frame", t, 1, frame_count)?;
    Ok(BitIndices(t).collect())
}

/// One node of a sequence, or one gradient slot.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RigidDelta {
    pub rot: RawQuat,
    pub trans: Vec3,
}

impl RigidDelta {
    pub const ZERO: RigidDelta = RigidDelta {
        rot: RawQuat::ZERO,
        trans: Vec3::ZERO,
    };

    pub fn new(rot: RawQuat, trans: Vec3) -> Self {
        RigidDelta { rot, trans }
    }

    pub fn add_scaled(&mut self, o: &RigidDelta, s: f64) {
        self.rot += o.rot * s;
        self.trans += o.trans * s;
    }

    pub fn to_array(&self) -> [f64; 7] {
        let r = self.rot.to_array();
        [r[0], r[1], r[2], r[3], self.trans.x, self.trans.y, self.trans.z]
    }

    pub fn from_array(a: [f64; 7]) -> Self {
        RigidDelta::new(
            RawQuat::new(a[0], a[1], a[2], a[3]),
            Vec3::new(a[4], a[5], a[6]),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FenwickSeq {
    nodes: Vec<RigidDelta>,
}

impl FenwickSeq {
    /// All-zero sequence over `frame_count` frames.
    pub fn new(frame_count: usize) -> FenwickSeq {
        assert!(frame_count >= 1, "a sequence needs at least one frame");
        FenwickSeq {
            nodes: alloc::vec![RigidDelta::ZERO; frame_count],
        }
    }

    pub fn from_nodes(nodes: Vec<RigidDelta>) -> Result<FenwickSeq> {
        if nodes.is_empty() {
            return Err(Error::InvalidArgument("a sequence needs at least one frame".into()));
        }
        Ok(FenwickSeq { nodes })
    }

    pub fn frame_count(&self) -> usize {
        self.nodes.len()
    }

    /// Node `j`, 1-based.
    pub fn node(&self, j: usize) -> &RigidDelta {
        &self.nodes[j - 1]
    }

    pub fn node_mut(&mut self, j: usize) -> &mut RigidDelta {
        &mut self.nodes[j - 1]
    }

    pub fn nodes(&self) -> &[RigidDelta] {
        &self.nodes
    }

    pub fn nodes_mut(&mut self) -> &mut [RigidDelta] {
        &mut self.nodes
    }

    /// Unnormalized prefix sum at frame `t`, including the base identity.
    pub fn raw_query(&self, t: usize) -> Result<RigidDelta> {
        check_range("frame", t, 1, self.frame_count())?;
        Ok(self.raw_query_unchecked(t))
    }

    /// `t = 0` yields the base identity.
    pub(crate) fn raw_query_unchecked(&self, t: usize) -> RigidDelta {
        let mut acc = RigidDelta::new(RawQuat::IDENTITY, Vec3::ZERO);
        for j in BitIndices(t) {
            let n = &self.nodes[j - 1];
            acc.rot += n.rot;
            acc.trans += n.trans;
        }
        acc
    }

    /// Rotation and translation at frame `t`.
    pub fn query(&self, t: usize) -> Result<(UnitQuat, Vec3)> {
        let raw = self.raw_query(t)?;
        Ok((quat_normalize(raw.rot)?, raw.trans))
    }

    /// Builds a sequence whose raw prefix at each frame equals `prefix[t - 1]`.
    /// The first entry must be the identity rotation with zero translation.
    pub fn from_prefix(prefix: &[RigidDelta]) -> Result<FenwickSeq> {
        let first = prefix.first().ok_or_else(|| Error::InvalidArgument("empty prefix".into()))?;
        if first.rot != RawQuat::IDENTITY || first.trans != Vec3::ZERO {
            return Err(Error::NonIdentityFirstFrame);
        }
        let base = RigidDelta::new(RawQuat::IDENTITY, Vec3::ZERO);
        let at = |t: usize| if t == 0 { base } else { prefix[t - 1] };
        let nodes = (1..=prefix.len())
            .map(|j| {
                let (hi, lo) = (at(j), at(j - lowbit(j)));
                RigidDelta::new(hi.rot - lo.rot, hi.trans - lo.trans)
            })
            .collect();
        Ok(FenwickSeq { nodes })
    }

    /// Holds every frame after `t0` at the frame-`t0` deformation. Nodes at or
    /// before `t0` are untouched, so earlier frames are bit-identical.
    pub fn clamp_after(&self, t0: usize) -> Result<FenwickSeq> {
        let n = self.frame_count();
        check_range("clamp frame", t0, 1, n)?;
        let hold = self.raw_query_unchecked(t0);
        let mut nodes = self.nodes.clone();
        for j in t0 + 1..=n {
            let start = j - lowbit(j);
            nodes[j - 1] = if start >= t0 {
                RigidDelta::ZERO
            } else {
                let lo = self.raw_query_unchecked(start);
                RigidDelta::new(hold.rot - lo.rot, hold.trans - lo.trans)
            };
        }
        Ok(FenwickSeq { nodes })
    }

    /// Whether node 1 is still exactly zero.
    pub fn first_frame_frozen(&self) -> bool {
        self.nodes[0] == RigidDelta::ZERO
    }
}

/// Gradient slots mirroring a sequence's nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct FenwickGrad {
    pub nodes: Vec<RigidDelta>,
}

impl FenwickGrad {
    pub fn zeros(frame_count: usize) -> FenwickGrad {
        FenwickGrad {
            nodes: alloc::vec![RigidDelta::ZERO; frame_count],
        }
    }

    pub fn node(&self, j: usize) -> &RigidDelta {
        &self.nodes[j - 1]
    }

    pub fn clear(&mut self) {
        self.nodes.iter_mut().for_each(|n| *n = RigidDelta::ZERO);
    }
}

/// Adjoint of the raw prefix query: adds `g` to every node on the
/// decomposition of `t`, except the frozen node 1.
pub fn scatter_grad(grads: &mut FenwickGrad, t: usize, g: &RigidDelta) {
    for j in BitIndices(t) {
        if j == 1 {
            continue;
        }
        grads.nodes[j - 1].add_scaled(g, 1.0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    /// Independent oracle: node j contributes to frame t iff its covered
    /// range ends inside [1, t] and starts after every larger participating node.
    fn brute_prefix(seq: &FenwickSeq, t: usize) -> RigidDelta {
        let mut acc = RigidDelta::new(RawQuat::IDENTITY, Vec3::ZERO);
        let mut covered = vec![false; t + 1];
        for j in (1..=t).rev() {
            let (s, e) = coverage(j);
            if (s..=e).all(|f| !covered[f]) && e <= t && (e == t || covered[e + 1]) {
                for f in s..=e {
                    covered[f] = true;
                }
                acc.add_scaled(seq.node(j), 1.0);
            }
        }
        assert!(covered[1..].iter().all(|&c| c));
        acc
    }

    fn seq_from(vals: &[f64]) -> FenwickSeq {
        let n = vals.len() / 7;
        let mut nodes: Vec<RigidDelta> = (0..n)
            .map(|j| RigidDelta::from_array(vals[7 * j..7 * j + 7].try_into().unwrap()))
            .collect();
        nodes[0] = RigidDelta::ZERO;
        FenwickSeq::from_nodes(nodes).unwrap()
    }

    #[test]
    fn bit_indices_examples() {
        assert_eq!(bit_indices(6, 41).unwrap(), vec![6, 4]);
        assert_eq!(coverage(6), (5, 6));
        assert_eq!(bit_indices(7, 41).unwrap(), vec![7, 6, 4]);
        assert_eq!(bit_indices(1, 41).unwrap(), vec![1]);
        assert!(bit_indices(0, 41).is_err());
        assert!(bit_indices(42, 41).is_err());
    }

    #[test]
    fn decomposition_is_a_partition() {
        for t in 1..=200usize {
            let idx = bit_indices(t, 200).unwrap();
            assert!(idx.len() <= (usize::BITS - t.leading_zeros()) as usize);
            let mut hit = vec![0; t + 1];
            for j in idx {
                let (s, e) = coverage(j);
                for f in s..=e {
                    hit[f] += 1;
                }
            }
            assert!(hit[1..].iter().all(|&h| h == 1), "t={t}");
        }
    }

    #[test]
    fn zero_nodes_give_identity() {
        let s = FenwickSeq::new(41);
        for t in 1..=41 {
            let (q, tr) = s.query(t).unwrap();
            assert_eq!(q, UnitQuat::IDENTITY);
            assert_eq!(tr, Vec3::ZERO);
        }
    }

    #[test]
    fn translation_example() {
        let mut s = FenwickSeq::new(8);
        s.node_mut(4).trans = Vec3::new(1.0, 0.0, 0.0);
        s.node_mut(6).trans = Vec3::new(0.0, 1.0, 0.0);
        assert_eq!(s.query(6).unwrap().1, Vec3::new(1.0, 1.0, 0.0));
        assert_eq!(s.query(5).unwrap().1, Vec3::new(1.0, 0.0, 0.0));
        assert_eq!(brute_prefix(&s, 6).trans, Vec3::new(1.0, 1.0, 0.0));
    }

    #[test]
    fn rotation_normalizes_scaled_identity() {
        let mut s = FenwickSeq::new(8);
        s.node_mut(4).rot = RawQuat::new(0.1, 0.0, 0.0, 0.0);
        assert_eq!(s.raw_query(4).unwrap().rot, RawQuat::new(1.1, 0.0, 0.0, 0.0));
        assert_eq!(s.query(4).unwrap().0, UnitQuat::IDENTITY);
    }

    #[test]
    fn scatter_examples() {
        let mut g = FenwickGrad::zeros(8);
        let d = RigidDelta::new(RawQuat::ZERO, Vec3::new(1.0, 2.0, 3.0));
        scatter_grad(&mut g, 6, &d);
        for j in 1..=8 {
            let want = if j == 6 || j == 4 { d } else { RigidDelta::ZERO };
            assert_eq!(*g.node(j), want, "node {j}");
        }
        scatter_grad(&mut g, 7, &d);
        assert_eq!(g.node(6).trans, Vec3::new(2.0, 4.0, 6.0));
        assert_eq!(g.node(4).trans, Vec3::new(2.0, 4.0, 6.0));
        assert_eq!(g.node(7).trans, Vec3::new(1.0, 2.0, 3.0));
        let mut g1 = FenwickGrad::zeros(8);
        scatter_grad(&mut g1, 1, &d);
        assert!(g1.nodes.iter().all(|n| *n == RigidDelta::ZERO));
    }

    #[test]
    fn from_prefix_examples() {
        let one = FenwickSeq::from_prefix(&[RigidDelta::new(RawQuat::IDENTITY, Vec3::ZERO)]).unwrap();
        assert_eq!(one.nodes(), &[RigidDelta::ZERO]);

        let prefix: Vec<RigidDelta> = (1..=13)
            .map(|t| RigidDelta::new(RawQuat::IDENTITY, Vec3::new((t - 1) as f64, 0.0, 0.0)))
            .collect();
        let s = FenwickSeq::from_prefix(&prefix).unwrap();
        for t in 1..=13 {
            assert_eq!(s.query(t).unwrap().1, Vec3::new((t - 1) as f64, 0.0, 0.0));
        }

        // constant after frame 1 except the base: only nodes starting at frame 1 carry value
        let c = RigidDelta::new(RawQuat::new(1.0, 0.2, 0.0, 0.0), Vec3::new(0.5, 0.5, 0.5));
        let mut prefix = vec![c; 9];
        prefix[0] = RigidDelta::new(RawQuat::IDENTITY, Vec3::ZERO);
        let s = FenwickSeq::from_prefix(&prefix).unwrap();
        for j in 1..=9 {
            let starts_at_one = coverage(j).0 == 1;
            assert_eq!(*s.node(j) != RigidDelta::ZERO, starts_at_one && j > 1, "node {j}");
        }
        for t in 1..=9 {
            assert_eq!(s.raw_query(t).unwrap(), prefix[t - 1]);
        }

        let bad = vec![c; 3];
        assert_eq!(FenwickSeq::from_prefix(&bad), Err(Error::NonIdentityFirstFrame));
    }

    #[test]
    fn clamp_examples() {
        let n = 41;
        let prefix: Vec<RigidDelta> = (1..=n)
            .map(|t| {
                let a = 0.013 * (t - 1) as f64;
                RigidDelta::new(RawQuat::new(1.0, 0.0, a, 0.0), Vec3::new(0.1, -0.02, 0.03) * (t - 1) as f64)
            })
            .collect();
        let s = FenwickSeq::from_prefix(&prefix).unwrap();
        assert_eq!(s.clamp_after(n).unwrap(), s);
        let c = s.clamp_after(30).unwrap();
        for t in 1..=30 {
            assert_eq!(c.query(t).unwrap(), s.query(t).unwrap());
        }
        let q30 = c.query(30).unwrap();
        for t in 31..=n {
            let (q, tr) = c.query(t).unwrap();
            assert!((tr - q30.1).norm() <= 1e-12);
            assert!(q.angle_dist(q30.0) <= 1e-9);
        }
        assert_eq!(c.query(35).unwrap().1, c.query(30).unwrap().1);
        let one = s.clamp_after(1).unwrap();
        for t in 1..=n {
            assert_eq!(one.query(t).unwrap(), (UnitQuat::IDENTITY, Vec3::ZERO));
        }
        assert!(s.clamp_after(0).is_err());
    }

    fn node_values(n: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-1.0f64..1.0, 7 * n)
    }

    proptest! {
        #[test]
        fn query_matches_coverage_oracle(vals in (1usize..=64).prop_flat_map(node_values)) {
            let s = seq_from(&vals);
            for t in 1..=s.frame_count() {
                let fast = s.raw_query(t).unwrap();
                let slow = brute_prefix(&s, t);
                prop_assert_eq!(fast.trans, slow.trans);
                prop_assert!((fast.rot - slow.rot).norm() <= 1e-12);
            }
        }

        #[test]
        fn translation_query_is_linear(
            (a_vals, b_vals) in (2usize..=40).prop_flat_map(|n| (node_values(n), node_values(n))),
            a in -2.0f64..2.0,
            b in -2.0f64..2.0,
        ) {
            let sa = seq_from(&a_vals);
            let sb = seq_from(&b_vals);
            let comb: Vec<f64> = a_vals.iter().zip(&b_vals).map(|(x, y)| a * x + b * y).collect();
            let sc = seq_from(&comb);
            for t in 1..=sa.frame_count() {
                let lhs = sc.raw_query(t).unwrap().trans;
                let rhs = sa.raw_query(t).unwrap().trans * a + sb.raw_query(t).unwrap().trans * b;
                prop_assert!((lhs - rhs).norm() <= 1e-12);
            }
        }

        #[test]
        fn scatter_is_adjoint_of_query(
            vals in (2usize..=40).prop_flat_map(node_values),
            g in proptest::collection::vec(-1.0f64..1.0, 7),
            frame in 0.0f64..1.0,
        ) {
            let s = seq_from(&vals);
            let n = s.frame_count();
            let t = 1 + ((frame * n as f64) as usize).min(n - 1);
            let g = RigidDelta::from_array(g.try_into().unwrap());
            let mut grads = FenwickGrad::zeros(n);
            scatter_grad(&mut grads, t, &g);
            let f = |seq: &FenwickSeq| {
                let r = seq.raw_query(t).unwrap();
                r.rot.dot(g.rot) + r.trans.dot(g.trans)
            };
            // the query is linear in the nodes, so a wide central difference is exact
            let h = 0.5;
            for j in 2..=n {
                for c in 0..7 {
                    let mut p = s.clone();
                    let mut m = s.clone();
                    let mut pa = p.node(j).to_array();
                    let mut ma = m.node(j).to_array();
                    pa[c] += h;
                    ma[c] -= h;
                    *p.node_mut(j) = RigidDelta::from_array(pa);
                    *m.node_mut(j) = RigidDelta::from_array(ma);
                    let fd = (f(&p) - f(&m)) / (2.0 * h);
                    prop_assert!((fd - grads.node(j).to_array()[c]).abs() <= 1e-12);
                }
            }
        }

        #[test]
        fn clamp_is_idempotent(vals in (1usize..=48).prop_flat_map(node_values), frac in 0.0f64..1.0) {
            let s = seq_from(&vals);
            let n = s.frame_count();
            let t0 = 1 + ((frac * n as f64) as usize).min(n - 1);
            let once = s.clamp_after(t0).unwrap();
            prop_assert_eq!(once.clamp_after(t0).unwrap(), once.clone());
            for t in 1..=t0 {
                prop_assert_eq!(once.raw_query(t).unwrap().trans, s.raw_query(t).unwrap().trans);
            }
        }
    }
}
