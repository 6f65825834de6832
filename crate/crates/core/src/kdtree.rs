//! Static kd-tree over 3D points plus a voxel hash filter.
//!
//! The tree is built once from a point slice; incremental behaviour is
//! layered on top by [`crate::map::SpatialIndex`] through buffering and
//! periodic rebuilds. Nearest-neighbour ties are broken by point index so
//! query results are reproducible and match a brute-force oracle exactly.

use nalgebra::Vector3;
use std::collections::HashSet;

/// Balanced kd-tree storing indices into a caller-owned point array.
#[derive(Debug, Clone, Default)]
pub struct KdTree {
    points: Vec<Vector3<f64>>,
    // Implicit binary tree: nodes[i] is a point index; children at 2i+1/2i+2.
    nodes: Vec<u32>,
    axes: Vec<u8>,
}

impl KdTree {
    pub fn build(points: Vec<Vector3<f64>>) -> Self {
        let n = points.len();
        let mut order: Vec<u32> = (0..n as u32).collect();
        let mut tree = KdTree { points, nodes: vec![u32::MAX; 4 * n.max(1)], axes: vec![0; 4 * n.max(1)] };
        if n > 0 {
            tree.build_rec(0, &mut order);
        }
        tree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    fn build_rec(&mut self, node: usize, idx: &mut [u32]) {
        if idx.is_empty() {
            return;
        }
        if node >= self.nodes.len() {
            let new_len = (node + 1).next_power_of_two().max(2 * (node + 1));
            self.nodes.resize(new_len, u32::MAX);
            self.axes.resize(new_len, 0);
        }
        if idx.len() == 1 {
            self.nodes[node] = idx[0];
            return;
        }
        // Split on the axis with the largest spread.
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for &i in idx.iter() {
            let p = &self.points[i as usize];
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let spread = hi - lo;
        let axis = spread.iamax();
        let mid = idx.len() / 2;
        idx.select_nth_unstable_by(mid, |&a, &b| {
            let pa = self.points[a as usize][axis];
            let pb = self.points[b as usize][axis];
            pa.partial_cmp(&pb).unwrap().then(a.cmp(&b))
        });
        self.nodes[node] = idx[mid];
        self.axes[node] = axis as u8;
        let (left, rest) = idx.split_at_mut(mid);
        let right = &mut rest[1..];
        self.build_rec(2 * node + 1, left);
        self.build_rec(2 * node + 2, right);
    }

    /// Indices and squared distances of the `k` nearest points, ordered by
    /// `(distance², index)`.
    pub fn knn(&self, query: &Vector3<f64>, k: usize) -> Vec<(usize, f64)> {
        if self.points.is_empty() || k == 0 {
            return Vec::new();
        }
        // Bounded max-heap as a sorted vec; k is small everywhere we query.
        let mut best: Vec<(f64, u32)> = Vec::with_capacity(k + 1);
        self.knn_rec(0, query, k, &mut best);
        best.into_iter().map(|(d, i)| (i as usize, d)).collect()
    }

    fn knn_rec(&self, node: usize, query: &Vector3<f64>, k: usize, best: &mut Vec<(f64, u32)>) {
        if node >= self.nodes.len() || self.nodes[node] == u32::MAX {
            return;
        }
        let idx = self.nodes[node];
        let p = &self.points[idx as usize];
        let d2 = (p - query).norm_squared();
        let key = (d2, idx);
        if best.len() < k || key < *best.last().unwrap() {
            let pos = best.partition_point(|e| *e < key);
            best.insert(pos, key);
            if best.len() > k {
                best.pop();
            }
        }
        let axis = self.axes[node] as usize;
        let delta = query[axis] - p[axis];
        let (near, far) = if delta <= 0.0 {
            (2 * node + 1, 2 * node + 2)
        } else {
            (2 * node + 2, 2 * node + 1)
        };
        self.knn_rec(near, query, k, best);
        if best.len() < k || delta * delta <= best.last().unwrap().0 {
            self.knn_rec(far, query, k, best);
        }
    }

    /// Squared distance to the nearest point, or `None` for an empty tree.
    pub fn nearest_dist_sq(&self, query: &Vector3<f64>) -> Option<f64> {
        self.knn(query, 1).first().map(|&(_, d2)| d2)
    }
}

/// Integer voxel coordinates of a point at the given leaf size.
pub fn voxel_key(p: &Vector3<f64>, leaf: f64) -> (i64, i64, i64) {
    (
        (p.x / leaf).floor() as i64,
        (p.y / leaf).floor() as i64,
        (p.z / leaf).floor() as i64,
    )
}

/// Keep the first point seen in each voxel, preserving input order.
pub fn voxel_downsample(points: &[Vector3<f64>], leaf: f64) -> Vec<Vector3<f64>> {
    let mut seen = HashSet::with_capacity(points.len());
    let mut out = Vec::new();
    for p in points {
        if seen.insert(voxel_key(p, leaf)) {
            out.push(*p);
        }
    }
    out
}
