//! Exact 3-d kd-tree (axis-median splits, round-robin axes) shared by the
//! occupancy-map point filter and the region-growing neighbor search.
//! Queries return true nearest neighbors, never approximations; ties on
//! distance resolve to the lowest point index so results match a linear
//! scan exactly.

use nalgebra::Vector3;

#[derive(Debug, Clone, Copy)]
struct Node {
    /// Index into the original point slice.
    point: u32,
    axis: u8,
    left: i32,
    right: i32,
}

const NIL: i32 = -1;

/// Immutable spatial index over a snapshot of points. All coordinates must
/// be finite.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Vector3<f64>>,
    nodes: Vec<Node>,
    root: i32,
}

impl KdTree {
    pub fn build(points: &[Vector3<f64>]) -> KdTree {
        let mut idx: Vec<u32> = (0..points.len() as u32).collect();
        let mut tree = KdTree {
            points: points.to_vec(),
            nodes: Vec::with_capacity(points.len()),
            root: NIL,
        };
        tree.root = tree.build_node(&mut idx, 0);
        tree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, index: usize) -> &Vector3<f64> {
        &self.points[index]
    }

    fn build_node(&mut self, idx: &mut [u32], depth: usize) -> i32 {
        if idx.is_empty() {
            return NIL;
        }
        let axis = (depth % 3) as u8;
        let mid = idx.len() / 2;
        // Total order on (coordinate, index) keeps the build deterministic
        // under duplicate coordinates.
        idx.select_nth_unstable_by(mid, |&a, &b| {
            let ca = self.points[a as usize][axis as usize];
            let cb = self.points[b as usize][axis as usize];
            ca.total_cmp(&cb).then(a.cmp(&b))
        });
        let point = idx[mid];
        let node_id = self.nodes.len() as i32;
        self.nodes.push(Node {
            point,
            axis,
            left: NIL,
            right: NIL,
        });
        let (lo, rest) = idx.split_at_mut(mid);
        let hi = &mut rest[1..];
        let left = self.build_node(lo, depth + 1);
        let right = self.build_node(hi, depth + 1);
        self.nodes[node_id as usize].left = left;
        self.nodes[node_id as usize].right = right;
        node_id
    }

    /// Nearest point to `query` as (index, distance), or None on an empty
    /// tree.
    pub fn nearest(&self, query: &Vector3<f64>) -> Option<(usize, f64)> {
        if self.root == NIL {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        self.nearest_rec(self.root, query, &mut best);
        Some((best.0, best.1.sqrt()))
    }

    fn nearest_rec(&self, node_id: i32, query: &Vector3<f64>, best: &mut (usize, f64)) {
        let node = self.nodes[node_id as usize];
        let p = &self.points[node.point as usize];
        let d2 = (p - query).norm_squared();
        let idx = node.point as usize;
        if d2 < best.1 || (d2 == best.1 && idx < best.0) {
            *best = (idx, d2);
        }
        let delta = query[node.axis as usize] - p[node.axis as usize];
        let (near, far) = if delta < 0.0 {
            (node.left, node.right)
        } else {
            (node.right, node.left)
        };
        if near != NIL {
            self.nearest_rec(near, query, best);
        }
        if far != NIL && delta * delta <= best.1 {
            self.nearest_rec(far, query, best);
        }
    }

    /// Up to `k` nearest points, sorted by ascending (distance, index).
    pub fn k_nearest(&self, query: &Vector3<f64>, k: usize) -> Vec<(usize, f64)> {
        if self.root == NIL || k == 0 {
            return Vec::new();
        }
        // Bounded max-heap keyed on (distance^2, index).
        let mut heap: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        self.k_nearest_rec(self.root, query, k, &mut heap);
        let mut out: Vec<(usize, f64)> = heap
            .into_iter()
            .map(|(d2, i)| (i, d2.sqrt()))
            .collect();
        out.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        out
    }

    fn k_nearest_rec(
        &self,
        node_id: i32,
        query: &Vector3<f64>,
        k: usize,
        heap: &mut Vec<(f64, usize)>,
    ) {
        let node = self.nodes[node_id as usize];
        let p = &self.points[node.point as usize];
        let d2 = (p - query).norm_squared();
        let cand = (d2, node.point as usize);
        if heap.len() < k {
            heap.push(cand);
            heap.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.cmp(&a.1)));
        } else if cand < heap[0] {
            heap[0] = cand;
            heap.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.cmp(&a.1)));
        }
        let delta = query[node.axis as usize] - p[node.axis as usize];
        let (near, far) = if delta < 0.0 {
            (node.left, node.right)
        } else {
            (node.right, node.left)
        };
        if near != NIL {
            self.k_nearest_rec(near, query, k, heap);
        }
        let worst = if heap.len() < k {
            f64::INFINITY
        } else {
            heap[0].0
        };
        if far != NIL && delta * delta <= worst {
            self.k_nearest_rec(far, query, k, heap);
        }
    }
}
