use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::Vector3;

const NONE: i32 = -1;

#[derive(Clone, Debug)]
struct Node {
    point: Vector3<f64>,
    id: u64,
    axis: usize,
    left: i32,
    right: i32,
}

/// Balanced k-d tree over 3-vectors with payload ids. Build once, query
/// many; queries are read-only and safe to run concurrently.
///
/// All query results are deterministically ordered (ids ascending for radius
/// queries, distance-then-id for k-NN) so callers stay bit-reproducible.
#[derive(Clone, Debug, Default)]
pub struct SpatialIndex {
    nodes: Vec<Node>,
    root: i32,
}

impl SpatialIndex {
    pub fn build(entries: &[(u64, Vector3<f64>)]) -> Self {
        let mut items: Vec<(u64, Vector3<f64>)> = entries.to_vec();
        let mut nodes = Vec::with_capacity(items.len());
        let n = items.len();
        let root = if n == 0 { NONE } else { build_rec(&mut items, &mut nodes) };
        let _ = n;
        SpatialIndex { nodes, root }
    }

    /// Indexes points by their position, ids 0..n.
    pub fn from_points(points: &[Vector3<f64>]) -> Self {
        let entries: Vec<(u64, Vector3<f64>)> =
            points.iter().enumerate().map(|(i, p)| (i as u64, *p)).collect();
        Self::build(&entries)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Ids of all stored positions within Euclidean distance `r` of
    /// `center` (inclusive), ascending id order.
    pub fn radius_search(&self, center: &Vector3<f64>, r: f64) -> Vec<u64> {
        let mut out = Vec::new();
        if self.root != NONE && r > 0.0 {
            self.radius_rec(self.root, center, r * r, &mut out);
        }
        out.sort_unstable();
        out
    }

    fn radius_rec(&self, idx: i32, center: &Vector3<f64>, r2: f64, out: &mut Vec<u64>) {
        let node = &self.nodes[idx as usize];
        if (node.point - center).norm_squared() <= r2 {
            out.push(node.id);
        }
        let d = center[node.axis] - node.point[node.axis];
        let (near, far) = if d < 0.0 { (node.left, node.right) } else { (node.right, node.left) };
        if near != NONE {
            self.radius_rec(near, center, r2, out);
        }
        if far != NONE && d * d <= r2 {
            self.radius_rec(far, center, r2, out);
        }
    }

    /// The k nearest stored positions, sorted by (distance, id). Ties on
    /// distance are resolved toward the smaller id.
    pub fn knn(&self, center: &Vector3<f64>, k: usize) -> Vec<(u64, f64)> {
        if self.root == NONE || k == 0 {
            return Vec::new();
        }
        let mut heap: BinaryHeap<HeapItem> = BinaryHeap::with_capacity(k + 1);
        self.knn_rec(self.root, center, k, &mut heap);
        let mut out: Vec<(u64, f64)> =
            heap.into_iter().map(|h| (h.id, h.d2.sqrt())).collect();
        out.sort_unstable_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        out
    }

    pub fn nearest(&self, center: &Vector3<f64>) -> Option<(u64, f64)> {
        self.knn(center, 1).into_iter().next()
    }

    fn knn_rec(&self, idx: i32, center: &Vector3<f64>, k: usize, heap: &mut BinaryHeap<HeapItem>) {
        let node = &self.nodes[idx as usize];
        let cand = HeapItem { d2: (node.point - center).norm_squared(), id: node.id };
        if heap.len() < k {
            heap.push(cand);
        } else if cand < *heap.peek().expect("non-empty heap") {
            heap.pop();
            heap.push(cand);
        }
        let d = center[node.axis] - node.point[node.axis];
        let (near, far) = if d < 0.0 { (node.left, node.right) } else { (node.right, node.left) };
        if near != NONE {
            self.knn_rec(near, center, k, heap);
        }
        let descend_far = heap.len() < k
            || d * d <= heap.peek().expect("non-empty heap").d2;
        if far != NONE && descend_far {
            self.knn_rec(far, center, k, heap);
        }
    }
}

/// Max-heap item ordered by (distance², id); the heap top is the current
/// worst neighbor.
#[derive(Clone, Copy, Debug, PartialEq)]
struct HeapItem {
    d2: f64,
    id: u64,
}

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d2.total_cmp(&other.d2).then(self.id.cmp(&other.id))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn build_rec(items: &mut [(u64, Vector3<f64>)], nodes: &mut Vec<Node>) -> i32 {
    debug_assert!(!items.is_empty());
    // Split along the axis with the largest extent for balanced cells.
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for (_, p) in items.iter() {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let extent = hi - lo;
    let axis = if extent[0] >= extent[1] && extent[0] >= extent[2] {
        0
    } else if extent[1] >= extent[2] {
        1
    } else {
        2
    };
    items.sort_unstable_by(|a, b| a.1[axis].total_cmp(&b.1[axis]).then(a.0.cmp(&b.0)));
    let mid = items.len() / 2;
    let (id, point) = items[mid];
    let slot = nodes.len();
    nodes.push(Node { point, id, axis, left: NONE, right: NONE });
    if mid > 0 {
        let left = build_rec(&mut items[..mid], nodes);
        nodes[slot].left = left;
    }
    if mid + 1 < items.len() {
        let right = {
            let (_, rest) = items.split_at_mut(mid + 1);
            build_rec(rest, nodes)
        };
        nodes[slot].right = right;
    }
    slot as i32
}
