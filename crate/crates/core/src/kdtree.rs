//! Exact k-d tree over fixed-dimension `f64` points.
//!
//! Results are ordered by `(squared distance, point index)`, which makes them
//! identical to a sorted linear scan, ties included.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

const LEAF_SIZE: usize = 8;

#[derive(Clone, Debug)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        dim: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Clone, Debug)]
pub struct KdTree {
    dim: usize,
    coords: Vec<f64>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub dist2: f64,
}

impl Eq for Neighbor {}

impl Ord for Neighbor {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist2
            .total_cmp(&other.dist2)
            .then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Neighbor {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl KdTree {
    /// Builds from row-major coordinates, `dim` values per point.
    pub fn new(dim: usize, coords: Vec<f64>) -> Self {
        assert!(dim > 0 && coords.len().is_multiple_of(dim));
        let n = coords.len() / dim;
        let mut tree = Self {
            dim,
            coords,
            order: (0..n).collect(),
            nodes: Vec::new(),
        };
        if n > 0 {
            tree.build(0, n);
        }
        tree
    }

    pub fn from_points<const D: usize>(points: &[[f64; D]]) -> Self {
        Self::new(D, points.iter().flatten().copied().collect())
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn point(&self, index: usize) -> &[f64] {
        &self.coords[index * self.dim..(index + 1) * self.dim]
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { start, end });
        if end - start <= LEAF_SIZE {
            return id;
        }
        // split on the axis of largest spread
        let mut best = (0, -1.0);
        for d in 0..self.dim {
            let (lo, hi) = self.order[start..end]
                .iter()
                .map(|&i| self.coords[i * self.dim + d])
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
            if hi - lo > best.1 {
                best = (d, hi - lo);
            }
        }
        let dim = best.0;
        if best.1 <= 0.0 {
            return id;
        }
        let mid = start + (end - start) / 2;
        let coords = &self.coords;
        let stride = self.dim;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            coords[a * stride + dim].total_cmp(&coords[b * stride + dim])
        });
        let value = self.coords[self.order[mid] * self.dim + dim];
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id] = Node::Split {
            dim,
            value,
            left,
            right,
        };
        id
    }

    /// The `k` nearest points accepted by `keep`, closest first.
    pub fn knn_filtered(&self, query: &[f64], k: usize, keep: impl Fn(usize) -> bool) -> Vec<Neighbor> {
        debug_assert_eq!(query.len(), self.dim);
        if k == 0 || self.is_empty() {
            return Vec::new();
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.search(0, query, k, &keep, &mut heap);
        heap.into_sorted_vec()
    }

    pub fn knn(&self, query: &[f64], k: usize) -> Vec<Neighbor> {
        self.knn_filtered(query, k, |_| true)
    }

    pub fn nearest(&self, query: &[f64]) -> Option<Neighbor> {
        self.knn(query, 1).into_iter().next()
    }

    fn search(
        &self,
        node: usize,
        query: &[f64],
        k: usize,
        keep: &impl Fn(usize) -> bool,
        heap: &mut BinaryHeap<Neighbor>,
    ) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    if !keep(i) {
                        continue;
                    }
                    let cand = Neighbor {
                        index: i,
                        dist2: squared_distance(query, self.point(i)),
                    };
                    if heap.len() < k {
                        heap.push(cand);
                    } else if cand < *heap.peek().unwrap() {
                        heap.pop();
                        heap.push(cand);
                    }
                }
            }
            Node::Split {
                dim,
                value,
                left,
                right,
            } => {
                let diff = query[dim] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, query, k, keep, heap);
                // equality still explored so index tie-breaks match a scan
                if heap.len() < k || diff * diff <= heap.peek().unwrap().dist2 {
                    self.search(far, query, k, keep, heap);
                }
            }
        }
    }
}
