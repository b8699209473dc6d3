//! Static 3-d tree over a point slice.
//!
//! Queries order candidates by `(squared distance, index)` so that equal
//! distances resolve to the lowest point index, independent of tree layout.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::geometry::Vec3;

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Vec3>,
    /// Point indices, permuted so each leaf owns a contiguous range.
    order: Vec<usize>,
    nodes: Vec<Node>,
}

/// Max-heap entry; the worst candidate sits on top.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    dist2: f64,
    index: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist2
            .total_cmp(&other.dist2)
            .then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl KdTree {
    pub fn new(points: Vec<Vec3>) -> Self {
        let mut tree = KdTree {
            order: (0..points.len()).collect(),
            points,
            nodes: Vec::new(),
        };
        if !tree.points.is_empty() {
            tree.build(0, tree.points.len());
        }
        tree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let axis = self.widest_axis(start, end);
        let mid = start + (end - start) / 2;
        let points = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a][axis].total_cmp(&points[b][axis])
        });
        let value = self.points[self.order[mid]][axis];
        self.nodes.push(Node::Leaf { start: 0, end: 0 });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id] = Node::Split {
            axis,
            value,
            left,
            right,
        };
        id
    }

    fn widest_axis(&self, start: usize, end: usize) -> usize {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for &i in &self.order[start..end] {
            lo = lo.inf(&self.points[i]);
            hi = hi.sup(&self.points[i]);
        }
        (hi - lo).imax()
    }

    /// Nearest point as `(index, distance)`; `None` for an empty tree.
    pub fn nearest(&self, query: &Vec3) -> Option<(usize, f64)> {
        let mut best = Candidate {
            dist2: f64::INFINITY,
            index: usize::MAX,
        };
        if self.nodes.is_empty() {
            return None;
        }
        self.nearest_rec(0, query, &mut best);
        Some((best.index, best.dist2.sqrt()))
    }

    fn nearest_rec(&self, node: usize, q: &Vec3, best: &mut Candidate) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let c = Candidate {
                        dist2: (self.points[i] - q).norm_squared(),
                        index: i,
                    };
                    if c < *best {
                        *best = c;
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.nearest_rec(near, q, best);
                // `<=` keeps equal-distance points on the far side reachable for tie-breaking
                if diff * diff <= best.dist2 {
                    self.nearest_rec(far, q, best);
                }
            }
        }
    }

    /// The `k` nearest points as `(index, distance)`, closest first.
    pub fn k_nearest(&self, query: &Vec3, k: usize) -> Vec<(usize, f64)> {
        if k == 0 || self.nodes.is_empty() {
            return Vec::new();
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.knn_rec(0, query, k, &mut heap);
        let mut out: Vec<_> = heap.into_vec();
        out.sort();
        out.into_iter().map(|c| (c.index, c.dist2.sqrt())).collect()
    }

    fn knn_rec(&self, node: usize, q: &Vec3, k: usize, heap: &mut BinaryHeap<Candidate>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let c = Candidate {
                        dist2: (self.points[i] - q).norm_squared(),
                        index: i,
                    };
                    if heap.len() < k {
                        heap.push(c);
                    } else if c < *heap.peek().unwrap() {
                        heap.pop();
                        heap.push(c);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.knn_rec(near, q, k, heap);
                let bound = if heap.len() < k {
                    f64::INFINITY
                } else {
                    heap.peek().unwrap().dist2
                };
                if diff * diff <= bound {
                    self.knn_rec(far, q, k, heap);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_nearest(points: &[Vec3], q: &Vec3) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        for (i, p) in points.iter().enumerate() {
            let d = (p - q).norm_squared();
            if d < best.1 {
                best = (i, d);
            }
        }
        (best.0, best.1.sqrt())
    }

    fn brute_knn(points: &[Vec3], q: &Vec3, k: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..points.len()).collect();
        idx.sort_by(|&a, &b| {
            (points[a] - q)
                .norm_squared()
                .total_cmp(&(points[b] - q).norm_squared())
                .then(a.cmp(&b))
        });
        idx.truncate(k);
        idx
    }

    fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec3> {
        (0..n)
            .map(|_| Vec3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-1.0..1.0)))
            .collect()
    }

    #[test]
    fn nearest_matches_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts = random_points(&mut rng, 500);
        let tree = KdTree::new(pts.clone());
        for _ in 0..500 {
            let q = Vec3::new(rng.random_range(-6.0..6.0), rng.random_range(-6.0..6.0), rng.random_range(-2.0..2.0));
            let (i, d) = tree.nearest(&q).unwrap();
            let (bi, bd) = brute_nearest(&pts, &q);
            assert_eq!(i, bi);
            assert_eq!(d, bd);
        }
    }

    #[test]
    fn knn_matches_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let pts = random_points(&mut rng, 300);
        let tree = KdTree::new(pts.clone());
        for q in pts.iter().take(100) {
            let got: Vec<usize> = tree.k_nearest(q, 8).into_iter().map(|(i, _)| i).collect();
            assert_eq!(got, brute_knn(&pts, q, 8));
        }
    }

    #[test]
    fn ties_resolve_to_lowest_index() {
        // a lattice with many duplicate points
        let mut pts = Vec::new();
        for _ in 0..3 {
            for x in 0..6 {
                for y in 0..6 {
                    pts.push(Vec3::new(x as f64, y as f64, 0.0));
                }
            }
        }
        let tree = KdTree::new(pts.clone());
        for (i, p) in pts.iter().enumerate() {
            let (j, d) = tree.nearest(p).unwrap();
            assert_eq!(d, 0.0);
            assert_eq!(j, i % 36);
        }
        // equidistant between two lattice points
        let (j, _) = tree.nearest(&Vec3::new(0.5, 0.0, 0.0)).unwrap();
        assert_eq!(j, 0);
    }

    #[test]
    fn degenerate_inputs() {
        let empty = KdTree::new(Vec::new());
        assert!(empty.nearest(&Vec3::zeros()).is_none());
        assert!(empty.k_nearest(&Vec3::zeros(), 3).is_empty());
        let one = KdTree::new(vec![Vec3::new(1.0, 1.0, 1.0)]);
        assert_eq!(one.k_nearest(&Vec3::zeros(), 5).len(), 1);
    }
}
