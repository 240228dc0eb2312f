//! Exact k-nearest-neighbour search under squared euclidean distance.
//!
//! Neighbours are ordered by `(distance, point index)`, so equal distances
//! resolve to the lower index.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
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

#[derive(Debug, Clone)]
pub struct KdTree {
    dim: usize,
    points: Vec<f64>,
    /// Point indices, grouped by leaf.
    order: Vec<usize>,
    nodes: Vec<Node>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    dist: f64,
    index: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist.total_cmp(&other.dist).then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

pub fn sq_euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl KdTree {
    /// Builds a tree over equally sized points.
    ///
    /// # Panics
    /// If the points do not all have the same length.
    pub fn new(points: &[Vec<f64>]) -> Self {
        let dim = points.first().map_or(0, Vec::len);
        assert!(
            points.iter().all(|p| p.len() == dim),
            "kd-tree points must share one dimension"
        );
        let mut tree = Self {
            dim,
            points: points.iter().flatten().copied().collect(),
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        if !points.is_empty() {
            tree.build(0, points.len());
        }
        tree
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE || self.dim == 0 {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        // Split on the coordinate with the widest spread.
        let mut best = (0, -1.0);
        for d in 0..self.dim {
            let (lo, hi) = self.order[start..end]
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                    let v = self.points[i * self.dim + d];
                    (lo.min(v), hi.max(v))
                });
            if hi - lo > best.1 {
                best = (d, hi - lo);
            }
        }
        let dim = best.0;
        if best.1 <= 0.0 {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mid = start + (end - start) / 2;
        let (points, d) = (&self.points, self.dim);
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a * d + dim].total_cmp(&points[b * d + dim]).then(a.cmp(&b))
        });
        let value = self.points[self.order[mid] * self.dim + dim];
        self.nodes.push(Node::Leaf { start: 0, end: 0 });
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

    /// The `k` nearest points as `(index, squared distance)`, nearest first.
    pub fn knn(&self, q: &[f64], k: usize) -> Vec<(usize, f64)> {
        assert_eq!(q.len(), self.dim, "query dimension");
        if k == 0 || self.is_empty() {
            return Vec::new();
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.search(0, q, k, &mut heap);
        let mut out: Vec<Candidate> = heap.into_vec();
        out.sort();
        out.into_iter().map(|c| (c.index, c.dist)).collect()
    }

    fn search(&self, node: usize, q: &[f64], k: usize, heap: &mut BinaryHeap<Candidate>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let c = Candidate {
                        dist: sq_euclidean(q, self.point(i)),
                        index: i,
                    };
                    if heap.len() < k {
                        heap.push(c);
                    } else if c < *heap.peek().expect("heap is full") {
                        heap.pop();
                        heap.push(c);
                    }
                }
            }
            Node::Split {
                dim,
                value,
                left,
                right,
            } => {
                let diff = q[dim] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, k, heap);
                // Points on the far side are at least |diff| away along `dim`.
                // Ties at exactly that distance may still win on index.
                if heap.len() < k || diff * diff <= heap.peek().expect("heap is full").dist {
                    self.search(far, q, k, heap);
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

    fn brute(points: &[Vec<f64>], q: &[f64], k: usize) -> Vec<(usize, f64)> {
        let mut all: Vec<(usize, f64)> = points
            .iter()
            .enumerate()
            .map(|(i, p)| (i, sq_euclidean(q, p)))
            .collect();
        all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        all.truncate(k);
        all
    }

    #[test]
    fn matches_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let points: Vec<Vec<f64>> = (0..300)
            .map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let tree = KdTree::new(&points);
        for _ in 0..100 {
            let q: Vec<f64> = (0..5).map(|_| rng.random_range(-1.2..1.2)).collect();
            assert_eq!(tree.knn(&q, 5), brute(&points, &q, 5));
        }
    }

    #[test]
    fn duplicates_and_ties() {
        let points = vec![vec![0.0, 0.0]; 12];
        let tree = KdTree::new(&points);
        let got: Vec<usize> = tree.knn(&[1.0, 1.0], 3).into_iter().map(|(i, _)| i).collect();
        assert_eq!(got, vec![0, 1, 2]);
        let grid: Vec<Vec<f64>> = (0..40).map(|i| vec![(i % 5) as f64, (i / 5) as f64]).collect();
        let tree = KdTree::new(&grid);
        for q in [[2.0, 3.0], [0.5, 0.5], [4.0, 7.5]] {
            assert_eq!(tree.knn(&q, 6), brute(&grid, &q, 6));
        }
    }

    #[test]
    fn small_inputs() {
        assert!(KdTree::new(&[]).is_empty());
        let tree = KdTree::new(&[vec![1.0]]);
        assert_eq!(tree.knn(&[5.0], 5), vec![(0, 16.0)]);
        assert!(tree.knn(&[5.0], 0).is_empty());
    }
}
