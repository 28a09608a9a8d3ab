//! Bucketed kd-tree over 3D points for exact k-nearest-neighbor queries.
//! Ties in distance are broken toward the smaller point index so queries
//! match the exhaustive-scan oracle exactly.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::linalg::Vec3;

const LEAF_SIZE: usize = 16;

enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

pub struct KdTree<'a> {
    points: &'a [Vec3],
    order: Vec<u32>,
    nodes: Vec<Node>,
    root: usize,
}

#[derive(PartialEq)]
struct Cand {
    dist_sq: f64,
    index: usize,
}

impl Eq for Cand {}

impl Ord for Cand {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist_sq
            .partial_cmp(&other.dist_sq)
            .unwrap()
            .then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Cand {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn coord(p: Vec3, axis: usize) -> f64 {
    match axis {
        0 => p.x,
        1 => p.y,
        _ => p.z,
    }
}

impl<'a> KdTree<'a> {
    pub fn build(points: &'a [Vec3]) -> Self {
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        let mut nodes = Vec::new();
        let root = if points.is_empty() {
            nodes.push(Node::Leaf { start: 0, end: 0 });
            0
        } else {
            let n = points.len();
            Self::build_node(points, &mut order, &mut nodes, 0, n)
        };
        KdTree { points, order, nodes, root }
    }

    fn build_node(
        points: &[Vec3],
        order: &mut [u32],
        nodes: &mut Vec<Node>,
        start: usize,
        end: usize,
    ) -> usize {
        if end - start <= LEAF_SIZE {
            nodes.push(Node::Leaf { start, end });
            return nodes.len() - 1;
        }
        // split on the axis of largest spread
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in &order[start..end] {
            let p = points[i as usize];
            for a in 0..3 {
                lo[a] = lo[a].min(coord(p, a));
                hi[a] = hi[a].max(coord(p, a));
            }
        }
        let axis = (0..3)
            .max_by(|&a, &b| (hi[a] - lo[a]).partial_cmp(&(hi[b] - lo[b])).unwrap())
            .unwrap();
        let mid = (start + end) / 2;
        order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            coord(points[a as usize], axis)
                .partial_cmp(&coord(points[b as usize], axis))
                .unwrap()
                .then(a.cmp(&b))
        });
        let value = coord(points[order[mid] as usize], axis);
        let node_idx = nodes.len();
        nodes.push(Node::Leaf { start: 0, end: 0 }); // placeholder
        let left = Self::build_node(points, order, nodes, start, mid);
        let right = Self::build_node(points, order, nodes, mid, end);
        nodes[node_idx] = Node::Split { axis, value, left, right };
        node_idx
    }

    /// Indices of the `k` nearest neighbors of `query`, excluding
    /// `exclude` (usually the query point itself), ordered by
    /// (distance, index).
    pub fn nearest(&self, query: Vec3, k: usize, exclude: Option<usize>) -> Vec<usize> {
        let mut heap: BinaryHeap<Cand> = BinaryHeap::with_capacity(k + 1);
        self.search(self.root, query, k, exclude, &mut heap);
        let mut out: Vec<Cand> = heap.into_vec();
        out.sort();
        out.into_iter().map(|c| c.index).collect()
    }

    fn search(
        &self,
        node: usize,
        query: Vec3,
        k: usize,
        exclude: Option<usize>,
        heap: &mut BinaryHeap<Cand>,
    ) {
        match &self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[*start..*end] {
                    let i = i as usize;
                    if Some(i) == exclude {
                        continue;
                    }
                    let cand = Cand { dist_sq: self.points[i].sub(query).norm_sq(), index: i };
                    if heap.len() < k {
                        heap.push(cand);
                    } else if cand < *heap.peek().unwrap() {
                        heap.pop();
                        heap.push(cand);
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let d = coord(query, *axis) - value;
                let (near, far) = if d < 0.0 { (*left, *right) } else { (*right, *left) };
                self.search(near, query, k, exclude, heap);
                // explore the far side on exact ties so index tie-breaking
                // stays consistent with the exhaustive scan
                if heap.len() < k || d * d <= heap.peek().unwrap().dist_sq {
                    self.search(far, query, k, exclude, heap);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn exhaustive(points: &[Vec3], query: Vec3, k: usize, exclude: Option<usize>) -> Vec<usize> {
        let mut cands: Vec<(f64, usize)> = points
            .iter()
            .enumerate()
            .filter(|(i, _)| Some(*i) != exclude)
            .map(|(i, p)| (p.sub(query).norm_sq(), i))
            .collect();
        cands.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        cands.into_iter().take(k).map(|(_, i)| i).collect()
    }

    #[test]
    fn matches_exhaustive_scan_on_random_clouds() {
        let mut rng = Rng::seed_from(21);
        for trial in 0..20 {
            let n = 20 + rng.below(480);
            let pts: Vec<Vec3> = (0..n)
                .map(|_| {
                    Vec3::new(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0))
                })
                .collect();
            let tree = KdTree::build(&pts);
            let k = 1 + rng.below(10);
            for i in 0..n.min(50) {
                let got = tree.nearest(pts[i], k, Some(i));
                let want = exhaustive(&pts, pts[i], k, Some(i));
                assert_eq!(got, want, "trial {trial} point {i} k {k}");
            }
        }
    }

    #[test]
    fn duplicate_coordinates_tie_break_by_index() {
        let pts = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
        ];
        let tree = KdTree::build(&pts);
        assert_eq!(tree.nearest(pts[0], 2, Some(0)), vec![1, 2]);
        assert_eq!(exhaustive(&pts, pts[0], 2, Some(0)), vec![1, 2]);
    }
}
