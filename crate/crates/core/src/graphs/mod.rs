//! Point-level adjacency structures: the k-nearest-neighbor graph used by
//! the partition energy and the Voronoi (Delaunay) adjacency used for
//! superedge discovery, plus the length-based edge weighting.

pub mod delaunay;
pub mod kdtree;

use rayon::prelude::*;

use crate::data::PointCloud;
use crate::error::{Error, Result};
pub use delaunay::Degeneracy;
use kdtree::KdTree;

/// Weight floor and slope constant of the linear length weighting.
pub const WEIGHT_FLOOR: f64 = 0.05;
pub const WEIGHT_SLOPE: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphKind {
    Knn,
    Voronoi,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub length: f64,
    pub weight: f64,
}

#[derive(Debug, Clone)]
pub struct AdjacencyGraph {
    pub node_count: usize,
    pub edges: Vec<Edge>,
    pub kind: GraphKind,
}

impl AdjacencyGraph {
    /// Per-node neighbor lists (undirected expansion of the edge set).
    pub fn neighbor_lists(&self) -> Vec<Vec<(usize, f64)>> {
        let mut lists = vec![Vec::new(); self.node_count];
        for (e, edge) in self.edges.iter().enumerate() {
            let _ = e;
            lists[edge.a].push((edge.b, edge.weight));
            lists[edge.b].push((edge.a, edge.weight));
        }
        lists
    }
}

/// Raw k-nearest-neighbor index lists (excluding the point itself),
/// ordered by distance with ties to the smaller index.
pub fn knn_lists(cloud: &PointCloud, k: usize) -> Result<Vec<Vec<usize>>> {
    let n = cloud.len();
    if n <= k {
        return Err(Error::parameter(format!("need more than k={k} points, got {n}")));
    }
    let tree = KdTree::build(&cloud.positions);
    let lists: Vec<Vec<usize>> = (0..n)
        .into_par_iter()
        .map(|i| tree.nearest(cloud.positions[i], k, Some(i)))
        .collect();
    Ok(lists)
}

/// Symmetrized k-nearest-neighbor graph: an edge is kept when either
/// endpoint ranks the other among its k nearest.
pub fn knn_graph(cloud: &PointCloud, k: usize) -> Result<AdjacencyGraph> {
    let lists = knn_lists(cloud, k)?;
    Ok(knn_graph_from_lists(cloud, &lists))
}

pub fn knn_graph_from_lists(cloud: &PointCloud, lists: &[Vec<usize>]) -> AdjacencyGraph {
    let mut pairs: Vec<(usize, usize)> = Vec::with_capacity(lists.len() * lists.first().map_or(0, Vec::len));
    for (i, list) in lists.iter().enumerate() {
        for &j in list {
            pairs.push((i.min(j), i.max(j)));
        }
    }
    pairs.sort_unstable();
    pairs.dedup();
    let edges = pairs
        .into_iter()
        .map(|(a, b)| {
            let length = cloud.positions[a].dist(cloud.positions[b]);
            Edge { a, b, length, weight: 1.0 }
        })
        .collect();
    AdjacencyGraph { node_count: cloud.len(), edges, kind: GraphKind::Knn }
}

/// Voronoi adjacency of the cloud: the edges of its Delaunay
/// tetrahedralization, optionally pruned to lengths at most `max_len`.
/// Degenerate inputs (coplanar, collinear) fall back to the triangulation
/// of the subspace they span; the returned flag says what happened.
pub fn voronoi_graph(cloud: &PointCloud, max_len: Option<f64>) -> Result<(AdjacencyGraph, Degeneracy)> {
    if cloud.is_empty() {
        return Err(Error::parameter("empty cloud"));
    }
    let (pairs, degen) = delaunay::delaunay_adjacency(&cloud.positions);
    let edges = pairs
        .into_iter()
        .map(|(a, b)| {
            let (a, b) = (a as usize, b as usize);
            let length = cloud.positions[a].dist(cloud.positions[b]);
            Edge { a, b, length, weight: 1.0 }
        })
        .filter(|e| max_len.map_or(true, |cap| e.length <= cap))
        .collect();
    Ok((
        AdjacencyGraph { node_count: cloud.len(), edges, kind: GraphKind::Voronoi },
        degen,
    ))
}

/// Weight edges linearly decreasing in length:
/// `w = max(floor, 1 - len / (slope * mean_len))`.
pub fn edge_weights(graph: &mut AdjacencyGraph) {
    if graph.edges.is_empty() {
        return;
    }
    let mean: f64 = graph.edges.iter().map(|e| e.length).sum::<f64>() / graph.edges.len() as f64;
    if mean <= 0.0 {
        for e in &mut graph.edges {
            e.weight = 1.0;
        }
        return;
    }
    for e in &mut graph.edges {
        e.weight = (1.0 - e.length / (WEIGHT_SLOPE * mean)).max(WEIGHT_FLOOR);
    }
}
