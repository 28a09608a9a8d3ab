//! The superpoint graph: per-component shape statistics, directed
//! superedges discovered from the Voronoi adjacency, and the 13
//! dimensional superedge features with their train-set normalization.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::data::{Label, PointCloud};
use crate::error::{Error, Result};
use crate::graphs::AdjacencyGraph;
use crate::linalg::{eigen_sym3, Sym3, Vec3};
use crate::partition::PartitionSolution;

pub const SUPEREDGE_DIM: usize = 13;

/// Floor applied to shape statistics before log ratios.
pub const RATIO_EPS: f64 = 1e-10;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Superpoint {
    pub members: Vec<usize>,
    pub centroid: Vec3,
    /// Covariance eigenvalues, descending, clamped at zero.
    pub lambdas: [f64; 3],
    /// Bounding-box diagonal, meters.
    pub diameter: f64,
    pub majority_label: Label,
}

impl Superpoint {
    pub fn point_count(&self) -> usize {
        self.members.len()
    }

    pub fn length(&self) -> f64 {
        self.lambdas[0]
    }

    pub fn surface(&self) -> f64 {
        self.lambdas[0] * self.lambdas[1]
    }

    pub fn volume(&self) -> f64 {
        self.lambdas[0] * self.lambdas[1] * self.lambdas[2]
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Superedge {
    pub source: usize,
    pub target: usize,
    pub features: [f64; SUPEREDGE_DIM],
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct FeatureStats {
    pub mean: [f64; SUPEREDGE_DIM],
    pub std: [f64; SUPEREDGE_DIM],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuperpointGraph {
    pub superpoints: Vec<Superpoint>,
    pub superedges: Vec<Superedge>,
    /// Set once features are normalized; carries the train-set statistics.
    pub feature_stats: Option<FeatureStats>,
}

impl SuperpointGraph {
    pub fn node_count(&self) -> usize {
        self.superpoints.len()
    }

    /// In-edges per node: indices into `superedges` whose target is the node.
    pub fn in_edges(&self) -> Vec<Vec<usize>> {
        let mut lists = vec![Vec::new(); self.superpoints.len()];
        for (e, edge) in self.superedges.iter().enumerate() {
            lists[edge.target].push(e);
        }
        lists
    }
}

/// Shape statistics for every component of the partition.
pub fn build_superpoints(cloud: &PointCloud, partition: &PartitionSolution) -> Vec<Superpoint> {
    let members = partition.members();
    members
        .iter()
        .map(|mem| {
            let pts: Vec<Vec3> = mem.iter().map(|&i| cloud.positions[i]).collect();
            let centroid = pts.iter().fold(Vec3::ZERO, |a, p| a.add(*p)).scale(1.0 / pts.len() as f64);
            let mut lambdas = [0.0; 3];
            if pts.len() >= 2 {
                let eig = eigen_sym3(Sym3::covariance(&pts));
                for k in 0..3 {
                    lambdas[k] = eig.values[k].max(0.0);
                }
            }
            let mut lo = pts[0];
            let mut hi = pts[0];
            for p in &pts {
                lo = Vec3::new(lo.x.min(p.x), lo.y.min(p.y), lo.z.min(p.z));
                hi = Vec3::new(hi.x.max(p.x), hi.y.max(p.y), hi.z.max(p.z));
            }
            let diameter = hi.sub(lo).norm();
            let majority_label = cloud.labels.as_ref().and_then(|labels| {
                let mut votes: HashMap<u32, usize> = HashMap::new();
                for &i in mem {
                    if let Some(k) = labels[i] {
                        *votes.entry(k).or_insert(0) += 1;
                    }
                }
                votes
                    .into_iter()
                    .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
                    .map(|(k, _)| k)
            });
            Superpoint { members: mem.clone(), centroid, lambdas, diameter, majority_label }
        })
        .collect()
}

/// Offsets `p_i - p_j` of Voronoi edges crossing from component S to T,
/// keyed by the directed pair (S, T). Both directions are emitted.
pub fn build_superedge_offsets(
    partition: &PartitionSolution,
    voronoi: &AdjacencyGraph,
    positions: &[Vec3],
) -> HashMap<(usize, usize), Vec<Vec3>> {
    let mut offsets: HashMap<(usize, usize), Vec<Vec3>> = HashMap::new();
    for e in &voronoi.edges {
        let (s, t) = (partition.component_of[e.a] as usize, partition.component_of[e.b] as usize);
        if s == t {
            continue;
        }
        let d = positions[e.a].sub(positions[e.b]);
        offsets.entry((s, t)).or_default().push(d);
        offsets.entry((t, s)).or_default().push(d.scale(-1.0));
    }
    offsets
}

/// The 13 superedge features: mean offset (3), per-coordinate population
/// standard deviation of the offsets (3), centroid offset (3), and the
/// log ratios of length, surface, volume and point count.
pub fn superedge_features(s: &Superpoint, t: &Superpoint, offsets: &[Vec3]) -> Result<[f64; SUPEREDGE_DIM]> {
    if offsets.is_empty() {
        return Err(Error::contract("superedge with empty offset set"));
    }
    let n = offsets.len() as f64;
    let mean = offsets.iter().fold(Vec3::ZERO, |a, d| a.add(*d)).scale(1.0 / n);
    let var = offsets.iter().fold(Vec3::ZERO, |a, d| {
        let e = d.sub(mean);
        a.add(Vec3::new(e.x * e.x, e.y * e.y, e.z * e.z))
    });
    let std = Vec3::new((var.x / n).sqrt(), (var.y / n).sqrt(), (var.z / n).sqrt());
    let centroid_offset = s.centroid.sub(t.centroid);

    let ratio = |a: f64, b: f64| (a.max(RATIO_EPS) / b.max(RATIO_EPS)).ln();
    Ok([
        mean.x,
        mean.y,
        mean.z,
        std.x,
        std.y,
        std.z,
        centroid_offset.x,
        centroid_offset.y,
        centroid_offset.z,
        ratio(s.length(), t.length()),
        ratio(s.surface(), t.surface()),
        ratio(s.volume(), t.volume()),
        ratio(s.point_count() as f64, t.point_count() as f64),
    ])
}

/// Assemble the full superpoint graph for one scene.
pub fn build_spg(
    cloud: &PointCloud,
    partition: &PartitionSolution,
    voronoi: &AdjacencyGraph,
) -> Result<SuperpointGraph> {
    let superpoints = build_superpoints(cloud, partition);
    let offsets = build_superedge_offsets(partition, voronoi, &cloud.positions);
    let mut keys: Vec<(usize, usize)> = offsets.keys().copied().collect();
    keys.sort_unstable();
    let superedges = keys
        .into_iter()
        .map(|(s, t)| {
            let features = superedge_features(&superpoints[s], &superpoints[t], &offsets[&(s, t)])?;
            Ok(Superedge { source: s, target: t, features })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SuperpointGraph { superpoints, superedges, feature_stats: None })
}

/// Per-dimension mean and population standard deviation over all training
/// superedges; the standard deviation is floored at 1e-6.
pub fn fit_feature_stats(graphs: &[&SuperpointGraph]) -> Result<FeatureStats> {
    let mut count = 0usize;
    let mut mean = [0.0; SUPEREDGE_DIM];
    for g in graphs {
        for e in &g.superedges {
            for (m, v) in mean.iter_mut().zip(&e.features) {
                *m += v;
            }
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::validation("no superedges in the training set"));
    }
    for m in &mut mean {
        *m /= count as f64;
    }
    let mut var = [0.0; SUPEREDGE_DIM];
    for g in graphs {
        for e in &g.superedges {
            for k in 0..SUPEREDGE_DIM {
                let d = e.features[k] - mean[k];
                var[k] += d * d;
            }
        }
    }
    let mut std = [0.0; SUPEREDGE_DIM];
    for k in 0..SUPEREDGE_DIM {
        std[k] = (var[k] / count as f64).sqrt().max(1e-6);
    }
    Ok(FeatureStats { mean, std })
}

/// Transform features to zero mean and unit variance with (stored)
/// train-set statistics.
pub fn normalize_features(graph: &mut SuperpointGraph, stats: &FeatureStats) {
    for e in &mut graph.superedges {
        for k in 0..SUPEREDGE_DIM {
            e.features[k] = (e.features[k] - stats.mean[k]) / stats.std[k];
        }
    }
    graph.feature_stats = Some(*stats);
}
