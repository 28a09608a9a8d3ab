//! Stage glue: raw cloud to voxels, features, partition and superpoint
//! graph, as configured.

use crate::config::{AdjacencyKind, PipelineConfig};
use crate::data::{voxelize, PointCloud, VoxelMap};
use crate::error::Result;
use crate::geomfeat::{compute_features, GeomFeatures};
use crate::graphs::{self, AdjacencyGraph, Degeneracy, GraphKind};
use crate::partition::{
    absorb_small_components, cut_pursuit, CutPursuitOpts, NodeFeatures, PartitionProblem,
    PartitionSolution,
};
use crate::spg::{build_spg, SuperpointGraph};

/// Everything the trainer and the evaluator need for one scene.
#[derive(Clone)]
pub struct SceneArtifacts {
    pub cloud: PointCloud,
    pub voxel_map: VoxelMap,
    pub features: GeomFeatures,
    pub partition: PartitionSolution,
    pub voronoi: AdjacencyGraph,
    pub voronoi_degeneracy: Option<Degeneracy>,
    pub spg: SuperpointGraph,
}

impl SceneArtifacts {
    /// The voxel-level partition lifted to the original points through the
    /// voxel map (for point-level evaluation).
    pub fn point_partition(&self) -> PartitionSolution {
        let component_of = self
            .voxel_map
            .voxel_of
            .iter()
            .map(|&v| self.partition.component_of[v])
            .collect();
        PartitionSolution {
            component_of,
            component_values: self.partition.component_values.clone(),
            energy: self.partition.energy,
        }
    }
}

/// Per-point partition feature vector according to the configured flags:
/// linearity, planarity, scattering, verticality, optional elevation,
/// optional color.
pub fn partition_features(
    cloud: &PointCloud,
    features: &GeomFeatures,
    config: &PipelineConfig,
) -> NodeFeatures {
    let with_color = config.partition_features.color && cloud.colors.is_some();
    let dim = 4
        + usize::from(config.partition_features.elevation)
        + if with_color { 3 } else { 0 };
    let mut data = Vec::with_capacity(cloud.len() * dim);
    for i in 0..cloud.len() {
        let f = &features.values[i];
        data.extend_from_slice(&f[0..4]);
        if config.partition_features.elevation {
            data.push(f[4]);
        }
        if with_color {
            let c = cloud.colors.as_ref().unwrap()[i];
            data.extend_from_slice(&[c.x, c.y, c.z]);
        }
    }
    NodeFeatures::new(dim, data)
}

/// k-nearest-neighbor lists padded with the point itself, as the feature
/// neighborhoods expect.
pub fn knn_lists_with_self(cloud: &PointCloud, k: usize) -> Result<Vec<Vec<usize>>> {
    let lists = graphs::knn_lists(cloud, k)?;
    Ok(lists
        .into_iter()
        .enumerate()
        .map(|(i, mut l)| {
            l.insert(0, i);
            l
        })
        .collect())
}

/// Run voxelization, features, partition, adjacency and SPG construction
/// for one scene. Superedge features come out raw (unnormalized).
pub fn build_scene(cloud: &PointCloud, config: &PipelineConfig) -> Result<SceneArtifacts> {
    let voxel_map = voxelize(cloud, config.voxel_size)?;
    let vcloud = voxel_map.voxel_cloud.clone();

    let lists = knn_lists_with_self(&vcloud, config.knn)?;
    let features = compute_features(&vcloud, &lists)?;

    let node_features = partition_features(&vcloud, &features, config);
    let mut knn_graph = {
        let raw: Vec<Vec<usize>> = lists.iter().map(|l| l[1..].to_vec()).collect();
        graphs::knn_graph_from_lists(&vcloud, &raw)
    };
    graphs::edge_weights(&mut knn_graph);
    let problem = PartitionProblem { graph: knn_graph, features: node_features, mu: config.mu };
    let mut partition = cut_pursuit(&problem, &CutPursuitOpts::default());
    if config.min_superpoint > 1 {
        partition = absorb_small_components(&problem, &partition, config.min_superpoint);
    }

    let (voronoi, degeneracy) = match config.adjacency {
        AdjacencyKind::Delaunay => {
            let (g, d) = graphs::voronoi_graph(&vcloud, config.max_superedge_len)?;
            (g, Some(d))
        }
        AdjacencyKind::SymKnn => {
            let mut g = graphs::knn_graph(&vcloud, config.sym_knn_k)?;
            if let Some(cap) = config.max_superedge_len {
                g.edges.retain(|e| e.length <= cap);
            }
            g.kind = GraphKind::Voronoi;
            (g, None)
        }
    };

    let spg = build_spg(&vcloud, &partition, &voronoi)?;
    Ok(SceneArtifacts {
        cloud: cloud.clone(),
        voxel_map,
        features,
        partition,
        voronoi,
        voronoi_degeneracy: degeneracy,
        spg,
    })
}
