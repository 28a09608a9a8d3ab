//! Point-cloud ingestion, voxelization, label projection back to the
//! original points, and synthetic scene generation.

mod io;
mod synth;

pub use io::{load_cloud, save_cloud, CloudFormat};
pub use synth::{synth_scene, SceneSpec, CLASS_NAMES, NUM_CLASSES};

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::linalg::Vec3;

/// A point label: class index in `0..class_count`, or `None` for unlabeled.
pub type Label = Option<u32>;

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub positions: Vec<Vec3>,
    /// Per-point color in [0,1], when present.
    pub colors: Option<Vec<Vec3>>,
    pub labels: Option<Vec<Label>>,
    pub class_count: usize,
}

impl PointCloud {
    pub fn new(positions: Vec<Vec3>) -> Self {
        PointCloud { positions, colors: None, labels: None, class_count: 0 }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.positions.is_empty() {
            return Err(Error::validation("point cloud is empty"));
        }
        if let Some(c) = &self.colors {
            if c.len() != self.positions.len() {
                return Err(Error::validation(format!(
                    "color count {} != point count {}",
                    c.len(),
                    self.positions.len()
                )));
            }
            for (i, col) in c.iter().enumerate() {
                if !col.is_finite()
                    || col.x < 0.0 || col.x > 1.0
                    || col.y < 0.0 || col.y > 1.0
                    || col.z < 0.0 || col.z > 1.0
                {
                    return Err(Error::validation(format!("color out of [0,1] at point {i}")));
                }
            }
        }
        if let Some(l) = &self.labels {
            if l.len() != self.positions.len() {
                return Err(Error::validation(format!(
                    "label count {} != point count {}",
                    l.len(),
                    self.positions.len()
                )));
            }
            for (i, lab) in l.iter().enumerate() {
                if let Some(k) = lab {
                    if self.class_count > 0 && *k as usize >= self.class_count {
                        return Err(Error::validation(format!(
                            "label {k} at point {i} exceeds class count {}",
                            self.class_count
                        )));
                    }
                }
            }
        }
        for (i, p) in self.positions.iter().enumerate() {
            if !p.is_finite() {
                return Err(Error::validation(format!("non-finite coordinate at point {i}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct VoxelMap {
    pub voxel_size: f64,
    /// For each original point, the index of its voxel in `voxel_cloud`.
    pub voxel_of: Vec<usize>,
    pub voxel_cloud: PointCloud,
}

/// Bin points on the regular grid `floor(p / voxel_size)`. Each occupied
/// bin becomes one point at the mean position (and mean color) of its
/// members; the voxel label is the majority label, ties going to the
/// smallest class index.
pub fn voxelize(cloud: &PointCloud, voxel_size: f64) -> Result<VoxelMap> {
    if !(voxel_size > 0.0) {
        return Err(Error::parameter(format!("voxel_size must be > 0, got {voxel_size}")));
    }
    cloud.validate()?;

    let key_of = |p: &Vec3| -> (i64, i64, i64) {
        (
            (p.x / voxel_size).floor() as i64,
            (p.y / voxel_size).floor() as i64,
            (p.z / voxel_size).floor() as i64,
        )
    };

    // First pass: assign each occupied bin a stable index, ordered by key.
    let mut keys: Vec<(i64, i64, i64)> = cloud.positions.iter().map(key_of).collect();
    let mut sorted = keys.clone();
    sorted.sort_unstable();
    sorted.dedup();
    let index_of: HashMap<(i64, i64, i64), usize> =
        sorted.iter().enumerate().map(|(i, k)| (*k, i)).collect();
    let nv = sorted.len();

    let mut voxel_of = Vec::with_capacity(cloud.len());
    let mut pos_sum = vec![Vec3::ZERO; nv];
    let mut col_sum = vec![Vec3::ZERO; nv];
    let mut count = vec![0usize; nv];
    let mut votes: Vec<HashMap<u32, usize>> = vec![HashMap::new(); nv];

    for (i, key) in keys.drain(..).enumerate() {
        let v = index_of[&key];
        voxel_of.push(v);
        pos_sum[v] = pos_sum[v].add(cloud.positions[i]);
        if let Some(c) = &cloud.colors {
            col_sum[v] = col_sum[v].add(c[i]);
        }
        count[v] += 1;
        if let Some(l) = &cloud.labels {
            if let Some(k) = l[i] {
                *votes[v].entry(k).or_insert(0) += 1;
            }
        }
    }

    let positions: Vec<Vec3> = pos_sum
        .iter()
        .zip(&count)
        .map(|(s, &n)| s.scale(1.0 / n as f64))
        .collect();
    let colors = cloud.colors.as_ref().map(|_| {
        col_sum
            .iter()
            .zip(&count)
            .map(|(s, &n)| s.scale(1.0 / n as f64))
            .collect()
    });
    let labels = cloud.labels.as_ref().map(|_| {
        votes
            .iter()
            .map(|v| {
                v.iter()
                    // majority vote, ties to the smallest class index
                    .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                    .map(|(k, _)| *k)
            })
            .collect()
    });

    let voxel_cloud = PointCloud {
        positions,
        colors,
        labels,
        class_count: cloud.class_count,
    };
    Ok(VoxelMap { voxel_size, voxel_of, voxel_cloud })
}

/// Project per-voxel labels back onto the original points.
pub fn unvoxelize_labels(map: &VoxelMap, voxel_labels: &[u32]) -> Result<Vec<u32>> {
    if voxel_labels.len() != map.voxel_cloud.len() {
        return Err(Error::contract(format!(
            "voxel_labels length {} != voxel count {}",
            voxel_labels.len(),
            map.voxel_cloud.len()
        )));
    }
    Ok(map.voxel_of.iter().map(|&v| voxel_labels[v]).collect())
}
