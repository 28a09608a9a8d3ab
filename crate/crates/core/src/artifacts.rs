//! On-disk stage artifacts. Every artifact embeds a format version and
//! the hash of the producing configuration; consumers refuse mismatched
//! versions.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geomfeat::{GeomFeatures, GEOM_DIM};
use crate::graphs::AdjacencyGraph;
use crate::models::{ModelConfig, SpgModel};
use crate::nncore::Tensor;
use crate::partition::{NodeFeatures, PartitionSolution};
use crate::spg::{FeatureStats, Superedge, SuperpointGraph, SUPEREDGE_DIM};

pub const VOXEL_MAP_VERSION: u32 = 1;
pub const FEATURES_VERSION: u32 = 1;
pub const PARTITION_VERSION: u32 = 1;
pub const SPG_VERSION: u32 = 1;
pub const CHECKPOINT_VERSION: u32 = 1;

const CHECKPOINT_MAGIC: &[u8; 4] = b"SPGC";

fn check_version(what: &str, expected: u32, found: u32) -> Result<()> {
    if expected != found {
        return Err(Error::VersionMismatch { expected, found });
    }
    let _ = what;
    Ok(())
}

// ---------------------------------------------------------------------
// voxel map
// ---------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct VoxelMapFile {
    format_version: u32,
    config_hash: String,
    voxel_size: f64,
    voxel_of: Vec<usize>,
}

/// The voxel assignment; the voxel cloud itself travels as a cloud file.
pub fn save_voxel_map(map_path: &Path, voxel_size: f64, voxel_of: &[usize], config_hash: u64) -> Result<()> {
    let file = VoxelMapFile {
        format_version: VOXEL_MAP_VERSION,
        config_hash: format!("{config_hash:016x}"),
        voxel_size,
        voxel_of: voxel_of.to_vec(),
    };
    let w = BufWriter::new(File::create(map_path)?);
    serde_json::to_writer(w, &file)?;
    Ok(())
}

pub fn load_voxel_map(map_path: &Path) -> Result<(f64, Vec<usize>)> {
    let r = BufReader::new(File::open(map_path)?);
    let file: VoxelMapFile = serde_json::from_reader(r)?;
    check_version("voxel map", VOXEL_MAP_VERSION, file.format_version)?;
    Ok((file.voxel_size, file.voxel_of))
}

// ---------------------------------------------------------------------
// feature dump: `idx lin plan scat vert elev`
// ---------------------------------------------------------------------

pub fn save_features(path: &Path, features: &GeomFeatures, config_hash: u64) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# features format_version {FEATURES_VERSION} config_hash {config_hash:016x}")?;
    writeln!(w, "idx lin plan scat vert elev")?;
    for (i, f) in features.values.iter().enumerate() {
        writeln!(w, "{} {} {} {} {} {}", i, f[0], f[1], f[2], f[3], f[4])?;
    }
    Ok(())
}

pub fn load_features(path: &Path) -> Result<GeomFeatures> {
    let r = BufReader::new(File::open(path)?);
    let mut values = Vec::new();
    for (idx, line) in r.lines().enumerate() {
        let line = line?;
        let line_no = idx + 1;
        if line.starts_with('#') {
            if line_no == 1 {
                let version: u32 = line
                    .split_whitespace()
                    .nth(3)
                    .and_then(|v| v.parse().ok())
                    .ok_or(Error::Parse { line: 1, message: "missing format version".into() })?;
                check_version("features", FEATURES_VERSION, version)?;
            }
            continue;
        }
        if line.trim().is_empty() || line.starts_with("idx") {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != GEOM_DIM + 1 {
            return Err(Error::Parse { line: line_no, message: "expected 6 columns".into() });
        }
        let mut row = [0.0; GEOM_DIM];
        for (k, v) in row.iter_mut().enumerate() {
            *v = fields[k + 1].parse().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("bad value {:?}", fields[k + 1]),
            })?;
        }
        values.push(row);
    }
    Ok(GeomFeatures { values, degenerate: Vec::new() })
}

// ---------------------------------------------------------------------
// partition dump: `point_index component_id`
// ---------------------------------------------------------------------

pub fn save_partition(path: &Path, solution: &PartitionSolution, config_hash: u64) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# partition format_version {PARTITION_VERSION} config_hash {config_hash:016x}")?;
    writeln!(w, "# components {} energy {}", solution.component_count(), solution.energy)?;
    for (i, &c) in solution.component_of.iter().enumerate() {
        writeln!(w, "{i} {c}")?;
    }
    Ok(())
}

pub fn load_partition(path: &Path, features: &NodeFeatures) -> Result<PartitionSolution> {
    let r = BufReader::new(File::open(path)?);
    let mut component_of = Vec::new();
    let mut energy = 0.0;
    for (idx, line) in r.lines().enumerate() {
        let line = line?;
        let line_no = idx + 1;
        if line.starts_with('#') {
            if line_no == 1 {
                let version: u32 = line
                    .split_whitespace()
                    .nth(3)
                    .and_then(|v| v.parse().ok())
                    .ok_or(Error::Parse { line: 1, message: "missing format version".into() })?;
                check_version("partition", PARTITION_VERSION, version)?;
            }
            if let Some(e) = line.strip_prefix("# components") {
                if let Some(ev) = e.split_whitespace().nth(2) {
                    energy = ev.parse().unwrap_or(0.0);
                }
            }
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(Error::Parse { line: line_no, message: "expected `idx component`".into() });
        }
        let c: u32 = fields[1].parse().map_err(|_| Error::Parse {
            line: line_no,
            message: format!("bad component {:?}", fields[1]),
        })?;
        component_of.push(c);
    }
    let count = component_of.iter().map(|&c| c as usize + 1).max().unwrap_or(0);
    let dim = features.dim;
    let mut sums = vec![0.0; count * dim];
    let mut sizes = vec![0usize; count];
    for (i, &c) in component_of.iter().enumerate() {
        for (a, v) in sums[c as usize * dim..(c as usize + 1) * dim].iter_mut().zip(features.row(i)) {
            *a += v;
        }
        sizes[c as usize] += 1;
    }
    for c in 0..count {
        for v in &mut sums[c * dim..(c + 1) * dim] {
            *v /= sizes[c].max(1) as f64;
        }
    }
    Ok(PartitionSolution {
        component_of,
        component_values: NodeFeatures::new(dim, sums),
        energy,
    })
}

// ---------------------------------------------------------------------
// graph dump: `i j length weight`
// ---------------------------------------------------------------------

pub fn save_graph(path: &Path, graph: &AdjacencyGraph, config_hash: u64) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# graph format_version 1 config_hash {config_hash:016x}")?;
    for e in &graph.edges {
        writeln!(w, "{} {} {} {}", e.a, e.b, e.length, e.weight)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------
// superpoint graph (JSON)
// ---------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct SpgSuperpointRecord {
    count: usize,
    centroid: [f64; 3],
    lambdas: [f64; 3],
    diameter: f64,
    label: Option<u32>,
}

#[derive(Serialize, Deserialize)]
struct SpgSuperedgeRecord {
    src: usize,
    dst: usize,
    features: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct SpgStatsRecord {
    mean: Vec<f64>,
    std: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct SpgFile {
    format_version: u32,
    config_hash: String,
    superpoints: Vec<SpgSuperpointRecord>,
    superedges: Vec<SpgSuperedgeRecord>,
    feature_stats: Option<SpgStatsRecord>,
    /// member point indices per superpoint (needed to rebuild samples)
    members: Vec<Vec<usize>>,
}

pub fn save_spg(path: &Path, spg: &SuperpointGraph, config_hash: u64) -> Result<()> {
    let file = SpgFile {
        format_version: SPG_VERSION,
        config_hash: format!("{config_hash:016x}"),
        superpoints: spg
            .superpoints
            .iter()
            .map(|s| SpgSuperpointRecord {
                count: s.point_count(),
                centroid: s.centroid.to_array(),
                lambdas: s.lambdas,
                diameter: s.diameter,
                label: s.majority_label,
            })
            .collect(),
        superedges: spg
            .superedges
            .iter()
            .map(|e| SpgSuperedgeRecord {
                src: e.source,
                dst: e.target,
                features: e.features.to_vec(),
            })
            .collect(),
        feature_stats: spg.feature_stats.map(|s| SpgStatsRecord {
            mean: s.mean.to_vec(),
            std: s.std.to_vec(),
        }),
        members: spg.superpoints.iter().map(|s| s.members.clone()).collect(),
    };
    let w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(w, &file)?;
    Ok(())
}

pub fn load_spg(path: &Path) -> Result<SuperpointGraph> {
    let r = BufReader::new(File::open(path)?);
    let file: SpgFile = serde_json::from_reader(r)?;
    check_version("spg", SPG_VERSION, file.format_version)?;
    if file.members.len() != file.superpoints.len() {
        return Err(Error::validation("spg members and superpoints disagree"));
    }
    let superpoints = file
        .superpoints
        .iter()
        .zip(&file.members)
        .map(|(s, members)| crate::spg::Superpoint {
            members: members.clone(),
            centroid: crate::linalg::Vec3::from_array(s.centroid),
            lambdas: s.lambdas,
            diameter: s.diameter,
            majority_label: s.label,
        })
        .collect();
    let superedges = file
        .superedges
        .iter()
        .map(|e| {
            if e.features.len() != SUPEREDGE_DIM {
                return Err(Error::validation(format!(
                    "superedge feature width {} != {SUPEREDGE_DIM}",
                    e.features.len()
                )));
            }
            let mut features = [0.0; SUPEREDGE_DIM];
            features.copy_from_slice(&e.features);
            Ok(Superedge { source: e.src, target: e.dst, features })
        })
        .collect::<Result<Vec<_>>>()?;
    let feature_stats = match file.feature_stats {
        Some(s) => {
            let mut stats = FeatureStats { mean: [0.0; SUPEREDGE_DIM], std: [1.0; SUPEREDGE_DIM] };
            stats.mean.copy_from_slice(&s.mean);
            stats.std.copy_from_slice(&s.std);
            Some(stats)
        }
        None => None,
    };
    Ok(SuperpointGraph { superpoints, superedges, feature_stats })
}

// ---------------------------------------------------------------------
// checkpoint: JSON manifest + flat little-endian f64 payload
// ---------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct CheckpointParam {
    name: String,
    rows: usize,
    cols: usize,
    /// element offset into the payload
    offset: usize,
    trainable: bool,
}

#[derive(Serialize, Deserialize)]
struct CheckpointManifest {
    format_version: u32,
    config_hash: String,
    model: ModelConfig,
    params: Vec<CheckpointParam>,
}

pub fn save_checkpoint(path: &Path, model: &SpgModel, config_hash: u64) -> Result<()> {
    let mut params = Vec::new();
    let mut offset = 0usize;
    for p in model.state.iter() {
        params.push(CheckpointParam {
            name: p.name.clone(),
            rows: p.value.rows,
            cols: p.value.cols,
            offset,
            trainable: p.trainable,
        });
        offset += p.value.len();
    }
    let manifest = CheckpointManifest {
        format_version: CHECKPOINT_VERSION,
        config_hash: format!("{config_hash:016x}"),
        model: model.config.clone(),
        params,
    };
    let manifest_bytes = serde_json::to_vec(&manifest)?;

    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(manifest_bytes.len() as u64).to_le_bytes())?;
    w.write_all(&manifest_bytes)?;
    for p in model.state.iter() {
        for v in &p.value.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<SpgModel> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::validation("not a checkpoint file"));
    }
    let mut buf4 = [0u8; 4];
    r.read_exact(&mut buf4)?;
    check_version("checkpoint", CHECKPOINT_VERSION, u32::from_le_bytes(buf4))?;
    let mut buf8 = [0u8; 8];
    r.read_exact(&mut buf8)?;
    let manifest_len = u64::from_le_bytes(buf8) as usize;
    let mut manifest_bytes = vec![0u8; manifest_len];
    r.read_exact(&mut manifest_bytes)?;
    let manifest: CheckpointManifest = serde_json::from_slice(&manifest_bytes)?;

    let total: usize = manifest.params.iter().map(|p| p.rows * p.cols).sum();
    let mut payload = vec![0.0f64; total];
    for v in payload.iter_mut() {
        r.read_exact(&mut buf8)?;
        *v = f64::from_le_bytes(buf8);
    }

    // rebuild the architecture, then restore values by name
    let mut model = SpgModel::new(manifest.model.clone(), 0);
    // stats slots exist on trained models
    if model.state.id_of("norm.edge_mean").is_none() {
        model.state.add("norm.edge_mean", Tensor::zeros(1, SUPEREDGE_DIM), false);
        model.state.add(
            "norm.edge_std",
            Tensor::from_vec(1, SUPEREDGE_DIM, vec![1.0; SUPEREDGE_DIM]),
            false,
        );
    }
    for p in &manifest.params {
        let id = model
            .state
            .id_of(&p.name)
            .ok_or_else(|| Error::validation(format!("unknown checkpoint parameter {}", p.name)))?;
        let target = &mut model.state.get_mut(id).value;
        if target.rows != p.rows || target.cols != p.cols {
            return Err(Error::validation(format!(
                "checkpoint shape mismatch for {}: {}x{} vs {}x{}",
                p.name, p.rows, p.cols, target.rows, target.cols
            )));
        }
        target
            .data
            .copy_from_slice(&payload[p.offset..p.offset + p.rows * p.cols]);
    }
    Ok(model)
}

/// Loss curve: `epoch loss lr` CSV.
pub fn save_loss_curve(path: &Path, curve: &[crate::train::LossPoint]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "epoch,loss,lr")?;
    for p in curve {
        writeln!(w, "{},{},{}", p.epoch, p.loss, p.lr)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Vec3;
    use crate::models::{AblationVariant, ModelConfig};
    use crate::rng::Rng;

    fn tmpdir() -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("spg-artifacts-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn checkpoint_roundtrip_is_bitwise() {
        let dir = tmpdir();
        let path = dir.join("model.ckpt");
        let mut config = ModelConfig::toy(4);
        config.ablation = AblationVariant::Best;
        let mut model = SpgModel::new(config, 42);
        // trained models carry the normalization stats
        model.state.add("norm.edge_mean", Tensor::from_vec(1, 13, (0..13).map(|v| v as f64).collect()), false);
        model.state.add("norm.edge_std", Tensor::from_vec(1, 13, vec![2.0; 13]), false);
        save_checkpoint(&path, &model, 0xabcd).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.state.len(), model.state.len());
        for (a, b) in model.state.iter().zip(back.state.iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.value.data, b.value.data, "param {}", a.name);
            assert_eq!(a.trainable, b.trainable);
        }
        assert_eq!(back.config.ablation, AblationVariant::Best);
    }

    #[test]
    fn corrupt_magic_is_rejected() {
        let dir = tmpdir();
        let path = dir.join("bad.ckpt");
        std::fs::write(&path, b"NOPE....").unwrap();
        assert!(load_checkpoint(&path).is_err());
    }

    #[test]
    fn spg_roundtrip() {
        let dir = tmpdir();
        let path = dir.join("scene.spg.json");
        let mut rng = Rng::seed_from(3);
        let sp = |i: usize| crate::spg::Superpoint {
            members: vec![i, i + 10],
            centroid: Vec3::new(i as f64, 0.5, -1.0),
            lambdas: [2.0, 1.0, 0.5],
            diameter: 1.5,
            majority_label: Some(i as u32),
        };
        let mut features = [0.0; 13];
        for f in &mut features {
            *f = rng.uniform(-1.0, 1.0);
        }
        let spg = SuperpointGraph {
            superpoints: vec![sp(0), sp(1)],
            superedges: vec![
                Superedge { source: 0, target: 1, features },
                Superedge { source: 1, target: 0, features },
            ],
            feature_stats: Some(FeatureStats { mean: [0.5; 13], std: [2.0; 13] }),
        };
        save_spg(&path, &spg, 7).unwrap();
        let back = load_spg(&path).unwrap();
        assert_eq!(back.superpoints.len(), 2);
        assert_eq!(back.superpoints[1].members, vec![1, 11]);
        assert_eq!(back.superedges[0].features, features);
        assert_eq!(back.feature_stats.unwrap().std, [2.0; 13]);
    }

    #[test]
    fn features_roundtrip_exact() {
        let dir = tmpdir();
        let path = dir.join("features.csv");
        let features = GeomFeatures {
            values: vec![[0.1, 0.2, 0.7, 1.0 / 3.0, 0.99999999], [1.0, 0.0, 0.0, 0.5772156649, 0.0]],
            degenerate: vec![],
        };
        save_features(&path, &features, 1).unwrap();
        let back = load_features(&path).unwrap();
        assert_eq!(back.values, features.values);
    }

    #[test]
    fn partition_roundtrip() {
        let dir = tmpdir();
        let path = dir.join("partition.txt");
        let solution = PartitionSolution {
            component_of: vec![0, 0, 1, 2, 1],
            component_values: NodeFeatures::new(1, vec![0.5, 1.0, 2.0]),
            energy: 1.25,
        };
        save_partition(&path, &solution, 2).unwrap();
        let features = NodeFeatures::new(1, vec![0.5, 0.5, 1.0, 2.0, 1.0]);
        let back = load_partition(&path, &features).unwrap();
        assert_eq!(back.component_of, solution.component_of);
        assert_eq!(back.component_values.row(0), &[0.5]);
        assert!((back.energy - 1.25).abs() < 1e-12);
    }

    #[test]
    fn voxel_map_roundtrip_and_version_check() {
        let dir = tmpdir();
        let path = dir.join("voxels.map.json");
        save_voxel_map(&path, 0.05, &[0, 0, 1, 2], 99).unwrap();
        let (size, map) = load_voxel_map(&path).unwrap();
        assert_eq!(size, 0.05);
        assert_eq!(map, vec![0, 0, 1, 2]);
        // corrupt the version
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, text.replace("\"format_version\":1", "\"format_version\":9")).unwrap();
        assert!(matches!(load_voxel_map(&path), Err(Error::VersionMismatch { .. })));
    }
}
