//! Pipeline configuration: one flat key = value document binding every
//! stage, hashed into artifacts for provenance.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::models::{AblationVariant, EccVariant};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdjacencyKind {
    Delaunay,
    /// Symmetrized k-nearest-neighbor fallback for very large inputs.
    SymKnn,
}

/// Which per-node features drive the geometric partition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PartitionFeatures {
    pub elevation: bool,
    pub color: bool,
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub voxel_size: f64,
    pub knn: usize,
    pub mu: f64,
    pub adjacency: AdjacencyKind,
    pub sym_knn_k: usize,
    pub max_superedge_len: Option<f64>,
    pub partition_features: PartitionFeatures,
    /// Components smaller than this are folded into their strongest
    /// neighbor after the partition (0 disables).
    pub min_superpoint: usize,
    pub n_p: usize,
    pub n_minp: usize,
    pub d_z: usize,
    pub t_iters: usize,
    pub ecc: EccVariant,
    pub ablation: AblationVariant,
    // training
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub decay_epochs: Vec<usize>,
    pub lr_decay: f64,
    pub clip: f64,
    pub max_superpoints: usize,
    pub neighborhood_order: usize,
    pub jitter_sigma: f64,
    pub jitter_clip: f64,
    // inference
    pub runs: usize,
    // execution
    pub seed: u64,
    pub threads: usize,
    pub deterministic: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            voxel_size: 0.03,
            knn: 10,
            mu: 0.03,
            adjacency: AdjacencyKind::Delaunay,
            sym_knn_k: 5,
            max_superedge_len: None,
            partition_features: PartitionFeatures { elevation: true, color: false },
            min_superpoint: 10,
            n_p: 128,
            n_minp: 40,
            d_z: 32,
            t_iters: 10,
            ecc: EccVariant::Vv,
            ablation: AblationVariant::Best,
            lr: 0.01,
            batch: 2,
            epochs: 250,
            decay_epochs: vec![200, 230],
            lr_decay: 0.7,
            clip: 1.0,
            max_superpoints: 512,
            neighborhood_order: 3,
            jitter_sigma: 0.01,
            jitter_clip: 0.05,
            runs: 10,
            seed: 1,
            threads: 0,
            deterministic: false,
        }
    }
}

impl PipelineConfig {
    pub fn model_config(&self, class_count: usize) -> crate::models::ModelConfig {
        let mut mc = crate::models::ModelConfig::standard(class_count);
        mc.d_z = self.d_z;
        mc.t_iters = self.t_iters;
        mc.n_p = self.n_p;
        mc.n_minp = self.n_minp;
        mc.ecc = self.ecc;
        mc.ablation = self.ablation;
        mc
    }

    /// Canonical flat text form; also the hashing base.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "voxel_size = {}", self.voxel_size);
        let _ = writeln!(s, "knn = {}", self.knn);
        let _ = writeln!(s, "mu = {}", self.mu);
        let _ = writeln!(
            s,
            "adjacency = {}",
            match self.adjacency {
                AdjacencyKind::Delaunay => "delaunay",
                AdjacencyKind::SymKnn => "sym-knn",
            }
        );
        let _ = writeln!(s, "sym_knn_k = {}", self.sym_knn_k);
        let _ = writeln!(
            s,
            "max_superedge_len = {}",
            self.max_superedge_len.map_or("inf".to_string(), |v| v.to_string())
        );
        let _ = writeln!(
            s,
            "partition_features = {}",
            match (self.partition_features.elevation, self.partition_features.color) {
                (true, true) => "geom+elev+rgb",
                (true, false) => "geom+elev",
                (false, true) => "geom+rgb",
                (false, false) => "geom",
            }
        );
        let _ = writeln!(s, "min_superpoint = {}", self.min_superpoint);
        let _ = writeln!(s, "n_p = {}", self.n_p);
        let _ = writeln!(s, "n_minp = {}", self.n_minp);
        let _ = writeln!(s, "d_z = {}", self.d_z);
        let _ = writeln!(s, "t_iters = {}", self.t_iters);
        let _ = writeln!(s, "ecc = {}", if self.ecc == EccVariant::Vv { "vv" } else { "mv" });
        let _ = writeln!(s, "ablation = {}", self.ablation.name());
        let _ = writeln!(s, "lr = {}", self.lr);
        let _ = writeln!(s, "batch = {}", self.batch);
        let _ = writeln!(s, "epochs = {}", self.epochs);
        let decay: Vec<String> = self.decay_epochs.iter().map(|e| e.to_string()).collect();
        let _ = writeln!(s, "decay_epochs = {}", decay.join(","));
        let _ = writeln!(s, "lr_decay = {}", self.lr_decay);
        let _ = writeln!(s, "clip = {}", self.clip);
        let _ = writeln!(s, "max_superpoints = {}", self.max_superpoints);
        let _ = writeln!(s, "neighborhood_order = {}", self.neighborhood_order);
        let _ = writeln!(s, "jitter_sigma = {}", self.jitter_sigma);
        let _ = writeln!(s, "jitter_clip = {}", self.jitter_clip);
        let _ = writeln!(s, "runs = {}", self.runs);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "threads = {}", self.threads);
        let _ = writeln!(s, "deterministic = {}", self.deterministic);
        s
    }

    pub fn apply_line(&mut self, line: &str) -> Result<()> {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            return Ok(());
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::validation(format!("bad config line {line:?}")))?;
        let key = key.trim();
        let value = value.trim();
        let bad = || Error::validation(format!("bad value {value:?} for config key {key}"));
        match key {
            "voxel_size" => self.voxel_size = value.parse().map_err(|_| bad())?,
            "knn" => self.knn = value.parse().map_err(|_| bad())?,
            "mu" => self.mu = value.parse().map_err(|_| bad())?,
            "adjacency" => {
                self.adjacency = match value {
                    "delaunay" => AdjacencyKind::Delaunay,
                    "sym-knn" => AdjacencyKind::SymKnn,
                    _ => return Err(bad()),
                }
            }
            "sym_knn_k" => self.sym_knn_k = value.parse().map_err(|_| bad())?,
            "max_superedge_len" => {
                self.max_superedge_len = if value == "inf" {
                    None
                } else {
                    Some(value.parse().map_err(|_| bad())?)
                }
            }
            "partition_features" => {
                self.partition_features = match value {
                    "geom" => PartitionFeatures { elevation: false, color: false },
                    "geom+elev" => PartitionFeatures { elevation: true, color: false },
                    "geom+rgb" => PartitionFeatures { elevation: false, color: true },
                    "geom+elev+rgb" => PartitionFeatures { elevation: true, color: true },
                    _ => return Err(bad()),
                }
            }
            "min_superpoint" => self.min_superpoint = value.parse().map_err(|_| bad())?,
            "n_p" => self.n_p = value.parse().map_err(|_| bad())?,
            "n_minp" => self.n_minp = value.parse().map_err(|_| bad())?,
            "d_z" => self.d_z = value.parse().map_err(|_| bad())?,
            "t_iters" => self.t_iters = value.parse().map_err(|_| bad())?,
            "ecc" => {
                self.ecc = match value {
                    "vv" => EccVariant::Vv,
                    "mv" => EccVariant::Mv,
                    _ => return Err(bad()),
                }
            }
            "ablation" => self.ablation = AblationVariant::parse(value).ok_or_else(bad)?,
            "lr" => self.lr = value.parse().map_err(|_| bad())?,
            "batch" => self.batch = value.parse().map_err(|_| bad())?,
            "epochs" => self.epochs = value.parse().map_err(|_| bad())?,
            "decay_epochs" => {
                self.decay_epochs = if value.is_empty() {
                    Vec::new()
                } else {
                    value
                        .split(',')
                        .map(|v| v.trim().parse().map_err(|_| bad()))
                        .collect::<Result<Vec<usize>>>()?
                }
            }
            "lr_decay" => self.lr_decay = value.parse().map_err(|_| bad())?,
            "clip" => self.clip = value.parse().map_err(|_| bad())?,
            "max_superpoints" => self.max_superpoints = value.parse().map_err(|_| bad())?,
            "neighborhood_order" => self.neighborhood_order = value.parse().map_err(|_| bad())?,
            "jitter_sigma" => self.jitter_sigma = value.parse().map_err(|_| bad())?,
            "jitter_clip" => self.jitter_clip = value.parse().map_err(|_| bad())?,
            "runs" => self.runs = value.parse().map_err(|_| bad())?,
            "seed" => self.seed = value.parse().map_err(|_| bad())?,
            "threads" => self.threads = value.parse().map_err(|_| bad())?,
            "deterministic" => self.deterministic = value.parse().map_err(|_| bad())?,
            _ => return Err(Error::validation(format!("unknown config key {key}"))),
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut config = PipelineConfig::default();
        for line in text.lines() {
            config.apply_line(line)?;
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    /// FNV-1a hash of the canonical text, embedded into artifacts.
    pub fn hash(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for b in self.to_text().bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_roundtrip_preserves_config() {
        let mut config = PipelineConfig::default();
        config.mu = 0.8;
        config.adjacency = AdjacencyKind::SymKnn;
        config.max_superedge_len = Some(2.5);
        config.ablation = AblationVariant::NoEdgeFeat;
        config.decay_epochs = vec![10, 20, 30];
        let text = config.to_text();
        let back = PipelineConfig::from_text(&text).unwrap();
        assert_eq!(back.to_text(), text);
        assert_eq!(back.hash(), config.hash());
    }

    #[test]
    fn defaults_follow_the_reference_settings() {
        let c = PipelineConfig::default();
        assert_eq!(c.knn, 10);
        assert_eq!(c.n_p, 128);
        assert_eq!(c.n_minp, 40);
        assert_eq!(c.d_z, 32);
        assert_eq!(c.t_iters, 10);
        assert_eq!(c.lr, 0.01);
        assert_eq!(c.batch, 2);
        assert_eq!(c.lr_decay, 0.7);
        assert_eq!(c.clip, 1.0);
        assert_eq!(c.max_superpoints, 512);
        assert_eq!(c.neighborhood_order, 3);
        assert_eq!(c.jitter_sigma, 0.01);
        assert_eq!(c.jitter_clip, 0.05);
        assert_eq!(c.runs, 10);
    }

    #[test]
    fn hash_changes_with_values() {
        let a = PipelineConfig::default();
        let mut b = a.clone();
        b.mu = 0.8;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn unknown_key_is_rejected() {
        assert!(PipelineConfig::from_text("nope = 3").is_err());
    }

    #[test]
    fn comments_and_blanks_are_skipped() {
        let c = PipelineConfig::from_text("# comment\n\nmu = 0.5\n").unwrap();
        assert_eq!(c.mu, 0.5);
    }
}
