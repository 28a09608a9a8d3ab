//! Superpoint-graph pipeline for point cloud semantic segmentation.
//!
//! The pipeline runs in stages: voxelization of the raw cloud, per-point
//! geometric features, an l0 graph partition into superpoints, construction
//! of an attributed superpoint graph, PointNet-style superpoint embedding,
//! and contextual classification by a GRU with edge-conditioned convolutions.

pub mod data;
pub mod artifacts;
pub mod config;
pub mod error;
pub mod eval;
pub mod geomfeat;
pub mod graphs;
pub mod linalg;
pub mod models;
pub mod nncore;
pub mod partition;
pub mod pipeline;
pub mod rng;
pub mod spg;
pub mod train;

pub use error::{Error, Result};
