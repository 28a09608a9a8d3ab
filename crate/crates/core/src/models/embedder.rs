//! PointNet-style superpoint embedding: subsampled points are rescaled to
//! the unit sphere, XY-aligned by a spatial transformer regressing a
//! residual 2x2 matrix, passed through shared MLPs, max-pooled, joined
//! with the metric diameter and projected to the embedding.

use super::{LayerSpec, Mlp, ModelConfig};
use crate::data::PointCloud;
use crate::geomfeat::{GeomFeatures, GEOM_DIM};
use crate::nncore::{ModelState, NodeId, PoolMode, Tape, Tensor};
use crate::rng::Rng;
use crate::spg::Superpoint;

/// One superpoint's network input: `n_p` points with normalized position,
/// color and geometric features, plus the original metric diameter that
/// joins after pooling.
#[derive(Debug, Clone)]
pub struct SuperpointSample {
    /// n_p rows by POINT_INPUT_DIM columns.
    pub points: Tensor,
    pub diameter: f64,
}

/// Sample `n_p` member points (without replacement when the superpoint is
/// large enough, with replacement otherwise), rescale positions to the
/// unit sphere about the centroid, and assemble the input rows.
pub fn build_sample(
    cloud: &PointCloud,
    features: &GeomFeatures,
    superpoint: &Superpoint,
    n_p: usize,
    rng: &mut Rng,
) -> SuperpointSample {
    let members = &superpoint.members;
    assert!(!members.is_empty(), "empty superpoint");
    let chosen: Vec<usize> = if members.len() >= n_p {
        rng.sample_indices(members.len(), n_p).into_iter().map(|k| members[k]).collect()
    } else {
        (0..n_p).map(|_| members[rng.below(members.len())]).collect()
    };

    let centroid = superpoint.centroid;
    let r_max = chosen
        .iter()
        .map(|&i| cloud.positions[i].sub(centroid).norm())
        .fold(0.0_f64, f64::max);
    let scale = if r_max > 0.0 { 1.0 / r_max } else { 0.0 };

    let dim = super::POINT_INPUT_DIM;
    let mut points = Tensor::zeros(n_p, dim);
    for (r, &i) in chosen.iter().enumerate() {
        let p = cloud.positions[i].sub(centroid).scale(scale);
        let row = points.row_mut(r);
        row[0] = p.x;
        row[1] = p.y;
        row[2] = p.z;
        if let Some(colors) = &cloud.colors {
            row[3] = colors[i].x;
            row[4] = colors[i].y;
            row[5] = colors[i].z;
        }
        row[6..6 + GEOM_DIM].copy_from_slice(&features.values[i]);
    }
    SuperpointSample { points, diameter: superpoint.diameter }
}

/// A batch of samples stacked into one tensor of B groups of n_p rows.
#[derive(Debug, Clone)]
pub struct EmbeddingBatch {
    pub inputs: Tensor,
    pub diameters: Vec<f64>,
    pub n_p: usize,
}

impl EmbeddingBatch {
    pub fn from_samples(samples: &[SuperpointSample], n_p: usize) -> EmbeddingBatch {
        assert!(!samples.is_empty());
        let dim = samples[0].points.cols;
        let mut inputs = Tensor::zeros(samples.len() * n_p, dim);
        let mut diameters = Vec::with_capacity(samples.len());
        for (b, s) in samples.iter().enumerate() {
            assert_eq!(s.points.rows, n_p);
            for r in 0..n_p {
                inputs.row_mut(b * n_p + r).copy_from_slice(s.points.row(r));
            }
            diameters.push(s.diameter);
        }
        EmbeddingBatch { inputs, diameters, n_p }
    }

    pub fn batch_size(&self) -> usize {
        self.diameters.len()
    }
}

pub(crate) struct EmbedderParams {
    stn_point: Mlp,
    stn_head: Mlp,
    point: Mlp,
    head: Mlp,
}

impl EmbedderParams {
    pub fn build(state: &mut ModelState, rng: &mut Rng, config: &ModelConfig) -> EmbedderParams {
        let d_in = super::POINT_INPUT_DIM;
        let stn_point = Mlp::build(
            state,
            rng,
            "embed.stn.point",
            d_in,
            &config.stn_point_widths.iter().map(|&w| LayerSpec::hidden(w)).collect::<Vec<_>>(),
        );
        let mut stn_head_specs: Vec<LayerSpec> =
            config.stn_head_widths.iter().map(|&w| LayerSpec::hidden(w)).collect();
        // the residual transform starts at the identity
        stn_head_specs.push(LayerSpec { width: 4, bias: true, bn: false, relu: false, zero_init: true });
        let stn_head = Mlp::build(
            state,
            rng,
            "embed.stn.head",
            *config.stn_point_widths.last().unwrap(),
            &stn_head_specs,
        );
        let point = Mlp::build(
            state,
            rng,
            "embed.point",
            d_in,
            &config.point_widths.iter().map(|&w| LayerSpec::hidden(w)).collect::<Vec<_>>(),
        );
        let mut head_specs: Vec<LayerSpec> =
            config.head_widths.iter().map(|&w| LayerSpec::hidden(w)).collect();
        head_specs.push(LayerSpec::bare(config.embedder_out()));
        let head = Mlp::build(
            state,
            rng,
            "embed.head",
            config.point_widths.last().unwrap() + 1,
            &head_specs,
        );
        EmbedderParams { stn_point, stn_head, point, head }
    }
}

/// Embed a batch of superpoint samples; returns a B x out node.
pub fn embed_batch(
    model: &super::SpgModel,
    tape: &mut Tape,
    batch: &EmbeddingBatch,
    train: bool,
) -> NodeId {
    embed_batch_with(&model.config, &model.state, &model.embedder, tape, batch, train)
}

pub(crate) fn embed_batch_with(
    _config: &ModelConfig,
    state: &ModelState,
    params: &EmbedderParams,
    tape: &mut Tape,
    batch: &EmbeddingBatch,
    train: bool,
) -> NodeId {
    let n_p = batch.n_p;
    let x = tape.input(batch.inputs.clone());

    // spatial transformer on the raw inputs
    let a = params.stn_point.forward(state, tape, x, train);
    let pooled = tape.pool_groups(a, n_p, PoolMode::Max);
    let phi = params.stn_head.forward(state, tape, pooled, train);

    // transform XY, keep the rest of the columns
    let xy = tape.slice_cols(x, 0, 2);
    let rest = tape.slice_cols(x, 2, batch.inputs.cols - 2);
    let xy_t = tape.residual_transform2(xy, phi, n_p);
    let x_aligned = tape.concat_cols(&[xy_t, rest]);

    let h = params.point.forward(state, tape, x_aligned, train);
    let pooled = tape.pool_groups(h, n_p, PoolMode::Max);
    let diam = tape.input(Tensor::from_vec(batch.batch_size(), 1, batch.diameters.clone()));
    let with_diam = tape.concat_cols(&[pooled, diam]);
    params.head.forward(state, tape, with_diam, train)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Vec3;
    use crate::models::{ModelConfig, SpgModel};
    use crate::partition::{NodeFeatures, PartitionSolution};
    use crate::spg::build_superpoints;

    fn toy_scene(n: usize) -> (PointCloud, GeomFeatures, Superpoint) {
        let mut rng = Rng::seed_from(5);
        let pts: Vec<Vec3> = (0..n)
            .map(|_| Vec3::new(rng.uniform(-1.0, 2.0), rng.uniform(0.0, 3.0), rng.uniform(0.0, 1.0)))
            .collect();
        let mut cloud = PointCloud::new(pts);
        cloud.colors = Some((0..n).map(|_| Vec3::new(0.5, 0.5, 0.5)).collect());
        let features = GeomFeatures {
            values: (0..n).map(|i| [0.1, 0.2, 0.7, 0.4, i as f64 / n as f64]).collect(),
            degenerate: vec![],
        };
        let partition = PartitionSolution {
            component_of: vec![0; n],
            component_values: NodeFeatures::new(1, vec![0.0]),
            energy: 0.0,
        };
        let sp = build_superpoints(&cloud, &partition).remove(0);
        (cloud, features, sp)
    }

    #[test]
    fn sample_positions_lie_in_unit_ball() {
        let (cloud, features, sp) = toy_scene(50);
        let mut rng = Rng::seed_from(1);
        let sample = build_sample(&cloud, &features, &sp, 16, &mut rng);
        for r in 0..16 {
            let row = sample.points.row(r);
            let norm = (row[0] * row[0] + row[1] * row[1] + row[2] * row[2]).sqrt();
            assert!(norm <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn small_superpoint_samples_with_replacement() {
        let (cloud, features, sp) = toy_scene(5);
        let mut rng = Rng::seed_from(2);
        let sample = build_sample(&cloud, &features, &sp, 12, &mut rng);
        assert_eq!(sample.points.rows, 12);
    }

    #[test]
    fn large_superpoint_samples_distinct_points() {
        let (cloud, features, sp) = toy_scene(64);
        let mut rng = Rng::seed_from(3);
        let sample = build_sample(&cloud, &features, &sp, 32, &mut rng);
        // distinct rows imply sampling without replacement (positions are
        // almost surely unique in the random scene)
        let mut rows: Vec<Vec<u64>> = (0..32)
            .map(|r| sample.points.row(r).iter().map(|v| v.to_bits()).collect())
            .collect();
        rows.sort();
        rows.dedup();
        assert_eq!(rows.len(), 32);
    }

    #[test]
    fn eval_mode_embedding_is_permutation_invariant() {
        let (cloud, features, sp) = toy_scene(40);
        let mut rng = Rng::seed_from(4);
        let config = ModelConfig::toy(3);
        let n_p = config.n_p;
        let model = SpgModel::new(config, 9);
        let sample = build_sample(&cloud, &features, &sp, n_p, &mut rng);

        let mut permuted = sample.clone();
        // rotate rows by 3
        for r in 0..n_p {
            let src = (r + 3) % n_p;
            let row: Vec<f64> = sample.points.row(src).to_vec();
            permuted.points.row_mut(r).copy_from_slice(&row);
        }

        let run = |s: &SuperpointSample| {
            let mut tape = Tape::new();
            let batch = EmbeddingBatch::from_samples(std::slice::from_ref(s), n_p);
            let z = embed_batch(&model, &mut tape, &batch, false);
            tape.value(z).data.clone()
        };
        let za = run(&sample);
        let zb = run(&permuted);
        for (a, b) in za.iter().zip(&zb) {
            assert!((a - b).abs() < 1e-9, "embedding changed under permutation");
        }
    }

    #[test]
    fn scaling_members_changes_only_the_diameter_path() {
        // doubling all positions doubles the diameter but leaves the
        // normalized inputs identical
        let (cloud, features, sp) = toy_scene(30);
        let mut scaled_cloud = cloud.clone();
        for p in &mut scaled_cloud.positions {
            *p = p.scale(2.0);
        }
        let partition = PartitionSolution {
            component_of: vec![0; 30],
            component_values: NodeFeatures::new(1, vec![0.0]),
            energy: 0.0,
        };
        let sp2 = build_superpoints(&scaled_cloud, &partition).remove(0);

        let mut r1 = Rng::seed_from(7);
        let mut r2 = Rng::seed_from(7);
        let s1 = build_sample(&cloud, &features, &sp, 16, &mut r1);
        let s2 = build_sample(&scaled_cloud, &features, &sp2, 16, &mut r2);
        for r in 0..16 {
            for (a, b) in s1.points.row(r).iter().zip(s2.points.row(r)) {
                assert!((a - b).abs() < 1e-9, "normalized inputs must agree");
            }
        }
        assert!((s2.diameter - 2.0 * s1.diameter).abs() < 1e-9);
    }
}
