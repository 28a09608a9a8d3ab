//! Joint supervised training of the embedder and the context network:
//! order-limited subgraph sampling, augmentation, cross-entropy over
//! superpoint majority labels, Adam with gradient clipping and stepwise
//! learning-rate decay; plus test-time logit averaging and projection of
//! superpoint decisions back to the original points.

use crate::data::unvoxelize_labels;
use crate::error::{Error, Result};
use crate::models::{
    build_sample, AblationVariant, EmbeddingBatch, SpgModel, SuperpointSample,
};
use crate::nncore::{Adam, AdamConfig, ModelState, NodeId, Tape, Tensor};
use crate::pipeline::SceneArtifacts;
use crate::rng::Rng;
use crate::spg::{fit_feature_stats, normalize_features, FeatureStats, SuperpointGraph, SUPEREDGE_DIM};

#[derive(Debug, Clone)]
pub struct TrainConfig {
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
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
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
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LossPoint {
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
}

/// An induced subgraph of an SPG: selected node ids plus the original
/// superedges among them, reindexed.
pub struct Subgraph {
    pub nodes: Vec<usize>,
    pub spg: SuperpointGraph,
}

fn induced_subgraph(spg: &SuperpointGraph, selected: &[usize]) -> Subgraph {
    let mut local = vec![usize::MAX; spg.node_count()];
    for (l, &g) in selected.iter().enumerate() {
        local[g] = l;
    }
    let superpoints = selected.iter().map(|&g| spg.superpoints[g].clone()).collect();
    let superedges = spg
        .superedges
        .iter()
        .filter(|e| local[e.source] != usize::MAX && local[e.target] != usize::MAX)
        .map(|e| crate::spg::Superedge {
            source: local[e.source],
            target: local[e.target],
            features: e.features,
        })
        .collect();
    Subgraph {
        nodes: selected.to_vec(),
        spg: SuperpointGraph { superpoints, superedges, feature_stats: spg.feature_stats },
    }
}

/// Sample an induced subgraph: repeatedly pick a random qualifying seed
/// (more than `n_minp` points) and add its neighborhood of the given
/// order, stopping when another neighborhood would push the count of
/// qualifying superpoints past the cap. Falls back to the whole SPG when
/// nothing qualifies.
pub fn sample_subgraph(
    spg: &SuperpointGraph,
    rng: &mut Rng,
    order: usize,
    cap: usize,
    n_minp: usize,
) -> Subgraph {
    let n = spg.node_count();
    let qualifying: Vec<usize> =
        (0..n).filter(|&i| spg.superpoints[i].point_count() > n_minp).collect();
    if qualifying.is_empty() {
        return induced_subgraph(spg, &(0..n).collect::<Vec<_>>());
    }

    // undirected adjacency over superedges
    let mut adj = vec![Vec::new(); n];
    for e in &spg.superedges {
        adj[e.source].push(e.target);
    }

    let mut selected = vec![false; n];
    let mut selected_count_qualifying = 0usize;
    let mut any = false;
    let mut pool = qualifying.clone();
    rng.shuffle(&mut pool);
    for &seed in &pool {
        if selected[seed] {
            continue;
        }
        // breadth-first neighborhood of the given order
        let mut hood = vec![seed];
        let mut dist = std::collections::HashMap::new();
        dist.insert(seed, 0usize);
        let mut qi = 0;
        while qi < hood.len() {
            let u = hood[qi];
            qi += 1;
            let du = dist[&u];
            if du == order {
                continue;
            }
            for &v in &adj[u] {
                if !dist.contains_key(&v) {
                    dist.insert(v, du + 1);
                    hood.push(v);
                }
            }
        }
        let new_qualifying = hood
            .iter()
            .filter(|&&v| !selected[v] && spg.superpoints[v].point_count() > n_minp)
            .count();
        if any && selected_count_qualifying + new_qualifying > cap {
            break;
        }
        for &v in &hood {
            if !selected[v] {
                selected[v] = true;
                if spg.superpoints[v].point_count() > n_minp {
                    selected_count_qualifying += 1;
                }
            }
        }
        any = true;
        if selected_count_qualifying >= cap {
            break;
        }
    }
    let nodes: Vec<usize> = (0..n).filter(|&i| selected[i]).collect();
    induced_subgraph(spg, &nodes)
}

/// Training augmentation: one uniform rotation about the vertical axis per
/// superpoint applied to the normalized XY coordinates, then truncated
/// Gaussian jitter on every input feature.
pub fn augment(sample: &mut SuperpointSample, rng: &mut Rng, sigma: f64, bound: f64) {
    let angle = rng.uniform(0.0, std::f64::consts::TAU);
    let (s, c) = angle.sin_cos();
    for r in 0..sample.points.rows {
        let row = sample.points.row_mut(r);
        let (x, y) = (row[0], row[1]);
        row[0] = c * x - s * y;
        row[1] = s * x + c * y;
    }
    if sigma > 0.0 {
        for v in &mut sample.points.data {
            *v += rng.truncated_normal(sigma, bound);
        }
    }
}

/// A trained model: parameters plus the train-set superedge statistics
/// (stored in the parameter store so checkpoints carry them).
pub struct TrainedModel {
    pub model: SpgModel,
}

impl TrainedModel {
    pub fn feature_stats(&self) -> FeatureStats {
        let state = &self.model.state;
        let mean_id = state.id_of("norm.edge_mean").expect("stats in state");
        let std_id = state.id_of("norm.edge_std").expect("stats in state");
        let mut stats = FeatureStats { mean: [0.0; SUPEREDGE_DIM], std: [1.0; SUPEREDGE_DIM] };
        stats.mean.copy_from_slice(&state.get(mean_id).value.data);
        stats.std.copy_from_slice(&state.get(std_id).value.data);
        stats
    }
}

fn ensure_stats_params(state: &mut ModelState) {
    if state.id_of("norm.edge_mean").is_none() {
        state.add("norm.edge_mean", Tensor::zeros(1, SUPEREDGE_DIM), false);
        state.add(
            "norm.edge_std",
            Tensor::from_vec(1, SUPEREDGE_DIM, vec![1.0; SUPEREDGE_DIM]),
            false,
        );
    }
}

fn store_stats(state: &mut ModelState, stats: &FeatureStats) {
    ensure_stats_params(state);
    let mean_id = state.id_of("norm.edge_mean").unwrap();
    state.get_mut(mean_id).value.data.copy_from_slice(&stats.mean);
    let std_id = state.id_of("norm.edge_std").unwrap();
    state.get_mut(std_id).value.data.copy_from_slice(&stats.std);
}

/// Which superpoints get a real embedding (the rest stay zero).
fn embeddable(spg: &SuperpointGraph, n_minp: usize) -> Vec<usize> {
    (0..spg.node_count())
        .filter(|&i| spg.superpoints[i].point_count() >= n_minp)
        .collect()
}

/// Forward one scene subgraph: embeddings scattered into the hidden-state
/// matrix, then the variant's contextual stage. Returns the logits node.
fn forward_subgraph(
    model: &SpgModel,
    tape: &mut Tape,
    spg: &SuperpointGraph,
    samples: &[SuperpointSample],
    embed_ids: &[usize],
    train: bool,
) -> NodeId {
    let s_count = spg.node_count();
    let out_dim = model.config.embedder_out();
    let h1 = if embed_ids.is_empty() {
        tape.input(Tensor::zeros(s_count, out_dim))
    } else {
        let batch = EmbeddingBatch::from_samples(samples, model.config.n_p);
        let z = crate::models::embed_batch(model, tape, &batch, train);
        tape.scatter_rows(z, embed_ids, s_count)
    };
    match model.config.ablation {
        AblationVariant::Unary | AblationVariant::ICrf => h1,
        AblationVariant::CrfEcc => crate::models::crf_ecc_forward(model, tape, spg, h1, train),
        _ => crate::models::context_forward(model, tape, spg, h1, train),
    }
}

/// Normalize every scene's superedge features with statistics fitted on
/// the training set, and remember the statistics in the model state.
pub fn normalize_scenes(
    model: &mut SpgModel,
    scenes: &mut [SceneArtifacts],
) -> Result<FeatureStats> {
    let stats = fit_feature_stats(&scenes.iter().map(|s| &s.spg).collect::<Vec<_>>())?;
    for scene in scenes.iter_mut() {
        normalize_features(&mut scene.spg, &stats);
    }
    store_stats(&mut model.state, &stats);
    Ok(stats)
}

/// Supervised training over prepared scenes. Scenes must already carry
/// normalized superedge features (see `normalize_scenes`). One epoch
/// processes one subgraph sample per scene in batches.
pub fn train_loop(
    model: &mut SpgModel,
    scenes: &[SceneArtifacts],
    config: &TrainConfig,
) -> Result<Vec<LossPoint>> {
    if scenes.is_empty() {
        return Err(Error::validation("no training scenes"));
    }
    for scene in scenes {
        if scene.spg.feature_stats.is_none() {
            return Err(Error::contract("superedge features are not normalized"));
        }
    }
    ensure_stats_params(&mut model.state);

    let n_minp = model.config.n_minp;
    let mut adam = Adam::new(AdamConfig { lr: config.lr, ..AdamConfig::default() }, &model.state);
    let root = Rng::seed_from(config.seed);
    let mut curve = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        if config.decay_epochs.contains(&epoch) {
            adam.config.lr *= config.lr_decay;
        }
        let mut order: Vec<usize> = (0..scenes.len()).collect();
        let mut epoch_rng = root.derive(0xe90c + epoch as u64);
        epoch_rng.shuffle(&mut order);

        let mut epoch_loss = 0.0;
        let mut steps = 0usize;
        for step_scenes in order.chunks(config.batch.max(1)) {
            model.state.zero_grads();
            let mut tape = Tape::new();
            let mut losses: Vec<(NodeId, usize)> = Vec::new();
            for &scene_idx in step_scenes {
                let scene = &scenes[scene_idx];
                let mut rng = epoch_rng.derive(scene_idx as u64);
                let sub = sample_subgraph(
                    &scene.spg,
                    &mut rng,
                    config.neighborhood_order,
                    config.max_superpoints,
                    n_minp,
                );
                let embed_local: Vec<usize> = embeddable(&sub.spg, n_minp);
                let mut samples = Vec::with_capacity(embed_local.len());
                for &l in &embed_local {
                    let global = sub.nodes[l];
                    let mut sample = build_sample(
                        &scene.voxel_map.voxel_cloud,
                        &scene.features,
                        &scene.spg.superpoints[global],
                        model.config.n_p,
                        &mut rng,
                    );
                    augment(&mut sample, &mut rng, config.jitter_sigma, config.jitter_clip);
                    samples.push(sample);
                }
                let logits =
                    forward_subgraph(model, &mut tape, &sub.spg, &samples, &embed_local, true);
                // loss over qualifying labeled superpoints
                let picks: Vec<(usize, usize)> = (0..sub.spg.node_count())
                    .filter(|&l| sub.spg.superpoints[l].point_count() > n_minp)
                    .filter_map(|l| {
                        sub.spg.superpoints[l].majority_label.map(|lab| (l, lab as usize))
                    })
                    .collect();
                if picks.is_empty() {
                    continue;
                }
                let logp = tape.log_softmax_rows(logits);
                let loss = tape.mean_pick_neg(logp, &picks);
                losses.push((loss, picks.len()));
            }
            if losses.is_empty() {
                continue;
            }
            // combine per-scene means into the mean over all counted nodes
            let total: usize = losses.iter().map(|(_, n)| n).sum();
            let mut combined = None;
            for (node, n) in &losses {
                let scaled = tape.scale(*node, *n as f64 / total as f64);
                combined = Some(match combined {
                    None => scaled,
                    Some(acc) => tape.add(acc, scaled),
                });
            }
            let loss_node = combined.unwrap();
            let loss_value = tape.value(loss_node).data[0];
            if !loss_value.is_finite() {
                return Err(Error::NonFinite(format!(
                    "training loss at epoch {epoch} (lr {}, {} superpoints)",
                    adam.config.lr, total
                )));
            }
            tape.backward(loss_node, &mut model.state);
            tape.apply_bn_updates(&mut model.state, 0.9);
            crate::nncore::clip_gradients(&mut model.state, config.clip);
            debug_assert!(model.state.iter().all(|p| {
                !p.trainable || p.grad.data.iter().all(|g| g.abs() <= config.clip)
            }));
            adam.step(&mut model.state)?;
            epoch_loss += loss_value;
            steps += 1;
        }
        curve.push(LossPoint {
            epoch,
            loss: if steps > 0 { epoch_loss / steps as f64 } else { f64::NAN },
            lr: adam.config.lr,
        });
    }
    Ok(curve)
}

/// Per-superpoint logits for a full scene, averaged over `runs` sampling
/// seeds in eval mode.
pub fn scene_logits(
    model: &SpgModel,
    scene: &SceneArtifacts,
    runs: usize,
    seed: u64,
) -> Result<Tensor> {
    if model.config.ablation != AblationVariant::NoEdgeFeat && scene.spg.feature_stats.is_none() {
        return Err(Error::contract("scene superedge features are not normalized"));
    }
    let n_minp = model.config.n_minp;
    let embed_ids = embeddable(&scene.spg, n_minp);
    let s_count = scene.spg.node_count();
    let k = model.config.class_count;
    let mut sum = Tensor::zeros(s_count, k);
    let root = Rng::seed_from(seed);
    for run in 0..runs.max(1) {
        let mut rng = root.derive(0x9e1 + run as u64);
        let samples: Vec<SuperpointSample> = embed_ids
            .iter()
            .map(|&i| {
                build_sample(
                    &scene.voxel_map.voxel_cloud,
                    &scene.features,
                    &scene.spg.superpoints[i],
                    model.config.n_p,
                    &mut rng,
                )
            })
            .collect();
        let mut tape = Tape::new();
        let logits = forward_subgraph(model, &mut tape, &scene.spg, &samples, &embed_ids, false);
        for (o, v) in sum.data.iter_mut().zip(&tape.value(logits).data) {
            *o += v;
        }
    }
    for v in &mut sum.data {
        *v /= runs.max(1) as f64;
    }
    Ok(sum)
}

/// Predict per-original-point labels: averaged logits, variant-specific
/// decision rule, broadcast to member voxels, projection to raw points.
pub fn predict(model: &SpgModel, scene: &SceneArtifacts, runs: usize, seed: u64) -> Result<Vec<u32>> {
    let logits = scene_logits(model, scene, runs, seed)?;
    let superpoint_labels: Vec<u32> = match model.config.ablation {
        AblationVariant::ICrf => crate::models::icrf_labels(
            &logits,
            &scene.spg,
            model.config.icrf_sigma,
            model.config.crf_iters,
        ),
        _ => (0..logits.rows)
            .map(|i| {
                logits
                    .row(i)
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(&a.0)))
                    .map(|(c, _)| c as u32)
                    .unwrap()
            })
            .collect(),
    };
    let voxel_labels: Vec<u32> = scene
        .partition
        .component_of
        .iter()
        .map(|&c| superpoint_labels[c as usize])
        .collect();
    unvoxelize_labels(&scene.voxel_map, &voxel_labels)
}
