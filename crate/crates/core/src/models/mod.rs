//! The networks: a PointNet-style superpoint embedder with a spatial
//! transformer, the recurrent edge-conditioned contextual segmenter, and
//! the CRF baselines.

mod context;
mod crf;
mod embedder;

pub use context::context_forward;
pub use crf::{crf_ecc_forward, crf_ecc_infer, icrf_labels, CrfRun};
pub use embedder::{build_sample, embed_batch, EmbeddingBatch, SuperpointSample};

use serde::{Deserialize, Serialize};

use crate::nncore::{ModelState, NodeId, ParamId, Tape, Tensor};
use crate::rng::Rng;

pub const GEOM_INPUT_DIM: usize = crate::geomfeat::GEOM_DIM;
/// Point input layout: normalized position (3), color (3), geometry (5).
pub const POINT_INPUT_DIM: usize = 6 + GEOM_INPUT_DIM;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EccVariant {
    /// Edge-specific weight vector, elementwise multiplication.
    Vv,
    /// Edge-specific weight matrix, matrix-vector multiplication.
    Mv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AblationVariant {
    /// Full model: embedder + gated recurrent context network.
    Best,
    /// Embedder alone predicts class logits.
    Unary,
    /// Unary plus mean-field smoothing with a scalar transition at test time.
    ICrf,
    /// Unary plus edge-conditioned mean-field iterations, trained jointly.
    CrfEcc,
    /// Best with the embedding width forced to the class count.
    Gru13,
    NoInputGate,
    NoConcat,
    NoEdgeFeat,
}

impl AblationVariant {
    pub fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "best" | "Best" => AblationVariant::Best,
            "unary" | "Unary" => AblationVariant::Unary,
            "icrf" | "iCRF" => AblationVariant::ICrf,
            "crf-ecc" | "crfecc" | "CRF-ECC" => AblationVariant::CrfEcc,
            "gru13" | "GRU13" => AblationVariant::Gru13,
            "no-input-gate" | "NoInputGate" => AblationVariant::NoInputGate,
            "no-concat" | "NoConcat" => AblationVariant::NoConcat,
            "no-edge-feat" | "NoEdgeFeat" => AblationVariant::NoEdgeFeat,
            _ => return None,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            AblationVariant::Best => "Best",
            AblationVariant::Unary => "Unary",
            AblationVariant::ICrf => "iCRF",
            AblationVariant::CrfEcc => "CRF-ECC",
            AblationVariant::Gru13 => "GRU13",
            AblationVariant::NoInputGate => "NoInputGate",
            AblationVariant::NoConcat => "NoConcat",
            AblationVariant::NoEdgeFeat => "NoEdgeFeat",
        }
    }

    /// Variants whose embedder directly outputs class logits.
    pub fn is_unary_family(&self) -> bool {
        matches!(self, AblationVariant::Unary | AblationVariant::ICrf | AblationVariant::CrfEcc)
    }

    pub fn uses_context(&self) -> bool {
        matches!(
            self,
            AblationVariant::Best
                | AblationVariant::Gru13
                | AblationVariant::NoInputGate
                | AblationVariant::NoConcat
                | AblationVariant::NoEdgeFeat
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub class_count: usize,
    pub d_z: usize,
    pub t_iters: usize,
    pub n_p: usize,
    pub n_minp: usize,
    pub ecc: EccVariant,
    pub ablation: AblationVariant,
    pub stn_point_widths: Vec<usize>,
    pub stn_head_widths: Vec<usize>,
    pub point_widths: Vec<usize>,
    pub head_widths: Vec<usize>,
    pub theta_widths: Vec<usize>,
    /// Mean-field iterations for the CRF variants.
    pub crf_iters: usize,
    /// Scalar transition strength for the iCRF baseline.
    pub icrf_sigma: f64,
}

impl ModelConfig {
    pub fn standard(class_count: usize) -> Self {
        ModelConfig {
            class_count,
            d_z: 32,
            t_iters: 10,
            n_p: 128,
            n_minp: 40,
            ecc: EccVariant::Vv,
            ablation: AblationVariant::Best,
            stn_point_widths: vec![64, 64, 128],
            stn_head_widths: vec![128, 64],
            point_widths: vec![64, 64, 128, 128, 256],
            head_widths: vec![256, 64],
            theta_widths: vec![32, 128, 64],
            crf_iters: 10,
            icrf_sigma: 0.5,
        }
    }

    /// Scaled-down widths for gradient checks and unit tests.
    pub fn toy(class_count: usize) -> Self {
        ModelConfig {
            class_count,
            d_z: 6,
            t_iters: 2,
            n_p: 8,
            n_minp: 1,
            ecc: EccVariant::Vv,
            ablation: AblationVariant::Best,
            stn_point_widths: vec![8, 8],
            stn_head_widths: vec![8],
            point_widths: vec![8, 8, 12],
            head_widths: vec![10, 8],
            theta_widths: vec![6, 10, 8],
            crf_iters: 5,
            icrf_sigma: 0.5,
        }
    }

    /// Embedding width actually used by the variant.
    pub fn effective_dz(&self) -> usize {
        match self.ablation {
            AblationVariant::Gru13 => self.class_count.max(2),
            _ => self.d_z,
        }
    }

    /// Output width of the embedder head.
    pub fn embedder_out(&self) -> usize {
        if self.ablation.is_unary_family() {
            self.class_count
        } else {
            self.effective_dz()
        }
    }

    /// Superedge feature width seen by the filter network.
    pub fn edge_feature_dim(&self) -> usize {
        if self.ablation == AblationVariant::NoEdgeFeat {
            1
        } else {
            crate::spg::SUPEREDGE_DIM
        }
    }
}

pub(crate) struct BnIds {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

pub(crate) struct MlpLayer {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub bn: Option<BnIds>,
    pub relu: bool,
}

/// A sequence of linear layers with optional batch norm and ReLU.
pub(crate) struct Mlp {
    pub layers: Vec<MlpLayer>,
}

pub(crate) struct LayerSpec {
    pub width: usize,
    pub bias: bool,
    pub bn: bool,
    pub relu: bool,
    /// Start at zero instead of the fan-in initialization.
    pub zero_init: bool,
}

impl LayerSpec {
    pub fn hidden(width: usize) -> Self {
        // batch norm subtracts the batch mean, so a linear bias before it
        // is redundant (its gradient is identically zero); beta is the bias
        LayerSpec { width, bias: false, bn: true, relu: true, zero_init: false }
    }

    pub fn relu_only(width: usize) -> Self {
        LayerSpec { width, bias: true, bn: false, relu: true, zero_init: false }
    }

    pub fn bare(width: usize) -> Self {
        LayerSpec { width, bias: true, bn: false, relu: false, zero_init: false }
    }
}

impl Mlp {
    pub fn build(
        state: &mut ModelState,
        rng: &mut Rng,
        prefix: &str,
        in_dim: usize,
        specs: &[LayerSpec],
    ) -> Mlp {
        let mut layers = Vec::new();
        let mut dim = in_dim;
        for (k, spec) in specs.iter().enumerate() {
            let name = format!("{prefix}.{k}");
            let w = if spec.zero_init {
                Tensor::zeros(dim, spec.width)
            } else {
                Tensor::kaiming(dim, spec.width, dim, rng)
            };
            let w = state.add(format!("{name}.w"), w, true);
            let b = spec.bias.then(|| {
                let t = if spec.zero_init {
                    Tensor::zeros(1, spec.width)
                } else {
                    Tensor::kaiming(1, spec.width, dim, rng)
                };
                state.add(format!("{name}.b"), t, true)
            });
            let bn = spec.bn.then(|| BnIds {
                gamma: state.add(format!("{name}.bn.gamma"), Tensor::from_vec(1, spec.width, vec![1.0; spec.width]), true),
                beta: state.add(format!("{name}.bn.beta"), Tensor::zeros(1, spec.width), true),
                running_mean: state.add(format!("{name}.bn.rmean"), Tensor::zeros(1, spec.width), false),
                running_var: state.add(
                    format!("{name}.bn.rvar"),
                    Tensor::from_vec(1, spec.width, vec![1.0; spec.width]),
                    false,
                ),
            });
            layers.push(MlpLayer { w, b, bn, relu: spec.relu });
            dim = spec.width;
        }
        Mlp { layers }
    }

    pub fn forward(&self, state: &ModelState, tape: &mut Tape, mut x: NodeId, train: bool) -> NodeId {
        for layer in &self.layers {
            let w = tape.param(state, layer.w);
            let b = layer.b.map(|b| tape.param(state, b));
            x = tape.linear(x, w, b);
            if let Some(bn) = &layer.bn {
                let gamma = tape.param(state, bn.gamma);
                let beta = tape.param(state, bn.beta);
                x = tape.batch_norm(state, x, gamma, beta, bn.running_mean, bn.running_var, train);
            }
            if layer.relu {
                x = tape.relu(x);
            }
        }
        x
    }
}

/// All trainable parts for one configured variant.
pub struct SpgModel {
    pub config: ModelConfig,
    pub state: ModelState,
    pub(crate) embedder: embedder::EmbedderParams,
    pub(crate) context: Option<context::ContextParams>,
    pub(crate) theta_c: Option<Mlp>,
}

impl SpgModel {
    pub fn new(config: ModelConfig, seed: u64) -> Self {
        let mut state = ModelState::new();
        let mut rng = Rng::seed_from(seed).derive(0x1417);
        let embedder = embedder::EmbedderParams::build(&mut state, &mut rng, &config);
        let context = config
            .ablation
            .uses_context()
            .then(|| context::ContextParams::build(&mut state, &mut rng, &config));
        let theta_c = (config.ablation == AblationVariant::CrfEcc).then(|| {
            let k = config.class_count;
            let mut specs: Vec<LayerSpec> = Vec::new();
            for (i, &wd) in config.theta_widths.iter().enumerate() {
                // batch norm only after the third parametric layer
                if i == 2 {
                    specs.push(LayerSpec::hidden(wd));
                } else {
                    specs.push(LayerSpec::relu_only(wd));
                }
            }
            specs.push(LayerSpec { width: k * k, bias: false, bn: false, relu: false, zero_init: false });
            Mlp::build(&mut state, &mut rng, "crf.theta", crate::spg::SUPEREDGE_DIM, &specs)
        });
        SpgModel { config, state, embedder, context, theta_c }
    }
}

/// Gradient check of the complete embedder + context pipeline on a small
/// synthetic SPG: build fixed random inputs, run cross-entropy over the
/// resulting logits, and compare the tape gradients of every trainable
/// parameter against central differences.
pub fn full_model_grad_check(
    config: &ModelConfig,
    seed: u64,
    h: f64,
    max_per_param: Option<usize>,
) -> crate::nncore::GradCheckReport {
    use crate::spg::{FeatureStats, Superedge, Superpoint, SuperpointGraph, SUPEREDGE_DIM};

    let mut rng = Rng::seed_from(seed).derive(0x6c);
    let nodes = 3;
    let mut spg = SuperpointGraph {
        superpoints: (0..nodes)
            .map(|i| Superpoint {
                members: vec![i],
                centroid: crate::linalg::Vec3::new(i as f64, 0.5, 0.0),
                lambdas: [1.0, 0.4, 0.1],
                diameter: 1.0 + i as f64 * 0.3,
                majority_label: Some((i % config.class_count) as u32),
            })
            .collect(),
        superedges: [(0usize, 1usize), (1, 0), (1, 2), (2, 1), (0, 2), (2, 0)]
            .iter()
            .map(|&(s, t)| {
                let mut features = [0.0; SUPEREDGE_DIM];
                for f in &mut features {
                    *f = rng.uniform(-1.0, 1.0);
                }
                Superedge { source: s, target: t, features }
            })
            .collect(),
        feature_stats: Some(FeatureStats { mean: [0.0; SUPEREDGE_DIM], std: [1.0; SUPEREDGE_DIM] }),
    };
    if config.ablation == AblationVariant::NoEdgeFeat {
        spg.feature_stats = None;
    }

    let n_p = config.n_p;
    let dim = POINT_INPUT_DIM;
    let mut inputs = Tensor::zeros(nodes * n_p, dim);
    for v in &mut inputs.data {
        *v = rng.uniform(-1.0, 1.0);
    }
    let batch = embedder::EmbeddingBatch {
        inputs,
        diameters: (0..nodes).map(|i| 1.0 + i as f64 * 0.3).collect(),
        n_p,
    };
    let labels: Vec<usize> = (0..nodes).map(|i| i % config.class_count).collect();

    // split the model so the parameter store can be perturbed while the
    // architecture definition stays borrowed by the builder
    let SpgModel { config: model_config, state: mut param_state, embedder, context, theta_c } =
        SpgModel::new(config.clone(), seed);
    // evaluate at a generic point: zero-initialized parameters (STN output,
    // batch-norm beta) otherwise pin pre-activations exactly onto the ReLU
    // kink, where finite differences and the subgradient legitimately differ
    for p in param_state.iter_mut() {
        if p.trainable {
            for v in &mut p.value.data {
                *v += rng.uniform(-0.05, 0.05);
            }
        }
    }
    let uses_context = config.ablation.uses_context();
    let is_crf = config.ablation == AblationVariant::CrfEcc;
    let build = |state: &ModelState, tape: &mut Tape| -> crate::nncore::NodeId {
        let shim = SpgModelRef {
            config: &model_config,
            state,
            embedder: &embedder,
            context: &context,
            theta_c: &theta_c,
        };
        let z = shim.embed(tape, &batch, true);
        let logits = if uses_context {
            shim.context_forward(tape, &spg, z, true)
        } else if is_crf {
            shim.crf_forward(tape, &spg, z, true)
        } else {
            z
        };
        let logp = tape.log_softmax_rows(logits);
        let picks: Vec<(usize, usize)> = labels.iter().enumerate().map(|(i, &l)| (i, l)).collect();
        tape.mean_pick_neg(logp, &picks)
    };
    crate::nncore::grad_check(&mut param_state, build, h, max_per_param)
}

/// Borrow-splitting view used where the parameter store must be mutated
/// independently of the architecture definition.
pub(crate) struct SpgModelRef<'a> {
    pub config: &'a ModelConfig,
    pub state: &'a ModelState,
    pub embedder: &'a embedder::EmbedderParams,
    pub context: &'a Option<context::ContextParams>,
    pub theta_c: &'a Option<Mlp>,
}

impl<'a> SpgModelRef<'a> {
    pub fn embed(&self, tape: &mut Tape, batch: &embedder::EmbeddingBatch, train: bool) -> NodeId {
        embedder::embed_batch_with(self.config, self.state, self.embedder, tape, batch, train)
    }

    pub fn context_forward(
        &self,
        tape: &mut Tape,
        spg: &crate::spg::SuperpointGraph,
        h1: NodeId,
        train: bool,
    ) -> NodeId {
        context::context_forward_with(
            self.config,
            self.state,
            self.context.as_ref().expect("context params"),
            tape,
            spg,
            h1,
            train,
        )
    }

    pub fn crf_forward(
        &self,
        tape: &mut Tape,
        spg: &crate::spg::SuperpointGraph,
        unary: NodeId,
        train: bool,
    ) -> NodeId {
        crf::crf_ecc_forward_with(
            self.config,
            self.state,
            self.theta_c.as_ref().expect("crf theta params"),
            tape,
            spg,
            unary,
            train,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_parsing_roundtrip() {
        for v in [
            AblationVariant::Best,
            AblationVariant::Unary,
            AblationVariant::ICrf,
            AblationVariant::CrfEcc,
            AblationVariant::Gru13,
            AblationVariant::NoInputGate,
            AblationVariant::NoConcat,
            AblationVariant::NoEdgeFeat,
        ] {
            assert_eq!(AblationVariant::parse(v.name()), Some(v));
        }
        assert_eq!(AblationVariant::parse("bogus"), None);
    }

    #[test]
    fn unary_head_width_is_class_count() {
        let mut config = ModelConfig::toy(5);
        config.ablation = AblationVariant::Unary;
        assert_eq!(config.embedder_out(), 5);
        config.ablation = AblationVariant::Best;
        assert_eq!(config.embedder_out(), config.d_z);
    }

    #[test]
    fn gru13_embeds_with_class_count_width() {
        let mut config = ModelConfig::standard(13);
        config.ablation = AblationVariant::Gru13;
        assert_eq!(config.effective_dz(), 13);
        assert_eq!(config.embedder_out(), 13);
    }

    #[test]
    fn model_builds_for_every_variant() {
        for ablation in [
            AblationVariant::Best,
            AblationVariant::Unary,
            AblationVariant::ICrf,
            AblationVariant::CrfEcc,
            AblationVariant::Gru13,
            AblationVariant::NoInputGate,
            AblationVariant::NoConcat,
            AblationVariant::NoEdgeFeat,
        ] {
            let mut config = ModelConfig::toy(4);
            config.ablation = ablation;
            let model = SpgModel::new(config, 3);
            assert!(model.state.trainable_element_count() > 0);
            assert_eq!(model.context.is_some(), ablation.uses_context());
            assert_eq!(model.theta_c.is_some(), ablation == AblationVariant::CrfEcc);
        }
    }

    #[test]
    fn same_seed_same_initialization() {
        let a = SpgModel::new(ModelConfig::toy(3), 11);
        let b = SpgModel::new(ModelConfig::toy(3), 11);
        for (pa, pb) in a.state.iter().zip(b.state.iter()) {
            assert_eq!(pa.value.data, pb.value.data);
        }
    }
}
