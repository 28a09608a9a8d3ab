//! Contextual segmentation: hidden states per superpoint refined over T
//! iterations of a gated recurrent unit fed edge-conditioned messages,
//! with layer normalization on both transformed streams, input gating of
//! the incoming message, and logits read from the concatenated states.

use super::{AblationVariant, EccVariant, LayerSpec, Mlp, ModelConfig, SpgModel};
use crate::nncore::{ModelState, NodeId, ParamId, PoolMode, Tape, Tensor};
use crate::rng::Rng;
use crate::spg::SuperpointGraph;

const LN_EPS: f64 = 1e-5;

pub(crate) struct ContextParams {
    w_h: ParamId,
    b_h: ParamId,
    w_x: ParamId,
    b_x: ParamId,
    w_g: ParamId,
    b_g: ParamId,
    theta: Mlp,
    w_o: ParamId,
}

impl ContextParams {
    pub fn build(state: &mut ModelState, rng: &mut Rng, config: &ModelConfig) -> ContextParams {
        let dz = config.effective_dz();
        let k = config.class_count;
        let theta_out = match config.ecc {
            EccVariant::Vv => dz,
            EccVariant::Mv => dz * dz,
        };
        let mut theta_specs: Vec<LayerSpec> = Vec::new();
        for (i, &w) in config.theta_widths.iter().enumerate() {
            // batch norm only after the third parametric layer
            if i == 2 {
                theta_specs.push(LayerSpec::hidden(w));
            } else {
                theta_specs.push(LayerSpec::relu_only(w));
            }
        }
        // no bias in the last layer
        theta_specs.push(LayerSpec { width: theta_out, bias: false, bn: false, relu: false, zero_init: false });
        let theta = Mlp::build(state, rng, "ctx.theta", config.edge_feature_dim(), &theta_specs);

        let out_in = if config.ablation == AblationVariant::NoConcat {
            dz
        } else {
            (config.t_iters + 1) * dz
        };
        ContextParams {
            w_h: state.add("ctx.w_h", Tensor::kaiming(dz, 3 * dz, dz, rng), true),
            b_h: state.add("ctx.b_h", Tensor::kaiming(1, 3 * dz, dz, rng), true),
            w_x: state.add("ctx.w_x", Tensor::kaiming(dz, 3 * dz, dz, rng), true),
            b_x: state.add("ctx.b_x", Tensor::kaiming(1, 3 * dz, dz, rng), true),
            w_g: state.add("ctx.w_g", Tensor::kaiming(dz, dz, dz, rng), true),
            b_g: state.add("ctx.b_g", Tensor::kaiming(1, dz, dz, rng), true),
            theta,
            w_o: state.add("ctx.w_o", Tensor::kaiming(out_in, k, out_in, rng), true),
        }
    }
}

/// Edge feature matrix fed to the filter network, honoring the
/// NoEdgeFeat ablation (a constant scalar 1 per edge).
fn edge_inputs(spg: &SuperpointGraph, config: &ModelConfig) -> Tensor {
    let e = spg.superedges.len();
    if config.ablation == AblationVariant::NoEdgeFeat {
        Tensor::from_vec(e, 1, vec![1.0; e])
    } else {
        let mut t = Tensor::zeros(e, crate::spg::SUPEREDGE_DIM);
        for (i, edge) in spg.superedges.iter().enumerate() {
            t.row_mut(i).copy_from_slice(&edge.features);
        }
        t
    }
}

/// Run the recurrent context network over the SPG. `h1` holds the initial
/// hidden states (S x d_z, zero rows for unembedded superpoints); returns
/// per-superpoint class logits (S x K).
pub fn context_forward(
    model: &SpgModel,
    tape: &mut Tape,
    spg: &SuperpointGraph,
    h1: NodeId,
    train: bool,
) -> NodeId {
    let params = model.context.as_ref().expect("variant has a context network");
    context_forward_with(&model.config, &model.state, params, tape, spg, h1, train)
}

pub(crate) fn context_forward_with(
    config: &ModelConfig,
    state: &ModelState,
    params: &ContextParams,
    tape: &mut Tape,
    spg: &SuperpointGraph,
    h1: NodeId,
    train: bool,
) -> NodeId {
    let dz = config.effective_dz();
    let s_count = spg.node_count();
    assert_eq!(tape.value(h1).rows, s_count);
    assert_eq!(tape.value(h1).cols, dz);
    if config.ablation != AblationVariant::NoEdgeFeat {
        assert!(
            spg.feature_stats.is_some(),
            "superedge features must be normalized before the context network"
        );
    }

    let e_count = spg.superedges.len();
    let src: Vec<usize> = spg.superedges.iter().map(|e| e.source).collect();
    let dst: Vec<usize> = spg.superedges.iter().map(|e| e.target).collect();

    // filter weights are generated once and shared across iterations
    let theta_out = if e_count > 0 {
        let f = tape.input(edge_inputs(spg, config));
        Some(params.theta.forward(state, tape, f, train))
    } else {
        None
    };

    let w_h = tape.param(state, params.w_h);
    let b_h = tape.param(state, params.b_h);
    let w_x = tape.param(state, params.w_x);
    let b_x = tape.param(state, params.b_x);
    let w_g = tape.param(state, params.w_g);
    let b_g = tape.param(state, params.b_g);

    let mut h = h1;
    let mut states = vec![h1];
    for _t in 0..config.t_iters {
        // mean of edge-conditioned messages over in-edges
        let m = match theta_out {
            Some(theta) => {
                let h_src = tape.gather_rows(h, &src);
                let msg = match config.ecc {
                    EccVariant::Vv => tape.mul(theta, h_src),
                    EccVariant::Mv => tape.edge_matvec(theta, h_src),
                };
                tape.segment_reduce(msg, &dst, s_count, PoolMode::Mean)
            }
            None => tape.input(Tensor::zeros(s_count, dz)),
        };

        // input gating by the hidden state
        let x = if config.ablation == AblationVariant::NoInputGate {
            m
        } else {
            let gate_lin = tape.linear(h, w_g, Some(b_g));
            let gate = tape.sigmoid(gate_lin);
            tape.mul(gate, m)
        };

        let hx = tape.linear(h, w_h, Some(b_h));
        let hn = tape.layer_norm_rows(hx, LN_EPS);
        let xx = tape.linear(x, w_x, Some(b_x));
        let xn = tape.layer_norm_rows(xx, LN_EPS);

        let hn1 = tape.slice_cols(hn, 0, dz);
        let hn2 = tape.slice_cols(hn, dz, dz);
        let hn3 = tape.slice_cols(hn, 2 * dz, dz);
        let xn1 = tape.slice_cols(xn, 0, dz);
        let xn2 = tape.slice_cols(xn, dz, dz);
        let xn3 = tape.slice_cols(xn, 2 * dz, dz);

        let u_in = tape.add(xn2, hn2);
        let u = tape.sigmoid(u_in);
        let r_in = tape.add(xn3, hn3);
        let r = tape.sigmoid(r_in);
        let rh = tape.mul(r, hn1);
        let q_in = tape.add(xn1, rh);
        let q = tape.tanh(q_in);

        // h' = (1 - u) . q + u . h
        let uh = tape.mul(u, h);
        let uq = tape.mul(u, q);
        let q_minus_uq = tape.sub(q, uq);
        h = tape.add(q_minus_uq, uh);
        states.push(h);
    }

    let w_o = tape.param(state, params.w_o);
    let features = if config.ablation == AblationVariant::NoConcat {
        h
    } else {
        tape.concat_cols(&states)
    };
    tape.linear(features, w_o, None)
}
