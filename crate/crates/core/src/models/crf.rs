//! Mean-field refinement baselines over the SPG: edge-conditioned
//! pairwise terms generated by a filter network (trainable end-to-end),
//! and the scalar-transition special case.

use super::SpgModel;
use crate::nncore::{NodeId, Tape, Tensor};
use crate::spg::SuperpointGraph;

#[derive(Debug, Clone)]
pub struct CrfRun {
    /// Final marginals, rows summing to one.
    pub marginals: Tensor,
    pub iterations: usize,
    pub converged: bool,
}

/// Differentiable unrolled mean-field iterations with an edge-conditioned
/// pairwise term; returns log-marginals (S x K) for the loss.
pub fn crf_ecc_forward(
    model: &SpgModel,
    tape: &mut Tape,
    spg: &SuperpointGraph,
    unary: NodeId,
    train: bool,
) -> NodeId {
    let theta_mlp = model.theta_c.as_ref().expect("variant carries a CRF filter network");
    crf_ecc_forward_with(&model.config, &model.state, theta_mlp, tape, spg, unary, train)
}

pub(crate) fn crf_ecc_forward_with(
    config: &super::ModelConfig,
    state: &crate::nncore::ModelState,
    theta_mlp: &super::Mlp,
    tape: &mut Tape,
    spg: &SuperpointGraph,
    unary: NodeId,
    train: bool,
) -> NodeId {
    let k = config.class_count;
    let s_count = spg.node_count();
    assert_eq!(tape.value(unary).rows, s_count);
    assert_eq!(tape.value(unary).cols, k);

    let e_count = spg.superedges.len();
    let src: Vec<usize> = spg.superedges.iter().map(|e| e.source).collect();
    let dst: Vec<usize> = spg.superedges.iter().map(|e| e.target).collect();
    let theta = if e_count > 0 {
        let mut f = Tensor::zeros(e_count, crate::spg::SUPEREDGE_DIM);
        for (i, e) in spg.superedges.iter().enumerate() {
            f.row_mut(i).copy_from_slice(&e.features);
        }
        let f = tape.input(f);
        Some(theta_mlp.forward(state, tape, f, train))
    } else {
        None
    };

    let mut q = tape.softmax_rows(unary);
    let mut breve = unary;
    for _ in 0..config.crf_iters {
        let q_hat = match theta {
            Some(theta) => {
                let q_src = tape.gather_rows(q, &src);
                let msg = tape.edge_matvec(theta, q_src);
                tape.segment_sum(msg, &dst, s_count)
            }
            None => tape.input(Tensor::zeros(s_count, k)),
        };
        breve = tape.sub(unary, q_hat);
        q = tape.softmax_rows(breve);
    }
    tape.log_softmax_rows(breve)
}

/// Pure-value mean-field inference with a caller-supplied pairwise kernel
/// per edge (K x K, row-major). Stops when the largest marginal change
/// drops below `tol` or after `max_iters`.
pub fn crf_ecc_infer(
    unary: &Tensor,
    spg: &SuperpointGraph,
    kernel: impl Fn(usize) -> Vec<f64>,
    max_iters: usize,
    tol: f64,
) -> CrfRun {
    let k = unary.cols;
    let s_count = unary.rows;
    let softmax = |x: &Tensor| -> Tensor {
        let mut out = Tensor::zeros(x.rows, x.cols);
        for i in 0..x.rows {
            let row = x.row(i);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (o, &v) in out.row_mut(i).iter_mut().zip(row) {
                *o = (v - m).exp();
                sum += *o;
            }
            for o in out.row_mut(i) {
                *o /= sum;
            }
        }
        out
    };

    let kernels: Vec<Vec<f64>> = (0..spg.superedges.len()).map(&kernel).collect();
    let mut q = softmax(unary);
    let mut iterations = 0;
    let mut converged = false;
    for _ in 0..max_iters {
        iterations += 1;
        let mut q_hat = Tensor::zeros(s_count, k);
        for (e, edge) in spg.superedges.iter().enumerate() {
            let m = &kernels[e];
            let qj = q.row(edge.source);
            let acc = q_hat.row_mut(edge.target);
            for a in 0..k {
                let mut s = 0.0;
                for (b, &qb) in qj.iter().enumerate() {
                    s += m[a * k + b] * qb;
                }
                acc[a] += s;
            }
        }
        let mut breve = Tensor::zeros(s_count, k);
        for i in 0..s_count {
            for c in 0..k {
                breve.set(i, c, unary.get(i, c) - q_hat.get(i, c));
            }
        }
        let q_next = softmax(&breve);
        let delta = q
            .data
            .iter()
            .zip(&q_next.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0_f64, f64::max);
        q = q_next;
        if delta < tol {
            converged = true;
            break;
        }
    }
    CrfRun { marginals: q, iterations, converged }
}

/// Mean-field smoothing with the scalar Potts kernel
/// `sigma_t * (1 - identity)`; returns argmax labels.
pub fn icrf_labels(
    unary: &Tensor,
    spg: &SuperpointGraph,
    sigma_t: f64,
    max_iters: usize,
) -> Vec<u32> {
    let k = unary.cols;
    let mut kernel = vec![sigma_t; k * k];
    for a in 0..k {
        kernel[a * k + a] = 0.0;
    }
    let run = crf_ecc_infer(unary, spg, |_| kernel.clone(), max_iters, 1e-6);
    (0..unary.rows)
        .map(|i| {
            let row = run.marginals.row(i);
            row.iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(&a.0)))
                .map(|(c, _)| c as u32)
                .unwrap()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Vec3;
    use crate::spg::{FeatureStats, Superedge, Superpoint, SUPEREDGE_DIM};

    fn toy_spg(nodes: usize, edges: &[(usize, usize)]) -> SuperpointGraph {
        let sp = |i: usize| Superpoint {
            members: vec![i],
            centroid: Vec3::new(i as f64, 0.0, 0.0),
            lambdas: [1.0, 0.5, 0.1],
            diameter: 1.0,
            majority_label: Some(0),
        };
        SuperpointGraph {
            superpoints: (0..nodes).map(sp).collect(),
            superedges: edges
                .iter()
                .map(|&(s, t)| Superedge { source: s, target: t, features: [0.1; SUPEREDGE_DIM] })
                .collect(),
            feature_stats: Some(FeatureStats { mean: [0.0; 13], std: [1.0; 13] }),
        }
    }

    #[test]
    fn zero_kernel_fixes_softmax_of_unary() {
        let spg = toy_spg(3, &[(0, 1), (1, 0), (1, 2), (2, 1)]);
        let unary = Tensor::from_rows(vec![
            vec![2.0, 0.0, -1.0],
            vec![0.0, 0.0, 0.0],
            vec![-3.0, 1.0, 0.5],
        ]);
        let run = crf_ecc_infer(&unary, &spg, |_| vec![0.0; 9], 50, 1e-6);
        assert!(run.converged);
        // one iteration reaches the fixed point, the second detects it
        assert!(run.iterations <= 2);
        for i in 0..3 {
            let row = unary.row(i);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|&v| (v - m).exp()).sum();
            for c in 0..3 {
                let want = (unary.get(i, c) - m).exp() / z;
                assert!((run.marginals.get(i, c) - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn rows_stay_normalized_every_iteration() {
        let spg = toy_spg(4, &[(0, 1), (1, 0), (1, 2), (2, 1), (2, 3), (3, 2)]);
        let mut rng = crate::rng::Rng::seed_from(3);
        let unary = Tensor::from_vec(4, 5, (0..20).map(|_| rng.uniform(-2.0, 2.0)).collect());
        for iters in 1..=12 {
            let run = crf_ecc_infer(
                &unary,
                &spg,
                |e| (0..25).map(|i| ((e * 25 + i) as f64 * 0.1).sin() * 0.3).collect(),
                iters,
                0.0,
            );
            for i in 0..4 {
                let sum: f64 = run.marginals.row(i).iter().sum();
                assert!((sum - 1.0).abs() < 1e-12, "row {i} after {iters} iters sums to {sum}");
            }
        }
    }

    #[test]
    fn two_node_chain_matches_hand_computation() {
        // one directed pair, K = 2, hand-set kernel
        let spg = toy_spg(2, &[(0, 1), (1, 0)]);
        let unary = Tensor::from_rows(vec![vec![1.0, -1.0], vec![0.2, 0.4]]);
        let m = vec![0.3, -0.1, 0.2, 0.5];
        let run = crf_ecc_infer(&unary, &spg, |_| m.clone(), 2, 0.0);

        // by hand, two iterations
        let softmax2 = |a: f64, b: f64| {
            let mx = a.max(b);
            let (ea, eb) = ((a - mx).exp(), (b - mx).exp());
            (ea / (ea + eb), eb / (ea + eb))
        };
        let mut q = [softmax2(1.0, -1.0), softmax2(0.2, 0.4)];
        for _ in 0..2 {
            let qh0 = [
                m[0] * q[1].0 + m[1] * q[1].1,
                m[2] * q[1].0 + m[3] * q[1].1,
            ];
            let qh1 = [
                m[0] * q[0].0 + m[1] * q[0].1,
                m[2] * q[0].0 + m[3] * q[0].1,
            ];
            q = [
                softmax2(1.0 - qh0[0], -1.0 - qh0[1]),
                softmax2(0.2 - qh1[0], 0.4 - qh1[1]),
            ];
        }
        assert!((run.marginals.get(0, 0) - q[0].0).abs() < 1e-12);
        assert!((run.marginals.get(0, 1) - q[0].1).abs() < 1e-12);
        assert!((run.marginals.get(1, 0) - q[1].0).abs() < 1e-12);
        assert!((run.marginals.get(1, 1) - q[1].1).abs() < 1e-12);
    }

    #[test]
    fn icrf_zero_sigma_is_argmax_of_unary() {
        let spg = toy_spg(3, &[(0, 1), (1, 0)]);
        let unary = Tensor::from_rows(vec![
            vec![0.1, 0.9, 0.0],
            vec![2.0, -1.0, 0.0],
            vec![0.0, 0.0, 3.0],
        ]);
        assert_eq!(icrf_labels(&unary, &spg, 0.0, 10), vec![1, 0, 2]);
    }

    #[test]
    fn icrf_smooths_weak_node_toward_confident_neighbor() {
        let spg = toy_spg(2, &[(0, 1), (1, 0)]);
        // node 0 confidently class 0; node 1 weakly class 1
        let unary = Tensor::from_rows(vec![vec![6.0, 0.0], vec![0.0, 0.15]]);
        let before = icrf_labels(&unary, &spg, 0.0, 10);
        assert_eq!(before, vec![0, 1]);
        let after = icrf_labels(&unary, &spg, 3.0, 30);
        assert_eq!(after, vec![0, 0], "weak node flips to the confident class");
    }

    #[test]
    fn icrf_invariant_to_constant_row_shift() {
        let spg = toy_spg(3, &[(0, 1), (1, 0), (1, 2), (2, 1)]);
        let unary = Tensor::from_rows(vec![
            vec![0.3, -0.2, 0.1],
            vec![1.0, 1.2, 0.8],
            vec![-0.5, -0.1, -0.9],
        ]);
        let mut shifted = unary.clone();
        for i in 0..3 {
            for c in 0..3 {
                shifted.set(i, c, shifted.get(i, c) + 7.5);
            }
        }
        assert_eq!(icrf_labels(&unary, &spg, 0.8, 20), icrf_labels(&shifted, &spg, 0.8, 20));
    }
}
