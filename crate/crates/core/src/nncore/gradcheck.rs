//! Central-difference verification of reverse-mode gradients.

use super::{ModelState, NodeId, Tape};

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// (parameter name, flat element index, analytic, numeric, rel. error)
    pub worst: Option<(String, usize, f64, f64, f64)>,
    pub max_rel_error: f64,
    pub checked_elements: usize,
    /// Elements where both sides sat below the zero floor.
    pub zero_agreements: usize,
}

/// Absolute floor below which an element counts as zero on both sides:
/// central differences at h = 1e-5 carry ~1e-11 of cancellation noise, so
/// gradients under ~1e-7 (ReLU-dead channels, unselected max-pool slots,
/// vanishing tails) cannot be resolved to a relative tolerance of 1e-4.
pub const GRAD_ZERO_ATOL: f64 = 1e-7;

/// Compare the tape gradient of a scalar loss against central finite
/// differences for every trainable parameter element (or a deterministic
/// subset of at most `max_per_param` elements when set). The relative
/// error uses |analytic| + |numeric| + 1e-12 in the denominator; elements
/// with both sides under `GRAD_ZERO_ATOL` count as agreeing.
/// Frozen (non-trainable) parameters are excluded.
pub fn grad_check(
    state: &mut ModelState,
    mut build: impl FnMut(&ModelState, &mut Tape) -> NodeId,
    h: f64,
    max_per_param: Option<usize>,
) -> GradCheckReport {
    state.zero_grads();
    let mut tape = Tape::new();
    let loss_node = build(state, &mut tape);
    tape.backward(loss_node, state);
    let analytic: Vec<Vec<f64>> = state.iter().map(|p| p.grad.data.clone()).collect();

    let mut report =
        GradCheckReport { worst: None, max_rel_error: 0.0, checked_elements: 0, zero_agreements: 0 };
    for pid in 0..state.len() {
        if !state.get(pid).trainable {
            continue;
        }
        let count = state.get(pid).value.len();
        let stride = match max_per_param {
            Some(cap) if count > cap => (count + cap - 1) / cap,
            _ => 1,
        };
        for k in (0..count).step_by(stride) {
            let orig = state.get(pid).value.data[k];

            state.get_mut(pid).value.data[k] = orig + h;
            let mut tp = Tape::new();
            let out = build(state, &mut tp);
            let f_plus = tp.value(out).data[0];

            state.get_mut(pid).value.data[k] = orig - h;
            let mut tm = Tape::new();
            let out = build(state, &mut tm);
            let f_minus = tm.value(out).data[0];

            state.get_mut(pid).value.data[k] = orig;

            let numeric = (f_plus - f_minus) / (2.0 * h);
            let a = analytic[pid][k];
            report.checked_elements += 1;
            if a.abs() < GRAD_ZERO_ATOL && numeric.abs() < GRAD_ZERO_ATOL {
                report.zero_agreements += 1;
                continue;
            }
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs() + 1e-12);
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((state.get(pid).name.clone(), k, a, numeric, rel));
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::{PoolMode, Tensor};
    use crate::rng::Rng;

    fn rand_tensor(rng: &mut Rng, rows: usize, cols: usize) -> Tensor {
        Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| rng.uniform(-1.0, 1.0)).collect())
    }

    #[test]
    fn linear_relu_mse_fragment() {
        let mut rng = Rng::seed_from(42);
        let mut state = ModelState::new();
        let w = state.add("w", rand_tensor(&mut rng, 4, 3), true);
        let b = state.add("b", rand_tensor(&mut rng, 1, 3), true);
        let frozen = state.add("frozen", rand_tensor(&mut rng, 1, 3), false);
        let x_data = rand_tensor(&mut rng, 5, 4);
        let report = grad_check(
            &mut state,
            |state, tape| {
                let x = tape.input(x_data.clone());
                let wn = tape.param(state, w);
                let bn = tape.param(state, b);
                let _ = frozen;
                let h = tape.linear(x, wn, Some(bn));
                let y = tape.relu(h);
                let sq = tape.mul(y, y);
                tape.mean_all(sq)
            },
            1e-5,
            None,
        );
        assert!(report.max_rel_error < 1e-6, "{:?}", report.worst);
        // frozen parameter excluded: 12 + 3 elements checked
        assert_eq!(report.checked_elements, 15);
    }

    /// Every op's backward against central differences on random inputs.
    #[test]
    fn every_op_matches_finite_differences() {
        let mut rng = Rng::seed_from(7);
        let rows = 6;
        let cols = 4;

        // each case builds a scalar loss exercising one op
        type Builder = Box<dyn FnMut(&ModelState, &mut Tape, usize) -> NodeId>;
        let cases: Vec<(&str, Builder)> = vec![
            ("relu", Box::new(|s, t, p| { let x = t.param(s, p); let y = t.relu(x); t.mean_all(y) })),
            ("tanh", Box::new(|s, t, p| { let x = t.param(s, p); let y = t.tanh(x); t.mean_all(y) })),
            ("sigmoid", Box::new(|s, t, p| { let x = t.param(s, p); let y = t.sigmoid(x); t.mean_all(y) })),
            ("softmax", Box::new(|s, t, p| {
                let x = t.param(s, p);
                let y = t.softmax_rows(x);
                let sq = t.mul(y, y);
                t.mean_all(sq)
            })),
            ("log_softmax", Box::new(|s, t, p| {
                let x = t.param(s, p);
                let y = t.log_softmax_rows(x);
                t.mean_pick_neg(y, &[(0, 1), (1, 3), (2, 0)])
            })),
            ("mul_scale_sub", Box::new(|s, t, p| {
                let x = t.param(s, p);
                let a = t.scale(x, 1.7);
                let b = t.mul(x, a);
                let c = t.sub(b, x);
                t.mean_all(c)
            })),
            ("concat_slice", Box::new(|s, t, p| {
                let x = t.param(s, p);
                let left = t.slice_cols(x, 0, 2);
                let right = t.slice_cols(x, 2, 2);
                let swapped = t.concat_cols(&[right, left]);
                let y = t.mul(swapped, swapped);
                t.mean_all(y)
            })),
            ("gather_scatter", Box::new(|s, t, p| {
                let x = t.param(s, p);
                let g = t.gather_rows(x, &[0, 0, 3, 5]);
                let sc = t.scatter_rows(g, &[1, 2, 0, 3], 4);
                let y = t.mul(sc, sc);
                t.mean_all(y)
            })),
            ("segment_mean", Box::new(|s, t, p| {
                let x = t.param(s, p);
                let y = t.segment_reduce(x, &[0, 1, 0, 2, 1, 0], 4, PoolMode::Mean);
                let sq = t.mul(y, y);
                t.mean_all(sq)
            })),
            ("segment_sum", Box::new(|s, t, p| {
                let x = t.param(s, p);
                let y = t.segment_sum(x, &[0, 1, 0, 2, 1, 0], 3);
                let sq = t.mul(y, y);
                t.mean_all(sq)
            })),
            ("segment_max", Box::new(|s, t, p| {
                let x = t.param(s, p);
                let y = t.segment_reduce(x, &[0, 1, 0, 1, 0, 1], 2, PoolMode::Max);
                let sq = t.mul(y, y);
                t.mean_all(sq)
            })),
            ("max_pool_groups", Box::new(|s, t, p| {
                let x = t.param(s, p);
                let y = t.pool_groups(x, 3, PoolMode::Max);
                let sq = t.mul(y, y);
                t.mean_all(sq)
            })),
            ("mean_pool_groups", Box::new(|s, t, p| {
                let x = t.param(s, p);
                let y = t.pool_groups(x, 2, PoolMode::Mean);
                let sq = t.mul(y, y);
                t.mean_all(sq)
            })),
            ("layer_norm", Box::new(|s, t, p| {
                let x = t.param(s, p);
                let y = t.layer_norm_rows(x, 1e-5);
                let sq = t.mul(y, y);
                let z = t.tanh(sq);
                t.mean_all(z)
            })),
        ];

        for (name, mut build) in cases {
            let mut state = ModelState::new();
            let p = state.add("x", rand_tensor(&mut rng, rows, cols), true);
            let report = grad_check(&mut state, |s, t| build(s, t, p), 1e-5, None);
            assert!(
                report.max_rel_error < 1e-6,
                "op {name}: max rel error {} at {:?}",
                report.max_rel_error,
                report.worst
            );
        }
    }

    #[test]
    fn linear_and_edge_matvec_and_stn_grads() {
        let mut rng = Rng::seed_from(8);
        let mut state = ModelState::new();
        let w = state.add("w", rand_tensor(&mut rng, 4, 5), true);
        let b = state.add("b", rand_tensor(&mut rng, 1, 5), true);
        let theta = state.add("theta", rand_tensor(&mut rng, 3, 9), true);
        let hmat = state.add("h", rand_tensor(&mut rng, 3, 3), true);
        let xy = state.add("xy", rand_tensor(&mut rng, 6, 2), true);
        let phi = state.add("phi", rand_tensor(&mut rng, 2, 4), true);
        let x_in = rand_tensor(&mut rng, 6, 4);
        let report = grad_check(
            &mut state,
            |state, tape| {
                let x = tape.input(x_in.clone());
                let wn = tape.param(state, w);
                let bn = tape.param(state, b);
                let lin = tape.linear(x, wn, Some(bn));
                let l1 = tape.mean_all(lin);

                let tn = tape.param(state, theta);
                let hn = tape.param(state, hmat);
                let mv = tape.edge_matvec(tn, hn);
                let sq = tape.mul(mv, mv);
                let l2 = tape.mean_all(sq);

                let xyn = tape.param(state, xy);
                let phin = tape.param(state, phi);
                let tr = tape.residual_transform2(xyn, phin, 3);
                let sq2 = tape.mul(tr, tr);
                let l3 = tape.mean_all(sq2);

                let s1 = tape.add(l1, l2);
                tape.add(s1, l3)
            },
            1e-5,
            None,
        );
        assert!(report.max_rel_error < 1e-6, "{:?}", report.worst);
    }

    #[test]
    fn batch_norm_train_mode_grads() {
        let mut rng = Rng::seed_from(9);
        let mut state = ModelState::new();
        let x = state.add("x", rand_tensor(&mut rng, 8, 3), true);
        let gamma = state.add("gamma", rand_tensor(&mut rng, 1, 3), true);
        let beta = state.add("beta", rand_tensor(&mut rng, 1, 3), true);
        let rm = state.add("rm", Tensor::zeros(1, 3), false);
        let rv = state.add("rv", Tensor::from_vec(1, 3, vec![1.0; 3]), false);
        // weight the output by a generic fixed tensor: with a symmetric loss
        // like mean(y^2) the normalization makes the true x-gradient nearly
        // zero and finite differences lose all significant digits
        let downstream = rand_tensor(&mut rng, 8, 3);
        let report = grad_check(
            &mut state,
            |state, tape| {
                let xn = tape.param(state, x);
                let gn = tape.param(state, gamma);
                let bn = tape.param(state, beta);
                let y = tape.batch_norm(state, xn, gn, bn, rm, rv, true);
                let r = tape.input(downstream.clone());
                let weighted = tape.mul(y, r);
                let sq = tape.tanh(weighted);
                tape.mean_all(sq)
            },
            1e-5,
            None,
        );
        assert!(report.max_rel_error < 1e-6, "{:?}", report.worst);
    }

    #[test]
    fn batch_norm_eval_mode_uses_running_stats() {
        let mut rng = Rng::seed_from(10);
        let mut state = ModelState::new();
        let x = state.add("x", rand_tensor(&mut rng, 4, 2), true);
        let gamma = state.add("gamma", Tensor::from_vec(1, 2, vec![1.0, 2.0]), true);
        let beta = state.add("beta", Tensor::from_vec(1, 2, vec![0.5, -0.5]), true);
        let rm = state.add("rm", Tensor::from_vec(1, 2, vec![0.25, -0.75]), false);
        let rv = state.add("rv", Tensor::from_vec(1, 2, vec![2.0, 0.5]), false);
        let report = grad_check(
            &mut state,
            |state, tape| {
                let xn = tape.param(state, x);
                let gn = tape.param(state, gamma);
                let bn = tape.param(state, beta);
                let y = tape.batch_norm(state, xn, gn, bn, rm, rv, false);
                let sq = tape.mul(y, y);
                tape.mean_all(sq)
            },
            1e-5,
            None,
        );
        assert!(report.max_rel_error < 1e-6, "{:?}", report.worst);
    }

    #[test]
    fn running_stats_update_with_momentum() {
        let mut state = ModelState::new();
        let gamma = state.add("gamma", Tensor::from_vec(1, 1, vec![1.0]), true);
        let beta = state.add("beta", Tensor::from_vec(1, 1, vec![0.0]), true);
        let rm = state.add("rm", Tensor::scalar(0.0), false);
        let rv = state.add("rv", Tensor::scalar(1.0), false);
        let mut tape = Tape::new();
        let x = tape.input(Tensor::from_vec(2, 1, vec![1.0, 3.0]));
        let gn = tape.param(&state, gamma);
        let bn = tape.param(&state, beta);
        let _ = tape.batch_norm(&state, x, gn, bn, rm, rv, true);
        tape.apply_bn_updates(&mut state, 0.9);
        // batch mean 2, batch var 1
        assert!((state.get(rm).value.data[0] - 0.2).abs() < 1e-12);
        assert!((state.get(rv).value.data[0] - (0.9 + 0.1)).abs() < 1e-12);
    }
}
