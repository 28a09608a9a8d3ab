//! Reverse-mode automatic differentiation over a linear tape of recorded
//! operations. The backward pass replays the tape in exact reverse order
//! and accumulates parameter gradients into the model state.

use rayon::prelude::*;

use super::{ModelState, ParamId, Tensor};

pub type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolMode {
    Max,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SegMode {
    Mean,
    Sum,
    Max,
}

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(ParamId),
    /// x (N x I) @ w (I x O) [+ b (1 x O)]
    Linear { x: NodeId, w: NodeId, b: Option<NodeId> },
    Relu { x: NodeId },
    Tanh { x: NodeId },
    Sigmoid { x: NodeId },
    SoftmaxRows { x: NodeId },
    LogSoftmaxRows { x: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Scale { x: NodeId, c: f64 },
    ConcatCols { parts: Vec<NodeId> },
    SliceCols { x: NodeId, start: usize, len: usize },
    GatherRows { x: NodeId, idx: Vec<usize> },
    /// place rows of x at the given indices of an otherwise-zero matrix
    ScatterRows { x: NodeId, idx: Vec<usize> },
    /// rows grouped by seg id; Mean divides by the segment size, empty segments stay zero
    SegmentReduce { x: NodeId, seg: Vec<usize>, segments: usize, mode: SegMode, argmax: Vec<usize> },
    /// contiguous groups of `group` rows pooled to one row each
    PoolGroups { x: NodeId, group: usize, mode: PoolMode, argmax: Vec<usize> },
    /// y = gamma * (x - m) / sqrt(v + eps) + beta, per column; in eval
    /// mode the statistics are constants w.r.t. x
    BatchNorm { x: NodeId, gamma: NodeId, beta: NodeId, mean: Vec<f64>, var: Vec<f64>, eps: f64, train: bool },
    /// rho(a) = (a - mean(a)) / (std(a) + eps), per row
    LayerNormRows { x: NodeId, eps: f64, mean: Vec<f64>, std: Vec<f64> },
    /// per-row matrix-vector product: theta row (C*C) reshaped times h row (C)
    EdgeMatVec { theta: NodeId, h: NodeId },
    /// xy (B*g x 2) transformed by per-group residual 2x2: (I + Phi_b) xy
    ResidualTransform2 { xy: NodeId, phi: NodeId, group: usize },
    MeanAll { x: NodeId },
    /// -mean over picks of x[row, col]
    MeanPickNeg { x: NodeId, picks: Vec<(usize, usize)> },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Records batch-norm batch statistics so the caller can fold them into
/// running statistics after the step.
#[derive(Debug, Clone)]
pub struct BnBatchStats {
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    pub bn_updates: Vec<BnBatchStats>,
}

const BN_EPS: f64 = 1e-5;

fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.cols, b.rows, "matmul shape mismatch");
    let mut out = Tensor::zeros(a.rows, b.cols);
    let cols = b.cols;
    let inner = a.cols;
    if a.rows >= 64 {
        out.data
            .par_chunks_mut(cols)
            .enumerate()
            .for_each(|(i, orow)| {
                for k in 0..inner {
                    let aik = a.data[i * inner + k];
                    if aik != 0.0 {
                        let brow = &b.data[k * cols..(k + 1) * cols];
                        for (o, &bv) in orow.iter_mut().zip(brow) {
                            *o += aik * bv;
                        }
                    }
                }
            });
    } else {
        for i in 0..a.rows {
            let orow = &mut out.data[i * cols..(i + 1) * cols];
            for k in 0..inner {
                let aik = a.data[i * inner + k];
                if aik != 0.0 {
                    let brow = &b.data[k * cols..(k + 1) * cols];
                    for (o, &bv) in orow.iter_mut().zip(brow) {
                        *o += aik * bv;
                    }
                }
            }
        }
    }
    out
}

fn matmul_at_b(a: &Tensor, b: &Tensor) -> Tensor {
    // a^T @ b without materializing the transpose
    assert_eq!(a.rows, b.rows);
    let mut out = Tensor::zeros(a.cols, b.cols);
    if a.rows >= 256 && a.cols >= 8 {
        out.data
            .par_chunks_mut(b.cols)
            .enumerate()
            .for_each(|(k, orow)| {
                for i in 0..a.rows {
                    let av = a.data[i * a.cols + k];
                    if av != 0.0 {
                        let brow = &b.data[i * b.cols..(i + 1) * b.cols];
                        for (o, &bv) in orow.iter_mut().zip(brow) {
                            *o += av * bv;
                        }
                    }
                }
            });
    } else {
        for i in 0..a.rows {
            let arow = a.row(i);
            let brow = b.row(i);
            for (k, &av) in arow.iter().enumerate() {
                if av != 0.0 {
                    let orow = &mut out.data[k * b.cols..(k + 1) * b.cols];
                    for (o, &bv) in orow.iter_mut().zip(brow) {
                        *o += av * bv;
                    }
                }
            }
        }
    }
    out
}

fn matmul_a_bt(a: &Tensor, b: &Tensor) -> Tensor {
    // a @ b^T
    assert_eq!(a.cols, b.cols);
    let mut out = Tensor::zeros(a.rows, b.rows);
    if a.rows >= 256 {
        out.data
            .par_chunks_mut(b.rows)
            .enumerate()
            .for_each(|(i, orow)| {
                let arow = &a.data[i * a.cols..(i + 1) * a.cols];
                for (j, o) in orow.iter_mut().enumerate() {
                    let brow = &b.data[j * b.cols..(j + 1) * b.cols];
                    let mut s = 0.0;
                    for (x, y) in arow.iter().zip(brow) {
                        s += x * y;
                    }
                    *o = s;
                }
            });
    } else {
        for i in 0..a.rows {
            let arow = a.row(i);
            for j in 0..b.rows {
                let brow = b.row(j);
                let mut s = 0.0;
                for (x, y) in arow.iter().zip(brow) {
                    s += x * y;
                }
                out.data[i * b.rows + j] = s;
            }
        }
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Input)
    }

    pub fn param(&mut self, state: &ModelState, id: ParamId) -> NodeId {
        self.push(state.get(id).value.clone(), Op::Param(id))
    }

    pub fn linear(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> NodeId {
        let mut out = matmul(&self.nodes[x].value, &self.nodes[w].value);
        if let Some(b) = b {
            let bias = &self.nodes[b].value;
            assert_eq!(bias.rows, 1, "bias must be a row vector");
            assert_eq!(bias.cols, out.cols, "bias width mismatch");
            for i in 0..out.rows {
                for (o, &bv) in out.row_mut(i).iter_mut().zip(&bias.data) {
                    *o += bv;
                }
            }
        }
        self.push(out, Op::Linear { x, w, b })
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let mut v = self.nodes[x].value.clone();
        for e in &mut v.data {
            if *e < 0.0 {
                *e = 0.0;
            }
        }
        self.push(v, Op::Relu { x })
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let mut v = self.nodes[x].value.clone();
        for e in &mut v.data {
            *e = e.tanh();
        }
        self.push(v, Op::Tanh { x })
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let mut v = self.nodes[x].value.clone();
        for e in &mut v.data {
            *e = 1.0 / (1.0 + (-*e).exp());
        }
        self.push(v, Op::Sigmoid { x })
    }

    pub fn softmax_rows(&mut self, x: NodeId) -> NodeId {
        let xv = &self.nodes[x].value;
        let mut v = Tensor::zeros(xv.rows, xv.cols);
        for i in 0..xv.rows {
            let row = xv.row(i);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (o, &e) in v.row_mut(i).iter_mut().zip(row) {
                *o = (e - m).exp();
                sum += *o;
            }
            for o in v.row_mut(i) {
                *o /= sum;
            }
        }
        self.push(v, Op::SoftmaxRows { x })
    }

    pub fn log_softmax_rows(&mut self, x: NodeId) -> NodeId {
        let xv = &self.nodes[x].value;
        let mut v = Tensor::zeros(xv.rows, xv.cols);
        for i in 0..xv.rows {
            let row = xv.row(i);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|&e| (e - m).exp()).sum::<f64>().ln();
            for (o, &e) in v.row_mut(i).iter_mut().zip(row) {
                *o = e - lse;
            }
        }
        self.push(v, Op::LogSoftmaxRows { x })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (&self.nodes[a].value, &self.nodes[b].value);
        assert!(av.same_shape(bv), "add shape mismatch");
        let data = av.data.iter().zip(&bv.data).map(|(x, y)| x + y).collect();
        self.push(Tensor::from_vec(av.rows, av.cols, data), Op::Add { a, b })
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (&self.nodes[a].value, &self.nodes[b].value);
        assert!(av.same_shape(bv), "sub shape mismatch");
        let data = av.data.iter().zip(&bv.data).map(|(x, y)| x - y).collect();
        self.push(Tensor::from_vec(av.rows, av.cols, data), Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (av, bv) = (&self.nodes[a].value, &self.nodes[b].value);
        assert!(av.same_shape(bv), "elementwise mul shape mismatch");
        let data = av.data.iter().zip(&bv.data).map(|(x, y)| x * y).collect();
        self.push(Tensor::from_vec(av.rows, av.cols, data), Op::Mul { a, b })
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let xv = &self.nodes[x].value;
        let data = xv.data.iter().map(|v| v * c).collect();
        self.push(Tensor::from_vec(xv.rows, xv.cols, data), Op::Scale { x, c })
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let rows = self.nodes[parts[0]].value.rows;
        let cols: usize = parts.iter().map(|&p| self.nodes[p].value.cols).sum();
        let mut out = Tensor::zeros(rows, cols);
        for i in 0..rows {
            let mut at = 0;
            for &p in parts {
                let pv = &self.nodes[p].value;
                assert_eq!(pv.rows, rows, "concat row mismatch");
                out.data[i * cols + at..i * cols + at + pv.cols].copy_from_slice(pv.row(i));
                at += pv.cols;
            }
        }
        self.push(out, Op::ConcatCols { parts: parts.to_vec() })
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> NodeId {
        let xv = &self.nodes[x].value;
        assert!(start + len <= xv.cols);
        let mut out = Tensor::zeros(xv.rows, len);
        for i in 0..xv.rows {
            out.row_mut(i).copy_from_slice(&xv.row(i)[start..start + len]);
        }
        self.push(out, Op::SliceCols { x, start, len })
    }

    pub fn gather_rows(&mut self, x: NodeId, idx: &[usize]) -> NodeId {
        let xv = &self.nodes[x].value;
        let mut out = Tensor::zeros(idx.len(), xv.cols);
        for (i, &r) in idx.iter().enumerate() {
            out.row_mut(i).copy_from_slice(xv.row(r));
        }
        self.push(out, Op::GatherRows { x, idx: idx.to_vec() })
    }

    pub fn scatter_rows(&mut self, x: NodeId, idx: &[usize], rows: usize) -> NodeId {
        let xv = &self.nodes[x].value;
        assert_eq!(xv.rows, idx.len());
        let mut out = Tensor::zeros(rows, xv.cols);
        for (i, &r) in idx.iter().enumerate() {
            out.row_mut(r).copy_from_slice(xv.row(i));
        }
        self.push(out, Op::ScatterRows { x, idx: idx.to_vec() })
    }

    /// Reduce rows by segment id. Mean of an empty segment is zero.
    /// Max gradient routes to the first maximal element of each segment.
    pub fn segment_reduce(&mut self, x: NodeId, seg: &[usize], segments: usize, mode: PoolMode) -> NodeId {
        let mode = match mode {
            PoolMode::Mean => SegMode::Mean,
            PoolMode::Max => SegMode::Max,
        };
        self.segment_reduce_inner(x, seg, segments, mode)
    }

    /// Sum rows by segment id (no averaging).
    pub fn segment_sum(&mut self, x: NodeId, seg: &[usize], segments: usize) -> NodeId {
        self.segment_reduce_inner(x, seg, segments, SegMode::Sum)
    }

    fn segment_reduce_inner(&mut self, x: NodeId, seg: &[usize], segments: usize, mode: SegMode) -> NodeId {
        let xv = &self.nodes[x].value;
        assert_eq!(xv.rows, seg.len());
        let cols = xv.cols;
        let mut out = Tensor::zeros(segments, cols);
        let mut argmax = Vec::new();
        match mode {
            SegMode::Mean | SegMode::Sum => {
                let mut counts = vec![0usize; segments];
                for (r, &s) in seg.iter().enumerate() {
                    counts[s] += 1;
                    for (o, &v) in out.row_mut(s).iter_mut().zip(xv.row(r)) {
                        *o += v;
                    }
                }
                if mode == SegMode::Mean {
                    for s in 0..segments {
                        if counts[s] > 0 {
                            for o in out.row_mut(s) {
                                *o /= counts[s] as f64;
                            }
                        }
                    }
                }
            }
            SegMode::Max => {
                argmax = vec![usize::MAX; segments * cols];
                for (r, &s) in seg.iter().enumerate() {
                    for (c, &v) in xv.row(r).iter().enumerate() {
                        let slot = s * cols + c;
                        if argmax[slot] == usize::MAX || v > out.data[slot] {
                            out.data[slot] = v;
                            argmax[slot] = r;
                        }
                    }
                }
                for slot in 0..segments * cols {
                    if argmax[slot] == usize::MAX {
                        out.data[slot] = 0.0;
                    }
                }
            }
        }
        self.push(out, Op::SegmentReduce { x, seg: seg.to_vec(), segments, mode, argmax })
    }

    /// Pool contiguous groups of `group` rows into one output row each.
    pub fn pool_groups(&mut self, x: NodeId, group: usize, mode: PoolMode) -> NodeId {
        let xv = &self.nodes[x].value;
        assert!(group > 0 && xv.rows % group == 0, "rows not divisible by group size");
        let out_rows = xv.rows / group;
        let cols = xv.cols;
        let mut out = Tensor::zeros(out_rows, cols);
        let mut argmax = Vec::new();
        match mode {
            PoolMode::Mean => {
                for g in 0..out_rows {
                    for r in g * group..(g + 1) * group {
                        for (o, &v) in out.row_mut(g).iter_mut().zip(xv.row(r)) {
                            *o += v;
                        }
                    }
                    for o in out.row_mut(g) {
                        *o /= group as f64;
                    }
                }
            }
            PoolMode::Max => {
                argmax = vec![usize::MAX; out_rows * cols];
                for g in 0..out_rows {
                    for r in g * group..(g + 1) * group {
                        for (c, &v) in xv.row(r).iter().enumerate() {
                            let slot = g * cols + c;
                            if argmax[slot] == usize::MAX || v > out.data[slot] {
                                out.data[slot] = v;
                                argmax[slot] = r;
                            }
                        }
                    }
                }
            }
        }
        self.push(out, Op::PoolGroups { x, group, mode, argmax })
    }

    /// Batch normalization over the row (batch) dimension. In training
    /// mode the batch statistics are used and recorded for the running
    /// averages; in eval mode the stored running statistics are used.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &mut self,
        state: &ModelState,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        running_mean: ParamId,
        running_var: ParamId,
        train: bool,
    ) -> NodeId {
        let xv = &self.nodes[x].value;
        let cols = xv.cols;
        let n = xv.rows as f64;
        let (mean, var) = if train {
            let mut mean = vec![0.0; cols];
            let mut var = vec![0.0; cols];
            for i in 0..xv.rows {
                for (m, &v) in mean.iter_mut().zip(xv.row(i)) {
                    *m += v;
                }
            }
            for m in &mut mean {
                *m /= n;
            }
            for i in 0..xv.rows {
                for (c, &v) in xv.row(i).iter().enumerate() {
                    let d = v - mean[c];
                    var[c] += d * d;
                }
            }
            for v in &mut var {
                *v /= n;
            }
            self.bn_updates.push(BnBatchStats {
                running_mean,
                running_var,
                mean: mean.clone(),
                var: var.clone(),
            });
            (mean, var)
        } else {
            (
                state.get(running_mean).value.data.clone(),
                state.get(running_var).value.data.clone(),
            )
        };
        let gv = &self.nodes[gamma].value;
        let bv = &self.nodes[beta].value;
        assert_eq!(gv.cols, cols);
        assert_eq!(bv.cols, cols);
        let mut out = Tensor::zeros(xv.rows, cols);
        for i in 0..xv.rows {
            for c in 0..cols {
                let xhat = (xv.get(i, c) - mean[c]) / (var[c] + BN_EPS).sqrt();
                out.set(i, c, gv.data[c] * xhat + bv.data[c]);
            }
        }
        self.push(out, Op::BatchNorm { x, gamma, beta, mean, var, eps: BN_EPS, train })
    }

    /// rho(a) = (a - mean(a)) / (std(a) + eps) applied per row.
    pub fn layer_norm_rows(&mut self, x: NodeId, eps: f64) -> NodeId {
        let xv = &self.nodes[x].value;
        let cols = xv.cols as f64;
        let mut out = Tensor::zeros(xv.rows, xv.cols);
        let mut means = Vec::with_capacity(xv.rows);
        let mut stds = Vec::with_capacity(xv.rows);
        for i in 0..xv.rows {
            let row = xv.row(i);
            let m: f64 = row.iter().sum::<f64>() / cols;
            let v: f64 = row.iter().map(|&e| (e - m) * (e - m)).sum::<f64>() / cols;
            let s = v.sqrt();
            for (o, &e) in out.row_mut(i).iter_mut().zip(row) {
                *o = (e - m) / (s + eps);
            }
            means.push(m);
            stds.push(s);
        }
        self.push(out, Op::LayerNormRows { x, eps, mean: means, std: stds })
    }

    /// Per-row matrix-vector product: row e of theta holds a C x C matrix
    /// (row-major) applied to row e of h.
    pub fn edge_matvec(&mut self, theta: NodeId, h: NodeId) -> NodeId {
        let tv = &self.nodes[theta].value;
        let hv = &self.nodes[h].value;
        let c = hv.cols;
        assert_eq!(tv.cols, c * c, "theta rows must hold CxC matrices");
        assert_eq!(tv.rows, hv.rows);
        let mut out = Tensor::zeros(hv.rows, c);
        for e in 0..hv.rows {
            let m = tv.row(e);
            let x = hv.row(e);
            let o = out.row_mut(e);
            for i in 0..c {
                let mut s = 0.0;
                for (j, &xj) in x.iter().enumerate() {
                    s += m[i * c + j] * xj;
                }
                o[i] = s;
            }
        }
        self.push(out, Op::EdgeMatVec { theta, h })
    }

    /// Apply (I + Phi_b) to each XY row, where Phi_b is the 2x2 residual
    /// of the row's group (contiguous groups of `group` rows).
    pub fn residual_transform2(&mut self, xy: NodeId, phi: NodeId, group: usize) -> NodeId {
        let xv = &self.nodes[xy].value;
        let pv = &self.nodes[phi].value;
        assert_eq!(xv.cols, 2);
        assert_eq!(pv.cols, 4);
        assert_eq!(xv.rows, pv.rows * group);
        let mut out = Tensor::zeros(xv.rows, 2);
        for r in 0..xv.rows {
            let b = r / group;
            let p = pv.row(b);
            let (x, y) = (xv.get(r, 0), xv.get(r, 1));
            out.set(r, 0, (1.0 + p[0]) * x + p[1] * y);
            out.set(r, 1, p[2] * x + (1.0 + p[3]) * y);
        }
        self.push(out, Op::ResidualTransform2 { xy, phi, group })
    }

    pub fn mean_all(&mut self, x: NodeId) -> NodeId {
        let xv = &self.nodes[x].value;
        let m = xv.data.iter().sum::<f64>() / xv.len() as f64;
        self.push(Tensor::scalar(m), Op::MeanAll { x })
    }

    /// Negative mean of the picked entries; with log-probabilities as
    /// input this is the cross-entropy loss.
    pub fn mean_pick_neg(&mut self, x: NodeId, picks: &[(usize, usize)]) -> NodeId {
        assert!(!picks.is_empty());
        let xv = &self.nodes[x].value;
        let s: f64 = picks.iter().map(|&(r, c)| xv.get(r, c)).sum();
        self.push(
            Tensor::scalar(-s / picks.len() as f64),
            Op::MeanPickNeg { x, picks: picks.to_vec() },
        )
    }

    /// Reverse pass from a scalar output node; parameter gradients are
    /// accumulated into the model state.
    pub fn backward(&self, output: NodeId, state: &mut ModelState) {
        assert_eq!(self.nodes[output].value.len(), 1, "backward needs a scalar output");
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[output] = Some(Tensor::scalar(1.0));

        for id in (0..=output).rev() {
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            match &self.nodes[id].op {
                Op::Input => {}
                Op::Param(pid) => {
                    let p = state.get_mut(*pid);
                    for (pg, gv) in p.grad.data.iter_mut().zip(&g.data) {
                        *pg += gv;
                    }
                }
                Op::Linear { x, w, b } => {
                    let xv = &self.nodes[*x].value;
                    let wv = &self.nodes[*w].value;
                    let dx = matmul_a_bt(&g, wv);
                    let dw = matmul_at_b(xv, &g);
                    self.accum(&mut grads, *x, dx);
                    self.accum(&mut grads, *w, dw);
                    if let Some(b) = b {
                        let mut db = Tensor::zeros(1, g.cols);
                        for i in 0..g.rows {
                            for (o, &gv) in db.data.iter_mut().zip(g.row(i)) {
                                *o += gv;
                            }
                        }
                        self.accum(&mut grads, *b, db);
                    }
                }
                Op::Relu { x } => {
                    let xv = &self.nodes[*x].value;
                    let data = xv
                        .data
                        .iter()
                        .zip(&g.data)
                        .map(|(&x, &gv)| if x > 0.0 { gv } else { 0.0 })
                        .collect();
                    self.accum(&mut grads, *x, Tensor::from_vec(g.rows, g.cols, data));
                }
                Op::Tanh { x } => {
                    let yv = &self.nodes[id].value;
                    let data = yv.data.iter().zip(&g.data).map(|(&y, &gv)| gv * (1.0 - y * y)).collect();
                    self.accum(&mut grads, *x, Tensor::from_vec(g.rows, g.cols, data));
                }
                Op::Sigmoid { x } => {
                    let yv = &self.nodes[id].value;
                    let data = yv.data.iter().zip(&g.data).map(|(&y, &gv)| gv * y * (1.0 - y)).collect();
                    self.accum(&mut grads, *x, Tensor::from_vec(g.rows, g.cols, data));
                }
                Op::SoftmaxRows { x } => {
                    let yv = &self.nodes[id].value;
                    let mut dx = Tensor::zeros(g.rows, g.cols);
                    for i in 0..g.rows {
                        let y = yv.row(i);
                        let gr = g.row(i);
                        let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for (o, (&yj, &gj)) in dx.row_mut(i).iter_mut().zip(y.iter().zip(gr)) {
                            *o = yj * (gj - dot);
                        }
                    }
                    self.accum(&mut grads, *x, dx);
                }
                Op::LogSoftmaxRows { x } => {
                    let yv = &self.nodes[id].value;
                    let mut dx = Tensor::zeros(g.rows, g.cols);
                    for i in 0..g.rows {
                        let gsum: f64 = g.row(i).iter().sum();
                        for (o, (&lp, &gj)) in
                            dx.row_mut(i).iter_mut().zip(yv.row(i).iter().zip(g.row(i)))
                        {
                            *o = gj - lp.exp() * gsum;
                        }
                    }
                    self.accum(&mut grads, *x, dx);
                }
                Op::Add { a, b } => {
                    self.accum(&mut grads, *a, g.clone());
                    self.accum(&mut grads, *b, g);
                }
                Op::Sub { a, b } => {
                    self.accum(&mut grads, *a, g.clone());
                    let neg = Tensor::from_vec(g.rows, g.cols, g.data.iter().map(|v| -v).collect());
                    self.accum(&mut grads, *b, neg);
                }
                Op::Mul { a, b } => {
                    let av = &self.nodes[*a].value;
                    let bv = &self.nodes[*b].value;
                    let da = Tensor::from_vec(
                        g.rows,
                        g.cols,
                        g.data.iter().zip(&bv.data).map(|(gv, bv)| gv * bv).collect(),
                    );
                    let db = Tensor::from_vec(
                        g.rows,
                        g.cols,
                        g.data.iter().zip(&av.data).map(|(gv, av)| gv * av).collect(),
                    );
                    self.accum(&mut grads, *a, da);
                    self.accum(&mut grads, *b, db);
                }
                Op::Scale { x, c } => {
                    let data = g.data.iter().map(|v| v * c).collect();
                    self.accum(&mut grads, *x, Tensor::from_vec(g.rows, g.cols, data));
                }
                Op::ConcatCols { parts } => {
                    let mut at = 0;
                    for &p in parts {
                        let pc = self.nodes[p].value.cols;
                        let mut dp = Tensor::zeros(g.rows, pc);
                        for i in 0..g.rows {
                            dp.row_mut(i).copy_from_slice(&g.row(i)[at..at + pc]);
                        }
                        self.accum(&mut grads, p, dp);
                        at += pc;
                    }
                }
                Op::SliceCols { x, start, len } => {
                    let xv = &self.nodes[*x].value;
                    let mut dx = Tensor::zeros(xv.rows, xv.cols);
                    for i in 0..g.rows {
                        dx.row_mut(i)[*start..start + len].copy_from_slice(g.row(i));
                    }
                    self.accum(&mut grads, *x, dx);
                }
                Op::GatherRows { x, idx } => {
                    let xv = &self.nodes[*x].value;
                    let mut dx = Tensor::zeros(xv.rows, xv.cols);
                    for (i, &r) in idx.iter().enumerate() {
                        for (o, &gv) in dx.row_mut(r).iter_mut().zip(g.row(i)) {
                            *o += gv;
                        }
                    }
                    self.accum(&mut grads, *x, dx);
                }
                Op::ScatterRows { x, idx } => {
                    let mut dx = Tensor::zeros(idx.len(), g.cols);
                    for (i, &r) in idx.iter().enumerate() {
                        dx.row_mut(i).copy_from_slice(g.row(r));
                    }
                    self.accum(&mut grads, *x, dx);
                }
                Op::SegmentReduce { x, seg, segments, mode, argmax } => {
                    let xv = &self.nodes[*x].value;
                    let cols = xv.cols;
                    let mut dx = Tensor::zeros(xv.rows, cols);
                    match mode {
                        SegMode::Mean | SegMode::Sum => {
                            let mut counts = vec![0usize; *segments];
                            for &s in seg {
                                counts[s] += 1;
                            }
                            for (r, &s) in seg.iter().enumerate() {
                                let scale =
                                    if *mode == SegMode::Sum { 1.0 } else { 1.0 / counts[s] as f64 };
                                for (o, &gv) in dx.row_mut(r).iter_mut().zip(g.row(s)) {
                                    *o += gv * scale;
                                }
                            }
                        }
                        SegMode::Max => {
                            for s in 0..*segments {
                                for c in 0..cols {
                                    let r = argmax[s * cols + c];
                                    if r != usize::MAX {
                                        dx.data[r * cols + c] += g.get(s, c);
                                    }
                                }
                            }
                        }
                    }
                    self.accum(&mut grads, *x, dx);
                }
                Op::PoolGroups { x, group, mode, argmax } => {
                    let xv = &self.nodes[*x].value;
                    let cols = xv.cols;
                    let mut dx = Tensor::zeros(xv.rows, cols);
                    match mode {
                        PoolMode::Mean => {
                            for r in 0..xv.rows {
                                let gidx = r / group;
                                for (o, &gv) in dx.row_mut(r).iter_mut().zip(g.row(gidx)) {
                                    *o += gv / *group as f64;
                                }
                            }
                        }
                        PoolMode::Max => {
                            for gi in 0..g.rows {
                                for c in 0..cols {
                                    let r = argmax[gi * cols + c];
                                    if r != usize::MAX {
                                        dx.data[r * cols + c] += g.get(gi, c);
                                    }
                                }
                            }
                        }
                    }
                    self.accum(&mut grads, *x, dx);
                }
                Op::BatchNorm { x, gamma, beta, mean, var, eps, train } => {
                    let xv = &self.nodes[*x].value;
                    let gv = &self.nodes[*gamma].value;
                    let n = xv.rows as f64;
                    let cols = xv.cols;
                    let mut dgamma = Tensor::zeros(1, cols);
                    let mut dbeta = Tensor::zeros(1, cols);
                    let mut dx = Tensor::zeros(xv.rows, cols);
                    for c in 0..cols {
                        let inv_std = 1.0 / (var[c] + eps).sqrt();
                        let mut sum_dy = 0.0;
                        let mut sum_dy_xhat = 0.0;
                        for i in 0..xv.rows {
                            let xhat = (xv.get(i, c) - mean[c]) * inv_std;
                            let dy = g.get(i, c);
                            sum_dy += dy;
                            sum_dy_xhat += dy * xhat;
                            dgamma.data[c] += dy * xhat;
                            dbeta.data[c] += dy;
                        }
                        for i in 0..xv.rows {
                            let dy = g.get(i, c);
                            let v = if *train {
                                let xhat = (xv.get(i, c) - mean[c]) * inv_std;
                                gv.data[c] * inv_std * (dy - sum_dy / n - xhat * sum_dy_xhat / n)
                            } else {
                                gv.data[c] * inv_std * dy
                            };
                            dx.set(i, c, v);
                        }
                    }
                    self.accum(&mut grads, *x, dx);
                    self.accum(&mut grads, *gamma, dgamma);
                    self.accum(&mut grads, *beta, dbeta);
                }
                Op::LayerNormRows { x, eps, mean, std } => {
                    let xv = &self.nodes[*x].value;
                    let n = xv.cols as f64;
                    let mut dx = Tensor::zeros(xv.rows, xv.cols);
                    for i in 0..xv.rows {
                        let s = std[i];
                        let denom = s + eps;
                        let gr = g.row(i);
                        let gmean: f64 = gr.iter().sum::<f64>() / n;
                        let mut gdotc = 0.0;
                        for (c, &gv) in gr.iter().enumerate() {
                            gdotc += gv * (xv.get(i, c) - mean[i]);
                        }
                        for (c, o) in dx.row_mut(i).iter_mut().enumerate() {
                            let centered = xv.get(i, c) - mean[i];
                            let mut v = (gr[c] - gmean) / denom;
                            if s > 0.0 {
                                v -= centered * gdotc / (n * s * denom * denom);
                            }
                            *o = v;
                        }
                    }
                    self.accum(&mut grads, *x, dx);
                }
                Op::EdgeMatVec { theta, h } => {
                    let tv = &self.nodes[*theta].value;
                    let hv = &self.nodes[*h].value;
                    let c = hv.cols;
                    let mut dtheta = Tensor::zeros(tv.rows, tv.cols);
                    let mut dh = Tensor::zeros(hv.rows, hv.cols);
                    for e in 0..hv.rows {
                        let m = tv.row(e);
                        let x = hv.row(e);
                        let go = g.row(e);
                        let dt = dtheta.row_mut(e);
                        for i in 0..c {
                            for j in 0..c {
                                dt[i * c + j] += go[i] * x[j];
                            }
                        }
                        let dxr = dh.row_mut(e);
                        for j in 0..c {
                            let mut s = 0.0;
                            for (i, &gi) in go.iter().enumerate() {
                                s += gi * m[i * c + j];
                            }
                            dxr[j] = s;
                        }
                    }
                    self.accum(&mut grads, *theta, dtheta);
                    self.accum(&mut grads, *h, dh);
                }
                Op::ResidualTransform2 { xy, phi, group } => {
                    let xv = &self.nodes[*xy].value;
                    let pv = &self.nodes[*phi].value;
                    let mut dxy = Tensor::zeros(xv.rows, 2);
                    let mut dphi = Tensor::zeros(pv.rows, 4);
                    for r in 0..xv.rows {
                        let b = r / group;
                        let p = pv.row(b);
                        let (x, y) = (xv.get(r, 0), xv.get(r, 1));
                        let (g0, g1) = (g.get(r, 0), g.get(r, 1));
                        dxy.set(r, 0, g0 * (1.0 + p[0]) + g1 * p[2]);
                        dxy.set(r, 1, g0 * p[1] + g1 * (1.0 + p[3]));
                        let dp = dphi.row_mut(b);
                        dp[0] += g0 * x;
                        dp[1] += g0 * y;
                        dp[2] += g1 * x;
                        dp[3] += g1 * y;
                    }
                    self.accum(&mut grads, *xy, dxy);
                    self.accum(&mut grads, *phi, dphi);
                }
                Op::MeanAll { x } => {
                    let xv = &self.nodes[*x].value;
                    let gv = g.data[0] / xv.len() as f64;
                    self.accum(
                        &mut grads,
                        *x,
                        Tensor::from_vec(xv.rows, xv.cols, vec![gv; xv.len()]),
                    );
                }
                Op::MeanPickNeg { x, picks } => {
                    let xv = &self.nodes[*x].value;
                    let mut dx = Tensor::zeros(xv.rows, xv.cols);
                    let gv = -g.data[0] / picks.len() as f64;
                    for &(r, c) in picks {
                        dx.data[r * xv.cols + c] += gv;
                    }
                    self.accum(&mut grads, *x, dx);
                }
            }
        }
    }

    fn accum(&self, grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
        match &mut grads[id] {
            Some(acc) => {
                debug_assert!(acc.same_shape(&g));
                for (a, v) in acc.data.iter_mut().zip(&g.data) {
                    *a += v;
                }
            }
            slot => *slot = Some(g),
        }
    }

    /// Fold recorded batch statistics into the running statistics with the
    /// given momentum. Call once per training step.
    pub fn apply_bn_updates(&self, state: &mut ModelState, momentum: f64) {
        for u in &self.bn_updates {
            let rm = &mut state.get_mut(u.running_mean).value;
            for (r, &m) in rm.data.iter_mut().zip(&u.mean) {
                *r = momentum * *r + (1.0 - momentum) * m;
            }
            let rv = &mut state.get_mut(u.running_var).value;
            for (r, &v) in rv.data.iter_mut().zip(&u.var) {
                *r = momentum * *r + (1.0 - momentum) * v;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::zeros(2, 5));
        let y = tape.softmax_rows(x);
        for i in 0..2 {
            for &v in tape.value(y).row(i) {
                assert!((v - 0.2).abs() < 1e-15);
            }
            let sum: f64 = tape.value(y).row(i).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_kills_constant_rows() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::from_vec(1, 4, vec![3.0; 4]));
        let y = tape.layer_norm_rows(x, 1e-5);
        for &v in &tape.value(y).data {
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn layer_norm_output_is_centered() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::from_vec(1, 4, vec![1.0, 2.0, 3.0, 10.0]));
        let y = tape.layer_norm_rows(x, 1e-5);
        let mean: f64 = tape.value(y).data.iter().sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-10);
    }

    #[test]
    fn max_pool_grad_routes_to_first_max() {
        let mut state = ModelState::new();
        let pid = state.add("x", Tensor::from_vec(4, 1, vec![1.0, 3.0, 3.0, 0.0]), true);
        let mut tape = Tape::new();
        let x = tape.param(&state, pid);
        let pooled = tape.pool_groups(x, 4, PoolMode::Max);
        let loss = tape.mean_all(pooled);
        tape.backward(loss, &mut state);
        // ties go to the lowest row index
        assert_eq!(state.get(pid).grad.data, vec![0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn max_pool_is_permutation_invariant() {
        let mut tape = Tape::new();
        let a = tape.input(Tensor::from_vec(3, 2, vec![1.0, 5.0, 2.0, 4.0, 3.0, 0.0]));
        let b = tape.input(Tensor::from_vec(3, 2, vec![3.0, 0.0, 1.0, 5.0, 2.0, 4.0]));
        let pa = tape.pool_groups(a, 3, PoolMode::Max);
        let pb = tape.pool_groups(b, 3, PoolMode::Max);
        assert_eq!(tape.value(pa).data, tape.value(pb).data);
    }

    #[test]
    fn segment_mean_empty_segment_is_zero() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::from_vec(2, 2, vec![2.0, 4.0, 6.0, 8.0]));
        let y = tape.segment_reduce(x, &[2, 2], 3, PoolMode::Mean);
        assert_eq!(tape.value(y).row(0), &[0.0, 0.0]);
        assert_eq!(tape.value(y).row(1), &[0.0, 0.0]);
        assert_eq!(tape.value(y).row(2), &[4.0, 6.0]);
    }

    #[test]
    fn linear_known_values() {
        let mut state = ModelState::new();
        let w = state.add("w", Tensor::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]), true);
        let b = state.add("b", Tensor::from_vec(1, 2, vec![10.0, 20.0]), true);
        let mut tape = Tape::new();
        let x = tape.input(Tensor::from_vec(1, 2, vec![1.0, 1.0]));
        let wn = tape.param(&state, w);
        let bn = tape.param(&state, b);
        let y = tape.linear(x, wn, Some(bn));
        assert_eq!(tape.value(y).data, vec![14.0, 26.0]);
    }
}
