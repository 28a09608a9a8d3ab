//! The generalized minimal partition: fit a piecewise-constant vector
//! field over a weighted graph, paying a squared fidelity per node and a
//! constant price per cut edge. Solved approximately by l0 cut pursuit
//! (recursive binary graph-cut splits plus a merge pass), with an
//! exhaustive oracle for small instances.

mod maxflow;

pub use maxflow::{max_flow_min_cut, CutProblem, CutResult};

use crate::error::{Error, Result};
use crate::graphs::AdjacencyGraph;

/// Row-major node feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeFeatures {
    pub dim: usize,
    pub data: Vec<f64>,
}

impl NodeFeatures {
    pub fn new(dim: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len() % dim.max(1), 0);
        NodeFeatures { dim, data }
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

#[derive(Debug, Clone)]
pub struct PartitionProblem {
    pub graph: AdjacencyGraph,
    pub features: NodeFeatures,
    pub mu: f64,
}

#[derive(Debug, Clone)]
pub struct PartitionSolution {
    pub component_of: Vec<u32>,
    /// Per-component feature mean, row-major (component count x dim).
    pub component_values: NodeFeatures,
    pub energy: f64,
}

impl PartitionSolution {
    pub fn component_count(&self) -> usize {
        self.component_values.len()
    }

    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.component_count()];
        for (i, &c) in self.component_of.iter().enumerate() {
            out[c as usize].push(i);
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CutPursuitOpts {
    pub max_outer: usize,
    pub split_iters: usize,
    pub merge: bool,
    pub tol: f64,
}

impl Default for CutPursuitOpts {
    fn default() -> Self {
        CutPursuitOpts { max_outer: 10, split_iters: 5, merge: true, tol: 1e-6 }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Connected components of the whole graph, ids assigned in order of the
/// smallest member index.
fn connected_components(graph: &AdjacencyGraph) -> Vec<u32> {
    let adj = graph.neighbor_lists();
    let mut comp = vec![u32::MAX; graph.node_count];
    let mut next = 0u32;
    let mut stack = Vec::new();
    for start in 0..graph.node_count {
        if comp[start] != u32::MAX {
            continue;
        }
        comp[start] = next;
        stack.push(start);
        while let Some(u) = stack.pop() {
            for &(v, _) in &adj[u] {
                if comp[v] == u32::MAX {
                    comp[v] = next;
                    stack.push(v);
                }
            }
        }
        next += 1;
    }
    comp
}

fn component_means(features: &NodeFeatures, component_of: &[u32], count: usize) -> NodeFeatures {
    let d = features.dim;
    let mut sums = vec![0.0; count * d];
    let mut sizes = vec![0usize; count];
    for (i, &c) in component_of.iter().enumerate() {
        let row = features.row(i);
        let acc = &mut sums[c as usize * d..(c as usize + 1) * d];
        for (a, v) in acc.iter_mut().zip(row) {
            *a += v;
        }
        sizes[c as usize] += 1;
    }
    for c in 0..count {
        let n = sizes[c].max(1) as f64;
        for v in &mut sums[c * d..(c + 1) * d] {
            *v /= n;
        }
    }
    NodeFeatures::new(d, sums)
}

fn check_components_connected(graph: &AdjacencyGraph, component_of: &[u32]) -> Result<()> {
    let count = component_of.iter().map(|&c| c as usize + 1).max().unwrap_or(0);
    let adj = graph.neighbor_lists();
    let mut seen = vec![false; graph.node_count];
    let mut first_of = vec![usize::MAX; count];
    for (i, &c) in component_of.iter().enumerate() {
        if first_of[c as usize] == usize::MAX {
            first_of[c as usize] = i;
        }
    }
    let mut stack = Vec::new();
    for (c, &start) in first_of.iter().enumerate() {
        if start == usize::MAX {
            continue;
        }
        stack.push(start);
        seen[start] = true;
        while let Some(u) = stack.pop() {
            for &(v, _) in &adj[u] {
                if !seen[v] && component_of[v] as usize == c {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
    }
    match seen.iter().position(|&s| !s) {
        Some(i) => Err(Error::contract(format!(
            "component {} is disconnected (node {} unreachable)",
            component_of[i], i
        ))),
        None => Ok(()),
    }
}

/// The partition objective with the field fixed to per-component means:
/// sum of squared residuals plus `mu` times the weight of cut edges.
/// Components must be connected in the graph.
pub fn energy(problem: &PartitionProblem, component_of: &[u32]) -> Result<f64> {
    if component_of.len() != problem.graph.node_count {
        return Err(Error::contract("component assignment length mismatch"));
    }
    check_components_connected(&problem.graph, component_of)?;
    Ok(energy_unchecked(problem, component_of))
}

fn energy_unchecked(problem: &PartitionProblem, component_of: &[u32]) -> f64 {
    let count = component_of.iter().map(|&c| c as usize + 1).max().unwrap_or(0);
    let means = component_means(&problem.features, component_of, count);
    let mut total = 0.0;
    for (i, &c) in component_of.iter().enumerate() {
        total += sq_dist(problem.features.row(i), means.row(c as usize));
    }
    for e in &problem.graph.edges {
        if component_of[e.a] != component_of[e.b] {
            total += problem.mu * e.weight;
        }
    }
    total
}

struct CompStats {
    size: usize,
    sum: Vec<f64>,
    sum_sq: f64,
}

impl CompStats {
    fn fidelity(&self) -> f64 {
        // sum ||f - mean||^2 = sum ||f||^2 - n ||mean||^2
        if self.size == 0 {
            return 0.0;
        }
        let n = self.size as f64;
        let mean_sq: f64 = self.sum.iter().map(|s| (s / n) * (s / n)).sum();
        (self.sum_sq - n * mean_sq).max(0.0)
    }
}

fn stats_of(features: &NodeFeatures, members: &[usize]) -> CompStats {
    let d = features.dim;
    let mut sum = vec![0.0; d];
    let mut sum_sq = 0.0;
    for &i in members {
        for (a, v) in sum.iter_mut().zip(features.row(i)) {
            *a += v;
        }
        sum_sq += features.row(i).iter().map(|v| v * v).sum::<f64>();
    }
    CompStats { size: members.len(), sum, sum_sq }
}

/// Seed pair for a binary split: the two members farthest apart in
/// feature space (exact for small components, double-sweep heuristic for
/// large ones).
fn farthest_pair(features: &NodeFeatures, members: &[usize]) -> (usize, usize, f64) {
    if members.len() <= 192 {
        let mut best = (members[0], members[0], 0.0);
        for (ai, &a) in members.iter().enumerate() {
            for &b in &members[ai + 1..] {
                let d = sq_dist(features.row(a), features.row(b));
                if d > best.2 {
                    best = (a, b, d);
                }
            }
        }
        best
    } else {
        let d = features.dim;
        let stats = stats_of(features, members);
        let mean: Vec<f64> = stats.sum.iter().map(|s| s / stats.size as f64).collect();
        let far_from = |anchor: &[f64]| -> (usize, f64) {
            let mut best = (members[0], -1.0);
            for &i in members {
                let dist = sq_dist(features.row(i), anchor);
                if dist > best.1 {
                    best = (i, dist);
                }
            }
            best
        };
        let _ = d;
        let (a, _) = far_from(&mean);
        let (b, _) = far_from(features.row(a));
        let (c, dist) = far_from(features.row(b));
        if c == b {
            (a, b, sq_dist(features.row(a), features.row(b)))
        } else {
            (b, c, dist)
        }
    }
}

/// Approximate minimizer of the partition objective by l0 cut pursuit:
/// start from one component per connected graph component, repeatedly
/// attempt binary graph-cut splits (alternating centroid refits), accept
/// moves only when the global energy strictly decreases, and optionally
/// merge adjacent components back when that pays off.
pub fn cut_pursuit(problem: &PartitionProblem, opts: &CutPursuitOpts) -> PartitionSolution {
    let n = problem.graph.node_count;
    let d = problem.features.dim;
    let mu = problem.mu;
    let adj = problem.graph.neighbor_lists();

    let mut comp_of = connected_components(&problem.graph);
    let mut comp_members: Vec<Vec<usize>> = {
        let count = comp_of.iter().map(|&c| c as usize + 1).max().unwrap_or(0);
        let mut m = vec![Vec::new(); count];
        for (i, &c) in comp_of.iter().enumerate() {
            m[c as usize].push(i);
        }
        m
    };

    // scratch: local index within the component being split
    let mut local = vec![usize::MAX; n];
    let mut side = vec![false; n];

    for _outer in 0..opts.max_outer {
        let mut changed = false;

        // split pass over the components present at the start of the pass
        let comp_ids: Vec<usize> = (0..comp_members.len()).collect();
        for c in comp_ids {
            let members = comp_members[c].clone();
            if members.len() < 2 {
                continue;
            }
            let (seed_a, seed_b, seed_dist) = farthest_pair(&problem.features, &members);
            if seed_dist <= 0.0 {
                continue; // constant features: no split can pay
            }
            let mut cent_a: Vec<f64> = problem.features.row(seed_a).to_vec();
            let mut cent_b: Vec<f64> = problem.features.row(seed_b).to_vec();

            // intra-component edges with their weights
            let mut intra: Vec<(usize, usize, f64)> = Vec::new();
            for (li, &i) in members.iter().enumerate() {
                local[i] = li;
            }
            for &i in &members {
                for &(j, w) in &adj[i] {
                    if comp_of[j] == comp_of[members[0]] && i < j {
                        intra.push((local[i], local[j], mu * w));
                    }
                }
            }

            let m = members.len();
            let mut labels = vec![false; m]; // false = A, true = B
            for _ in 0..opts.split_iters {
                if mu > 0.0 && !intra.is_empty() {
                    let source_cap: Vec<f64> =
                        members.iter().map(|&i| sq_dist(problem.features.row(i), &cent_b)).collect();
                    let sink_cap: Vec<f64> =
                        members.iter().map(|&i| sq_dist(problem.features.row(i), &cent_a)).collect();
                    let cut = max_flow_min_cut(&CutProblem {
                        node_count: m,
                        edges: intra.clone(),
                        source_cap,
                        sink_cap,
                    })
                    .expect("capacities are finite and nonnegative");
                    for (li, &on_source) in cut.source_side.iter().enumerate() {
                        labels[li] = !on_source; // source side carries label A
                    }
                } else {
                    for (li, &i) in members.iter().enumerate() {
                        let da = sq_dist(problem.features.row(i), &cent_a);
                        let db = sq_dist(problem.features.row(i), &cent_b);
                        labels[li] = db < da; // ties stay on A
                    }
                }
                let (mut na, mut nb) = (0usize, 0usize);
                let mut sa = vec![0.0; d];
                let mut sb = vec![0.0; d];
                for (li, &i) in members.iter().enumerate() {
                    let row = problem.features.row(i);
                    if labels[li] {
                        nb += 1;
                        for (x, v) in sb.iter_mut().zip(row) {
                            *x += v;
                        }
                    } else {
                        na += 1;
                        for (x, v) in sa.iter_mut().zip(row) {
                            *x += v;
                        }
                    }
                }
                if na == 0 || nb == 0 {
                    break;
                }
                for (x, s) in cent_a.iter_mut().zip(&sa) {
                    *x = s / na as f64;
                }
                for (x, s) in cent_b.iter_mut().zip(&sb) {
                    *x = s / nb as f64;
                }
            }

            if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
                for &i in &members {
                    local[i] = usize::MAX;
                }
                continue;
            }

            // candidate pieces: connected components of each side
            for (li, &i) in members.iter().enumerate() {
                side[i] = labels[li];
            }
            let mut piece_of = vec![usize::MAX; m];
            let mut pieces: Vec<Vec<usize>> = Vec::new();
            for (li, &i) in members.iter().enumerate() {
                if piece_of[li] != usize::MAX {
                    continue;
                }
                let id = pieces.len();
                let mut stack = vec![i];
                piece_of[li] = id;
                let mut piece = vec![i];
                while let Some(u) = stack.pop() {
                    for &(v, _) in &adj[u] {
                        if comp_of[v] == comp_of[i] && side[v] == side[i] && piece_of[local[v]] == usize::MAX
                        {
                            piece_of[local[v]] = id;
                            piece.push(v);
                            stack.push(v);
                        }
                    }
                }
                pieces.push(piece);
            }

            if pieces.len() > 1 {
                let old_fid = stats_of(&problem.features, &members).fidelity();
                let new_fid: f64 = pieces
                    .iter()
                    .map(|p| stats_of(&problem.features, p).fidelity())
                    .sum();
                let cut_cost: f64 = intra
                    .iter()
                    .map(|&(la, lb, w)| if piece_of[la] != piece_of[lb] { w } else { 0.0 })
                    .sum();
                let delta = new_fid + cut_cost - old_fid;
                if delta < -opts.tol {
                    // accept: first piece keeps the id, the rest get new ids
                    changed = true;
                    comp_members[c] = pieces[0].clone();
                    for piece in &pieces[1..] {
                        let id = comp_members.len() as u32;
                        for &i in piece {
                            comp_of[i] = id;
                        }
                        comp_members.push(piece.clone());
                    }
                }
            }
            for &i in &members {
                local[i] = usize::MAX;
            }
        }

        // merge pass over adjacent component pairs
        if opts.merge {
            loop {
                let mut stats: Vec<CompStats> = comp_members
                    .iter()
                    .map(|mem| stats_of(&problem.features, mem))
                    .collect();
                let mut cross: std::collections::HashMap<(u32, u32), f64> =
                    std::collections::HashMap::new();
                for e in &problem.graph.edges {
                    let (ca, cb) = (comp_of[e.a], comp_of[e.b]);
                    if ca != cb {
                        *cross.entry((ca.min(cb), ca.max(cb))).or_insert(0.0) += mu * e.weight;
                    }
                }
                let mut pairs: Vec<((u32, u32), f64)> = cross.into_iter().collect();
                pairs.sort_by(|a, b| a.0.cmp(&b.0));
                let mut merged_any = false;
                let mut retired = vec![false; comp_members.len()];
                for ((ca, cb), w) in pairs {
                    let (ca, cb) = (ca as usize, cb as usize);
                    if retired[ca] || retired[cb] {
                        continue; // stale ids; retry on the next sweep
                    }
                    let union = CompStats {
                        size: stats[ca].size + stats[cb].size,
                        sum: stats[ca].sum.iter().zip(&stats[cb].sum).map(|(x, y)| x + y).collect(),
                        sum_sq: stats[ca].sum_sq + stats[cb].sum_sq,
                    };
                    let delta = union.fidelity() - stats[ca].fidelity() - stats[cb].fidelity() - w;
                    if delta < -opts.tol {
                        let members_b = std::mem::take(&mut comp_members[cb]);
                        for &i in &members_b {
                            comp_of[i] = ca as u32;
                        }
                        comp_members[ca].extend(members_b);
                        stats[ca] = union;
                        retired[cb] = true;
                        merged_any = true;
                        changed = true;
                    }
                }
                if !merged_any {
                    break;
                }
                // compact ids after a sweep that merged something
                let (new_of, new_members) = compact(&comp_of, &comp_members);
                comp_of = new_of;
                comp_members = new_members;
            }
        }

        if !changed {
            break;
        }
    }

    let (comp_of, comp_members) = compact(&comp_of, &comp_members);
    let count = comp_members.len();
    let means = component_means(&problem.features, &comp_of, count);
    let energy = energy_unchecked(problem, &comp_of);
    PartitionSolution { component_of: comp_of, component_values: means, energy }
}

fn compact(comp_of: &[u32], comp_members: &[Vec<usize>]) -> (Vec<u32>, Vec<Vec<usize>>) {
    // renumber components by their smallest member
    let mut order: Vec<usize> = (0..comp_members.len()).filter(|&c| !comp_members[c].is_empty()).collect();
    order.sort_by_key(|&c| comp_members[c].iter().copied().min().unwrap());
    let mut remap = vec![u32::MAX; comp_members.len()];
    for (new_id, &old_id) in order.iter().enumerate() {
        remap[old_id] = new_id as u32;
    }
    let new_of: Vec<u32> = comp_of.iter().map(|&c| remap[c as usize]).collect();
    let mut new_members: Vec<Vec<usize>> = vec![Vec::new(); order.len()];
    for (i, &c) in new_of.iter().enumerate() {
        new_members[c as usize].push(i);
    }
    (new_of, new_members)
}

/// Fold components smaller than `min_size` into the adjacent component
/// they share the largest total edge weight with, repeating until no
/// undersized component remains (isolated small components stay). The
/// result is still a valid connected partition; its energy is recomputed.
pub fn absorb_small_components(
    problem: &PartitionProblem,
    solution: &PartitionSolution,
    min_size: usize,
) -> PartitionSolution {
    let mut comp_of = solution.component_of.clone();
    loop {
        let count = comp_of.iter().map(|&c| c as usize + 1).max().unwrap_or(0);
        let mut sizes = vec![0usize; count];
        for &c in &comp_of {
            sizes[c as usize] += 1;
        }
        // strongest neighbor of every undersized component
        let mut best: Vec<(f64, u32)> = vec![(0.0, u32::MAX); count];
        let mut cross: std::collections::HashMap<(u32, u32), f64> = std::collections::HashMap::new();
        for e in &problem.graph.edges {
            let (a, b) = (comp_of[e.a], comp_of[e.b]);
            if a != b {
                *cross.entry((a.min(b), a.max(b))).or_insert(0.0) += e.weight;
            }
        }
        let mut pairs: Vec<((u32, u32), f64)> = cross.into_iter().collect();
        pairs.sort_by(|x, y| x.0.cmp(&y.0));
        for ((a, b), w) in pairs {
            for (small, other) in [(a, b), (b, a)] {
                // a small component may only target a large one or a small
                // one with a smaller id, so remap chains never cycle
                let valid = sizes[other as usize] >= min_size || other < small;
                if sizes[small as usize] < min_size && valid && w > best[small as usize].0 {
                    best[small as usize] = (w, other);
                }
            }
        }
        let mut changed = false;
        let mut target: Vec<u32> = (0..count as u32).collect();
        for c in 0..count {
            if sizes[c] < min_size && best[c].1 != u32::MAX {
                target[c] = best[c].1;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let resolve = |mut c: u32, target: &[u32]| {
            while target[c as usize] != c {
                c = target[c as usize];
            }
            c
        };
        for c in comp_of.iter_mut() {
            *c = resolve(*c, &target);
        }
        // compact ids
        let mut remap = vec![u32::MAX; count];
        let mut next = 0u32;
        for c in comp_of.iter_mut() {
            if remap[*c as usize] == u32::MAX {
                remap[*c as usize] = next;
                next += 1;
            }
            *c = remap[*c as usize];
        }
    }
    // renumber by smallest member for stable output
    let count = comp_of.iter().map(|&c| c as usize + 1).max().unwrap_or(0);
    let mut members = vec![Vec::new(); count];
    for (i, &c) in comp_of.iter().enumerate() {
        members[c as usize].push(i);
    }
    let (comp_of, _members) = compact(&comp_of, &members);
    let count = _members.len();
    let means = component_means(&problem.features, &comp_of, count);
    let energy = energy_unchecked(problem, &comp_of);
    PartitionSolution { component_of: comp_of, component_values: means, energy }
}

/// Exact minimizer by exhaustive enumeration of partitions into connected
/// components. Only for instances of at most 12 nodes.
pub fn brute_force_partition(problem: &PartitionProblem) -> Result<PartitionSolution> {
    let n = problem.graph.node_count;
    if n == 0 || n > 12 {
        return Err(Error::parameter(format!("brute force limited to 1..=12 nodes, got {n}")));
    }
    let adj = problem.graph.neighbor_lists();
    let blocks_connected = |assign: &[u32]| -> bool {
        let count = assign.iter().map(|&c| c as usize + 1).max().unwrap();
        let mut seen = vec![false; n];
        for c in 0..count as u32 {
            let start = match assign.iter().position(|&x| x == c) {
                Some(s) => s,
                None => continue,
            };
            let mut stack = vec![start];
            seen[start] = true;
            while let Some(u) = stack.pop() {
                for &(v, _) in &adj[u] {
                    if !seen[v] && assign[v] == c {
                        seen[v] = true;
                        stack.push(v);
                    }
                }
            }
        }
        seen.iter().all(|&s| s)
    };

    // enumerate restricted growth strings
    let mut assign = vec![0u32; n];
    let mut best: Option<(f64, Vec<u32>)> = None;
    loop {
        if blocks_connected(&assign) {
            let e = energy_unchecked(problem, &assign);
            if best.as_ref().map_or(true, |(be, _)| e < be - 1e-12) {
                best = Some((e, assign.clone()));
            }
        }
        // next restricted growth string
        let mut i = n as isize - 1;
        loop {
            if i <= 0 {
                i = -1;
                break;
            }
            let max_prev = assign[..i as usize].iter().copied().max().unwrap();
            if assign[i as usize] <= max_prev {
                break;
            }
            i -= 1;
        }
        if i < 0 {
            break;
        }
        assign[i as usize] += 1;
        for j in (i as usize + 1)..n {
            assign[j] = 0;
        }
    }

    let (e, assign) = best.unwrap();
    let count = assign.iter().map(|&c| c as usize + 1).max().unwrap();
    let means = component_means(&problem.features, &assign, count);
    Ok(PartitionSolution { component_of: assign, component_values: means, energy: e })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphs::{Edge, GraphKind};

    fn chain_graph(n: usize, weight: f64) -> AdjacencyGraph {
        AdjacencyGraph {
            node_count: n,
            edges: (0..n - 1)
                .map(|i| Edge { a: i, b: i + 1, length: 1.0, weight })
                .collect(),
            kind: GraphKind::Knn,
        }
    }

    fn scalar_problem(graph: AdjacencyGraph, f: &[f64], mu: f64) -> PartitionProblem {
        PartitionProblem {
            graph,
            features: NodeFeatures::new(1, f.to_vec()),
            mu,
        }
    }

    #[test]
    fn energy_single_component_constant_features() {
        let p = scalar_problem(chain_graph(4, 1.0), &[2.0, 2.0, 2.0, 2.0], 0.5);
        assert_eq!(energy(&p, &[0, 0, 0, 0]).unwrap(), 0.0);
    }

    #[test]
    fn energy_singletons_is_pure_cut_cost() {
        let p = scalar_problem(chain_graph(4, 1.0), &[0.0, 1.0, 2.0, 3.0], 0.5);
        let e = energy(&p, &[0, 1, 2, 3]).unwrap();
        assert!((e - 0.5 * 3.0).abs() < 1e-12);
    }

    #[test]
    fn energy_six_chain_step() {
        let p = scalar_problem(chain_graph(6, 1.0), &[0.0, 0.0, 0.0, 1.0, 1.0, 1.0], 0.3);
        let e = energy(&p, &[0, 0, 0, 1, 1, 1]).unwrap();
        assert!((e - 0.3).abs() < 1e-12);
    }

    #[test]
    fn energy_rejects_disconnected_component() {
        let p = scalar_problem(chain_graph(4, 1.0), &[0.0, 1.0, 2.0, 3.0], 0.5);
        // nodes 0 and 3 are not adjacent
        assert!(energy(&p, &[0, 1, 1, 0]).is_err());
    }

    #[test]
    fn cut_pursuit_constant_features_stays_whole() {
        let p = scalar_problem(chain_graph(5, 1.0), &[1.0; 5], 0.2);
        let sol = cut_pursuit(&p, &CutPursuitOpts::default());
        assert_eq!(sol.component_count(), 1);
        assert_eq!(sol.energy, 0.0);
    }

    #[test]
    fn cut_pursuit_mu_zero_gives_singletons() {
        let p = scalar_problem(chain_graph(5, 1.0), &[0.0, 1.0, 2.0, 3.0, 4.0], 0.0);
        let sol = cut_pursuit(&p, &CutPursuitOpts::default());
        assert_eq!(sol.component_count(), 5);
        assert!(sol.energy.abs() < 1e-18);
    }

    #[test]
    fn cut_pursuit_six_chain_finds_optimum() {
        let p = scalar_problem(chain_graph(6, 1.0), &[0.0, 0.0, 0.0, 1.0, 1.0, 1.0], 0.3);
        let sol = cut_pursuit(&p, &CutPursuitOpts::default());
        assert_eq!(sol.component_count(), 2);
        assert!((sol.energy - 0.3).abs() < 1e-12);
        assert_eq!(sol.component_of, vec![0, 0, 0, 1, 1, 1]);
        let brute = brute_force_partition(&p).unwrap();
        assert!((brute.energy - 0.3).abs() < 1e-12);
    }

    #[test]
    fn component_values_are_member_means() {
        let p = scalar_problem(chain_graph(6, 1.0), &[0.0, 0.1, -0.1, 1.0, 1.1, 0.9], 0.1);
        let sol = cut_pursuit(&p, &CutPursuitOpts::default());
        let members = sol.members();
        for (c, mem) in members.iter().enumerate() {
            let mean: f64 = mem.iter().map(|&i| p.features.row(i)[0]).sum::<f64>() / mem.len() as f64;
            assert!((sol.component_values.row(c)[0] - mean).abs() < 1e-9);
        }
    }

    #[test]
    fn brute_force_single_node() {
        let g = AdjacencyGraph { node_count: 1, edges: vec![], kind: GraphKind::Knn };
        let p = scalar_problem(g, &[5.0], 1.0);
        let sol = brute_force_partition(&p).unwrap();
        assert_eq!(sol.component_count(), 1);
        assert_eq!(sol.energy, 0.0);
    }

    #[test]
    fn brute_force_two_node_split_threshold() {
        // split iff mu < 0.5: split energy = mu, merged energy = 2 * 0.25
        for (mu, want_comps) in [(0.3, 2usize), (0.7, 1usize)] {
            let p = scalar_problem(chain_graph(2, 1.0), &[0.0, 1.0], mu);
            let sol = brute_force_partition(&p).unwrap();
            assert_eq!(sol.component_count(), want_comps, "mu = {mu}");
        }
    }

    #[test]
    fn brute_force_refuses_large_instances() {
        let p = scalar_problem(chain_graph(13, 1.0), &[0.0; 13], 0.1);
        assert!(brute_force_partition(&p).is_err());
    }

    #[test]
    fn cut_pursuit_monotone_in_mu() {
        // component count must not increase with mu
        let f: Vec<f64> = (0..12).map(|i| (i as f64 * 0.7).sin()).collect();
        let mut last = usize::MAX;
        for mu in [0.01, 0.05, 0.2, 0.8, 3.0] {
            let p = scalar_problem(chain_graph(12, 1.0), &f, mu);
            let sol = cut_pursuit(&p, &CutPursuitOpts::default());
            assert!(sol.component_count() <= last, "mu={mu}");
            last = sol.component_count();
        }
    }
}
