//! Max-flow / min-cut on small dense terminals: every node carries a
//! source and a sink capacity, pairwise edges are symmetric. Solved with
//! Dinic's algorithm (BFS level graph + blocking-flow augmentation).

use crate::error::{Error, Result};

/// Binary labeling problem: assigning node `i` to the source side costs
/// `sink_cap[i]` is avoided... concretely, cutting `i` from the source
/// pays `source_cap[i]`, cutting it from the sink pays `sink_cap[i]`, and
/// separating edge endpoints pays the edge capacity once per direction cut.
#[derive(Debug, Clone)]
pub struct CutProblem {
    pub node_count: usize,
    /// Undirected pairwise capacities (applied in both directions).
    pub edges: Vec<(usize, usize, f64)>,
    /// Capacity of the source -> node arc.
    pub source_cap: Vec<f64>,
    /// Capacity of the node -> sink arc.
    pub sink_cap: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct CutResult {
    /// true = node on the source side of the minimum cut. Ties resolve to
    /// the source side (the maximal minimum cut is returned).
    pub source_side: Vec<bool>,
    pub cut_value: f64,
    pub flow_value: f64,
}

struct Arc {
    to: u32,
    cap: f64,
}

struct Dinic {
    arcs: Vec<Arc>,
    head: Vec<Vec<u32>>,
    level: Vec<i32>,
    iter: Vec<usize>,
    eps: f64,
}

impl Dinic {
    fn new(n: usize) -> Self {
        Dinic { arcs: Vec::new(), head: vec![Vec::new(); n], level: vec![-1; n], iter: vec![0; n], eps: 0.0 }
    }

    fn add(&mut self, from: usize, to: usize, cap: f64, rev_cap: f64) {
        let a = self.arcs.len() as u32;
        self.arcs.push(Arc { to: to as u32, cap });
        self.arcs.push(Arc { to: from as u32, cap: rev_cap });
        self.head[from].push(a);
        self.head[to].push(a + 1);
    }

    fn bfs(&mut self, s: usize, t: usize) -> bool {
        self.level.fill(-1);
        self.level[s] = 0;
        let mut queue = std::collections::VecDeque::new();
        queue.push_back(s);
        while let Some(u) = queue.pop_front() {
            for &a in &self.head[u] {
                let arc = &self.arcs[a as usize];
                if arc.cap > self.eps && self.level[arc.to as usize] < 0 {
                    self.level[arc.to as usize] = self.level[u] + 1;
                    queue.push_back(arc.to as usize);
                }
            }
        }
        self.level[t] >= 0
    }

    fn dfs(&mut self, u: usize, t: usize, limit: f64) -> f64 {
        if u == t {
            return limit;
        }
        while self.iter[u] < self.head[u].len() {
            let a = self.head[u][self.iter[u]] as usize;
            let (to, cap) = (self.arcs[a].to as usize, self.arcs[a].cap);
            if cap > self.eps && self.level[to] == self.level[u] + 1 {
                let pushed = self.dfs(to, t, limit.min(cap));
                if pushed > 0.0 {
                    self.arcs[a].cap -= pushed;
                    self.arcs[a ^ 1].cap += pushed;
                    return pushed;
                }
            }
            self.iter[u] += 1;
        }
        0.0
    }

    fn run(&mut self, s: usize, t: usize) -> f64 {
        let mut flow = 0.0;
        while self.bfs(s, t) {
            self.iter.fill(0);
            loop {
                let pushed = self.dfs(s, t, f64::INFINITY);
                if pushed <= 0.0 {
                    break;
                }
                flow += pushed;
            }
        }
        flow
    }
}

pub fn max_flow_min_cut(problem: &CutProblem) -> Result<CutResult> {
    let n = problem.node_count;
    if problem.source_cap.len() != n || problem.sink_cap.len() != n {
        return Err(Error::contract("terminal capacity length mismatch"));
    }
    let mut max_cap = 0.0_f64;
    for &c in problem.source_cap.iter().chain(&problem.sink_cap) {
        if !(c >= 0.0) || !c.is_finite() {
            return Err(Error::validation(format!("bad terminal capacity {c}")));
        }
        max_cap = max_cap.max(c);
    }
    for &(a, b, c) in &problem.edges {
        if a >= n || b >= n {
            return Err(Error::contract("edge endpoint out of range"));
        }
        if !(c >= 0.0) || !c.is_finite() {
            return Err(Error::validation(format!("bad edge capacity {c}")));
        }
        max_cap = max_cap.max(c);
    }

    let s = n;
    let t = n + 1;
    let mut net = Dinic::new(n + 2);
    net.eps = max_cap * 1e-12;
    for i in 0..n {
        if problem.source_cap[i] > 0.0 {
            net.add(s, i, problem.source_cap[i], 0.0);
        }
        if problem.sink_cap[i] > 0.0 {
            net.add(i, t, problem.sink_cap[i], 0.0);
        }
    }
    for &(a, b, c) in &problem.edges {
        if a != b && c > 0.0 {
            net.add(a, b, c, c);
        }
    }
    let flow = net.run(s, t);

    // maximal source side: everything that cannot reach the sink in the
    // residual network (ties thereby fall to the source side)
    let mut reaches_sink = vec![false; n + 2];
    reaches_sink[t] = true;
    let mut queue = std::collections::VecDeque::new();
    queue.push_back(t);
    while let Some(u) = queue.pop_front() {
        for &a in &net.head[u] {
            // arc a^1 is the residual arc into u
            let from = net.arcs[(a ^ 1) as usize].to as usize;
            debug_assert_eq!(from, u);
            let v = net.arcs[a as usize].to as usize;
            // v -> u residual capacity lives on the paired arc
            if !reaches_sink[v] && net.arcs[(a ^ 1) as usize].cap > net.eps {
                reaches_sink[v] = true;
                queue.push_back(v);
            }
        }
    }
    let source_side: Vec<bool> = (0..n).map(|i| !reaches_sink[i]).collect();

    // cut value under this labeling, from the original capacities
    let mut cut = 0.0;
    for i in 0..n {
        if source_side[i] {
            cut += problem.sink_cap[i];
        } else {
            cut += problem.source_cap[i];
        }
    }
    for &(a, b, c) in &problem.edges {
        if a != b && source_side[a] != source_side[b] {
            cut += c;
        }
    }

    Ok(CutResult { source_side, cut_value: cut, flow_value: flow })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn bottleneck_chain() {
        // s -> a -> t with capacities (1, 2): the cut takes the source arc
        let problem = CutProblem {
            node_count: 1,
            edges: vec![],
            source_cap: vec![1.0],
            sink_cap: vec![2.0],
        };
        let r = max_flow_min_cut(&problem).unwrap();
        assert!((r.cut_value - 1.0).abs() < 1e-12);
        assert!((r.flow_value - 1.0).abs() < 1e-12);
        assert!(!r.source_side[0], "node belongs to the sink side");
    }

    #[test]
    fn zero_capacities_zero_cut() {
        let problem = CutProblem {
            node_count: 3,
            edges: vec![(0, 1, 0.0), (1, 2, 0.0)],
            source_cap: vec![0.0; 3],
            sink_cap: vec![0.0; 3],
        };
        let r = max_flow_min_cut(&problem).unwrap();
        assert_eq!(r.cut_value, 0.0);
        assert_eq!(r.flow_value, 0.0);
    }

    #[test]
    fn rejects_negative_capacity() {
        let problem = CutProblem {
            node_count: 1,
            edges: vec![],
            source_cap: vec![-1.0],
            sink_cap: vec![0.0],
        };
        assert!(max_flow_min_cut(&problem).is_err());
    }

    /// Exhaustive oracle: minimum over all 2^n labelings of the cut cost.
    fn brute_force_cut(problem: &CutProblem) -> (f64, Vec<bool>) {
        let n = problem.node_count;
        let mut best = (f64::INFINITY, vec![false; n]);
        for mask in 0..(1u32 << n) {
            let side: Vec<bool> = (0..n).map(|i| mask & (1 << i) != 0).collect();
            let mut cost = 0.0;
            for i in 0..n {
                cost += if side[i] { problem.sink_cap[i] } else { problem.source_cap[i] };
            }
            for &(a, b, c) in &problem.edges {
                if a != b && side[a] != side[b] {
                    cost += c;
                }
            }
            if cost < best.0 - 1e-12 {
                best = (cost, side);
            }
        }
        best
    }

    #[test]
    fn diamond_known_cut() {
        // diamond s->(0,1)->t with a bridge; min cut value 3 by enumeration
        let problem = CutProblem {
            node_count: 2,
            edges: vec![(0, 1, 1.0)],
            source_cap: vec![2.0, 1.0],
            sink_cap: vec![1.0, 2.0],
        };
        let r = max_flow_min_cut(&problem).unwrap();
        let (want, _) = brute_force_cut(&problem);
        assert!((r.cut_value - want).abs() < 1e-9);
        assert!((r.cut_value - r.flow_value).abs() < 1e-9);
        assert!((want - 3.0).abs() < 1e-12);
    }

    #[test]
    fn duality_and_optimality_on_random_graphs() {
        let mut rng = Rng::seed_from(77);
        for trial in 0..500 {
            let n = 2 + rng.below(11); // up to 12 nodes
            let mut edges = Vec::new();
            for a in 0..n {
                for b in (a + 1)..n {
                    if rng.next_f64() < 0.4 {
                        edges.push((a, b, rng.uniform(0.0, 2.0)));
                    }
                }
            }
            let problem = CutProblem {
                node_count: n,
                edges,
                source_cap: (0..n).map(|_| rng.uniform(0.0, 2.0)).collect(),
                sink_cap: (0..n).map(|_| rng.uniform(0.0, 2.0)).collect(),
            };
            let r = max_flow_min_cut(&problem).unwrap();
            let (want, _) = brute_force_cut(&problem);
            assert!(
                (r.cut_value - want).abs() < 1e-9 * (1.0 + want),
                "trial {trial}: cut {} vs optimum {want}",
                r.cut_value
            );
            assert!(
                (r.cut_value - r.flow_value).abs() < 1e-9 * (1.0 + want),
                "trial {trial}: duality gap cut {} flow {}",
                r.cut_value,
                r.flow_value
            );
        }
    }
}
