//! Oracle suite for the partition solver: compare cut pursuit against
//! exhaustive enumeration on small random instances.

use spg_core::graphs::{AdjacencyGraph, Edge, GraphKind};
use spg_core::partition::{
    brute_force_partition, cut_pursuit, energy, CutPursuitOpts, NodeFeatures, PartitionProblem,
};
use spg_core::rng::Rng;

fn random_tree(rng: &mut Rng, n: usize) -> Vec<(usize, usize)> {
    (1..n).map(|i| (rng.below(i), i)).collect()
}

fn grid_edges(w: usize, h: usize) -> Vec<(usize, usize)> {
    let mut e = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if x + 1 < w {
                e.push((i, i + 1));
            }
            if y + 1 < h {
                e.push((i, i + w));
            }
        }
    }
    e
}

struct Instance {
    problem: PartitionProblem,
    separable: bool,
}

/// Random instances over trees and grids, d <= 3, mu in [0.01, 1].
/// Separable instances place features in clusters whose separation is at
/// least 4x the intra-cluster spread.
fn random_instance(rng: &mut Rng, trial: usize) -> Instance {
    let grid = trial % 3 == 0;
    let mut parent: Vec<usize> = Vec::new();
    let (n, w, pairs) = if grid {
        let w = 2 + rng.below(3);
        let h = 2 + rng.below(2);
        let n = (w * h).min(10);
        // truncating the row-major grid keeps it connected
        let pairs: Vec<(usize, usize)> =
            grid_edges(w, h).into_iter().filter(|&(a, b)| a < n && b < n).collect();
        (n, w, pairs)
    } else {
        let n = 4 + rng.below(7);
        let pairs = random_tree(rng, n);
        parent = vec![0; n];
        for &(p, i) in &pairs {
            parent[i] = p;
        }
        (n, 0, pairs)
    };
    let d = 1 + rng.below(3);
    let separable = trial % 2 == 0;
    let mus = [0.01, 0.03, 0.1, 0.3, 1.0];
    let mu = if separable { mus[rng.below(4)] } else { mus[rng.below(mus.len())] };

    let mut data = vec![0.0; n * d];
    if separable {
        // two clusters over graph-connected regions, with inter-cluster
        // distance at least 4x the intra-cluster spread
        let cluster_of: Vec<usize> = if grid {
            // vertical split: left columns vs right columns
            (0..n).map(|i| usize::from(i % w >= (w + 1) / 2)).collect()
        } else {
            // the subtree under a non-root node and its complement are both
            // connected halves of the tree
            let r = 1 + rng.below(n - 1);
            (0..n)
                .map(|i| {
                    let mut j = i;
                    while j > r {
                        j = parent[j];
                    }
                    usize::from(j == r)
                })
                .collect()
        };
        let spread = 0.05;
        let mut centers = vec![vec![0.0; d], vec![0.0; d]];
        for k in 0..d {
            centers[0][k] = rng.uniform(-1.0, 1.0);
            centers[1][k] = centers[0][k] + (4.0 * spread + rng.uniform(0.5, 1.5));
        }
        for i in 0..n {
            for k in 0..d {
                data[i * d + k] = centers[cluster_of[i]][k] + rng.uniform(-spread, spread);
            }
        }
    } else {
        for v in &mut data {
            *v = rng.uniform(-1.0, 1.0);
        }
    }

    let edges = pairs
        .into_iter()
        .map(|(a, b)| Edge { a, b, length: 1.0, weight: rng.uniform(0.5, 1.0) })
        .collect();
    Instance {
        problem: PartitionProblem {
            graph: AdjacencyGraph { node_count: n, edges, kind: GraphKind::Knn },
            features: NodeFeatures::new(d, data),
            mu,
        },
        separable,
    }
}

#[test]
fn cut_pursuit_tracks_brute_force_on_random_problems() {
    let mut rng = Rng::seed_from(20_240_117);
    let mut worst_ratio = 1.0_f64;
    for trial in 0..100 {
        let inst = random_instance(&mut rng, trial);
        let brute = brute_force_partition(&inst.problem).unwrap();
        let sol = cut_pursuit(&inst.problem, &CutPursuitOpts::default());

        // solution is valid and its energy recomputes
        let recheck = energy(&inst.problem, &sol.component_of).unwrap();
        assert!(
            (recheck - sol.energy).abs() < 1e-9 * (1.0 + recheck),
            "trial {trial}: reported energy {} vs recomputed {recheck}",
            sol.energy
        );

        let ratio = if brute.energy > 1e-12 {
            sol.energy / brute.energy
        } else {
            if sol.energy > 1e-9 {
                f64::INFINITY
            } else {
                1.0
            }
        };
        worst_ratio = worst_ratio.max(ratio);
        assert!(
            ratio <= 1.2 + 1e-9,
            "trial {trial}: cut pursuit {} vs optimum {} (ratio {ratio})",
            sol.energy,
            brute.energy
        );
        if inst.separable {
            assert!(
                sol.energy <= brute.energy + 1e-9 * (1.0 + brute.energy),
                "trial {trial} separable: {} vs {}",
                sol.energy,
                brute.energy
            );
        }
    }
    println!("worst cut-pursuit/optimal ratio over 100 instances: {worst_ratio:.6}");
}
