//! Random fixtures shared by unit tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::grid::Point;
use crate::gt_graph::GroundTruthGraph;

/// `n` distinct nodes in `[0, extent)²` with each pair joined with
/// probability `density`.
pub fn random_graph(seed: u64, n: usize, density: f64, extent: f64) -> GroundTruthGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nodes: Vec<Point> = Vec::with_capacity(n);
    while nodes.len() < n {
        let p = [0.0, rng.gen_range(0.0..extent).floor(), rng.gen_range(0.0..extent).floor()];
        if !nodes.contains(&p) {
            nodes.push(p);
        }
    }
    let mut edges = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if rng.gen_bool(density) {
                edges.push((a, b));
            }
        }
    }
    GroundTruthGraph::new(2, nodes, &edges).expect("distinct nodes, simple edges")
}

/// All-pairs shortest path lengths.
pub fn floyd_warshall(g: &GroundTruthGraph) -> Vec<Vec<f64>> {
    let n = g.node_count();
    let mut d = vec![vec![f64::INFINITY; n]; n];
    for (v, row) in d.iter_mut().enumerate() {
        row[v] = 0.0;
    }
    for e in g.edges() {
        d[e.a][e.b] = d[e.a][e.b].min(e.weight);
        d[e.b][e.a] = d[e.b][e.a].min(e.weight);
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let via = d[i][k] + d[k][j];
                if via < d[i][j] {
                    d[i][j] = via;
                }
            }
        }
    }
    d
}

/// The same geometry with node ids permuted by `seed`.
pub fn reindexed(g: &GroundTruthGraph, seed: u64) -> GroundTruthGraph {
    use rand::seq::SliceRandom;
    let n = g.node_count();
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut nodes = vec![[0.0; 3]; n];
    for (old, &new) in perm.iter().enumerate() {
        nodes[new] = g.nodes()[old];
    }
    let mut edges: Vec<_> = g
        .edges()
        .iter()
        .map(|e| (perm[e.a], perm[e.b], e.waypoints.clone()))
        .collect();
    edges.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 1));
    GroundTruthGraph::with_geometry(g.ndim(), nodes, edges).expect("permutation keeps validity")
}
