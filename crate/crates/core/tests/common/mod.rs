#![allow(dead_code)]

use pnsis::{Graph64, Matrix64};
use proptest::prelude::*;
use pnsis::rng::rng;
use rand::Rng;

/// Random simple graph with `n` nodes, edge probability `p` and `d` features.
pub fn random_graph(n: usize, p: f64, d: usize, seed: u64) -> Graph64 {
    let mut r = rng(seed);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if r.gen::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    let x = Matrix64::from_fn(n, d, |_, _| r.gen_range(-1.0..1.0));
    Graph64::from_edges(n, &edges, x)
}

pub fn cycle(n: usize, d: usize) -> Graph64 {
    let edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n)).collect();
    Graph64::from_edges(n, &edges, Matrix64::filled(n, d, 1.0))
}

pub fn graph_strategy(max_nodes: usize, d: usize) -> impl Strategy<Value = Graph64> {
    (1..=max_nodes, 0.0..1.0f64, any::<u64>()).prop_map(move |(n, p, s)| random_graph(n, p, d, s))
}

pub fn shuffled(n: usize, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut v: Vec<usize> = (0..n).collect();
    v.shuffle(&mut rng(seed));
    v
}
