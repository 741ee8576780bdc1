mod common;

use common::{cycle, graph_strategy, shuffled};
use pnsis::pmp::{pair_count, structure_embedding, MultiIndexFamily, PmpConfig};
use pnsis::{Graph64, Matrix64};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn embedding_ignores_node_order(g in graph_strategy(9, 2), s in any::<u64>()) {
        let perm = shuffled(g.node_count(), s);
        let cfg = PmpConfig::default();
        let a = structure_embedding(&g, cfg).unwrap();
        let b = structure_embedding(&g.permuted(&perm), cfg).unwrap();
        prop_assert_eq!(a.h, b.h);
    }
}

#[test]
fn six_cycle_and_two_triangles_differ() {
    let c6 = cycle(6, 1);
    let tri = Graph64::from_edges(6, &[(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)], Matrix64::filled(6, 1, 1.0));
    let cfg = PmpConfig::default();
    assert_ne!(structure_embedding(&c6, cfg).unwrap().h, structure_embedding(&tri, cfg).unwrap().h);
}

#[test]
fn family_size_matches_count() {
    for (ch, cap) in [(3, 1), (3, 2), (4, 2), (5, 3)] {
        let fam = MultiIndexFamily::new(ch, cap, usize::MAX).unwrap();
        assert_eq!(fam.len() as u128, pair_count(ch, cap));
    }
}

#[test]
fn oversized_family_is_refused() {
    assert!(MultiIndexFamily::new(40, 4, 1000).is_err());
}

#[test]
fn zeroth_block_sums_each_channel() {
    let g = common::random_graph(7, 0.4, 2, 11);
    let e = structure_embedding(&g, PmpConfig::default()).unwrap();
    assert_eq!(e.coord(0, 2), 2.0 * g.edges().len() as f64);
    let trace: f64 = (0..7).map(|i| g.features[(i, 0)]).sum();
    assert!((e.coord(0, 0) - trace).abs() < 1e-12);
}
