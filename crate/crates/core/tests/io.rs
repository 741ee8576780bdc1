mod common;

use common::random_graph;
use pnsis::io::{from_str, to_string};
use pnsis::{Dataset64, Graph64, Matrix64};
use proptest::prelude::*;

fn dataset(sizes: &[(usize, f64, u64)], d: usize, with_extras: bool) -> Dataset64 {
    let graphs = sizes
        .iter()
        .enumerate()
        .map(|(k, &(n, p, s))| {
            let mut g = random_graph(n, p, d, s);
            if with_extras {
                let keep = g.adjacency.map(|a| if a > 0.0 { (s % 2) as f64 } else { 0.0 });
                g = g.with_label(k % 3).with_gt_mask(keep);
                g.env_id = Some((k % 2) as i64);
            }
            g
        })
        .collect();
    Dataset64::new(graphs, d, 3)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn text_round_trip_is_exact(
        sizes in prop::collection::vec((1usize..8, 0.0..1.0f64, any::<u64>()), 1..6),
        d in 1usize..4,
        extras in any::<bool>(),
    ) {
        let ds = dataset(&sizes, d, extras);
        let text = to_string(&ds).unwrap();
        let back: Dataset64 = from_str(&text).unwrap();
        prop_assert_eq!(&back, &ds);
        prop_assert_eq!(to_string(&back).unwrap(), text);
    }
}

#[test]
fn asymmetric_graph_is_refused() {
    let mut g = random_graph(3, 1.0, 2, 1);
    g.adjacency[(0, 1)] = 0.3;
    assert!(to_string(&Dataset64::new(vec![g], 2, 2)).is_err());
}

#[test]
fn parse_errors_carry_line_numbers() {
    let text = "PNSIS-DS v1 D=1 C=2\nV=2 label=0 env=none\n0.5\nnot-a-number\n";
    match from_str::<f64>(text) {
        Err(pnsis::Error::Parse { line, .. }) => assert_eq!(line, 4),
        other => panic!("expected parse error, got {other:?}"),
    }
}

#[test]
fn file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ds.txt");
    let g = Graph64::from_edges(2, &[(0, 1)], Matrix64::from_rows(&[vec![0.1], vec![1.0 / 3.0]])).with_label(1);
    let ds = Dataset64::new(vec![g], 1, 2);
    pnsis::io::write_dataset(&path, &ds).unwrap();
    assert_eq!(pnsis::io::read_dataset::<f64>(&path).unwrap(), ds);
}
