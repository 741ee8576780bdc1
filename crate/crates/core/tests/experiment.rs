use pnsis::experiment::{subgraph_dot, ExperimentConfig, ExperimentReport};
use pnsis::metrics::mean_std;
use pnsis::model::SubgraphMask;
use pnsis::run_experiment;
use pnsis::{Graph64, Matrix64};

fn tiny() -> ExperimentConfig {
    let text = "seeds = 1,2\ntrain_graphs = 60\ntest_graphs = 30\nepochs = 2\nbatch_size = 30\nenv_size_a = 10\nenv_size_b = 10\n\
                extractor_hidden = 8\nclassifier_hidden = 8\neval_samples = 2\nspurious_epochs = 2\nerm_epochs = 2\ncompare = true\n";
    ExperimentConfig::from_text(text).unwrap()
}

#[test]
fn aggregate_recomputes_from_seed_records() {
    let r = run_experiment::<f64>(&tiny());
    assert!(r.ok(), "{:?}", r.error);
    assert_eq!(r.seeds.len(), 2);
    let col = |f: &dyn Fn(&pnsis::experiment::SeedRecord) -> f64| r.seeds.iter().map(f).collect::<Vec<_>>();
    let (m, s) = mean_std(&col(&|x| x.test_acc));
    assert_eq!(r.aggregate["test_acc"].mean, m);
    assert_eq!(r.aggregate["test_acc"].std, s);
    for name in ["erm", "no_bound", "no_ensemble"] {
        let (m, _) = mean_std(&col(&|x| x.variants[name].test_acc));
        assert_eq!(r.comparisons[name].mean, m);
    }
    let back: ExperimentReport = serde_json::from_str(&r.to_json()).unwrap();
    assert_eq!(back.to_json(), r.to_json());
}

#[test]
fn runs_repeat_exactly() {
    let cfg = ExperimentConfig { seeds: vec![4], compare: false, ..tiny() };
    assert_eq!(run_experiment::<f64>(&cfg).to_json(), run_experiment::<f64>(&cfg).to_json());
}

#[test]
fn bad_config_yields_a_failed_report() {
    let mut cfg = tiny();
    cfg.train.n_graphs = 10;
    let r = run_experiment::<f64>(&cfg);
    assert!(!r.ok());
    assert!(r.failed_stage.is_some() && r.error.is_some());
}

fn triangle_with_tail() -> Graph64 {
    Graph64::from_edges(4, &[(0, 1), (1, 2), (0, 2), (2, 3)], Matrix64::filled(4, 1, 0.25))
}

#[test]
fn dot_export_marks_kept_edges() {
    let g = triangle_with_tail();
    let mut m = Matrix64::zeros(4, 4);
    for (i, j) in [(0, 1), (1, 2), (0, 2)] {
        m[(i, j)] = 1.0;
        m[(j, i)] = 1.0;
    }
    let dot = subgraph_dot(&g, &SubgraphMask { mask: m, hard: true, temperature: 1.0 }).unwrap();
    assert!(dot.starts_with("graph"));
    assert_eq!(dot.matches("invariant=true").count(), 3);
    assert_eq!(dot.matches(" -- ").count(), 4);
}

#[test]
fn dot_export_rejects_masks_off_the_edge_set() {
    let g = triangle_with_tail();
    let mut m = Matrix64::zeros(4, 4);
    m[(0, 3)] = 1.0;
    m[(3, 0)] = 1.0;
    assert!(subgraph_dot(&g, &SubgraphMask { mask: m, hard: true, temperature: 1.0 }).is_err());
}
