//! SPMotif-style synthetic datasets: a label-determining motif attached to a
//! base graph whose kind is spuriously correlated with the label.

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::error::{arg, Result};
use crate::graph::{Dataset, Graph};
use crate::matrix::Matrix;
use crate::rng;
use crate::scalar::Scalar;

pub const NUM_CLASSES: usize = 3;
pub const FEATURE_DIM: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaseKind {
    Tree,
    Ladder,
    Wheel,
}

impl BaseKind {
    pub const ALL: [BaseKind; 3] = [BaseKind::Tree, BaseKind::Ladder, BaseKind::Wheel];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Edge list of a base graph with roughly `size` nodes.
    pub fn build(self, size: usize) -> (usize, Vec<(usize, usize)>) {
        match self {
            // heap-ordered binary tree
            BaseKind::Tree => {
                let n = size.max(2);
                (n, (1..n).map(|i| ((i - 1) / 2, i)).collect())
            }
            BaseKind::Ladder => {
                let rungs = (size / 2).max(2);
                let mut e = Vec::new();
                for r in 0..rungs {
                    e.push((2 * r, 2 * r + 1));
                    if r + 1 < rungs {
                        e.push((2 * r, 2 * r + 2));
                        e.push((2 * r + 1, 2 * r + 3));
                    }
                }
                (2 * rungs, e)
            }
            // hub 0 plus a rim cycle
            BaseKind::Wheel => {
                let rim = size.saturating_sub(1).max(3);
                let mut e: Vec<_> = (1..=rim).map(|i| (0, i)).collect();
                for i in 1..=rim {
                    e.push((i, if i == rim { 1 } else { i + 1 }));
                }
                (rim + 1, e)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MotifKind {
    Cycle,
    House,
    Crane,
}

impl MotifKind {
    pub const ALL: [MotifKind; 3] = [MotifKind::Cycle, MotifKind::House, MotifKind::Crane];

    pub fn from_class(c: usize) -> Self {
        Self::ALL[c % 3]
    }

    /// Base kind spuriously paired with this motif's class.
    pub fn matched_base(self) -> BaseKind {
        BaseKind::ALL[self as usize]
    }

    pub fn build(self) -> (usize, Vec<(usize, usize)>) {
        match self {
            MotifKind::Cycle => (5, vec![(0, 1), (1, 2), (2, 3), (3, 4), (4, 0)]),
            // square 0-1-2-3 with roof apex 4 over edge 0-1
            MotifKind::House => (5, vec![(0, 1), (1, 2), (2, 3), (3, 0), (0, 4), (1, 4)]),
            // kite: diamond 0-1-2-3 with a two-edge tail 3-4-5
            MotifKind::Crane => (6, vec![(0, 1), (0, 2), (1, 2), (1, 3), (2, 3), (3, 4), (4, 5)]),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpmotifConfig {
    pub n_graphs: usize,
    /// P(base kind matches the class-paired kind).
    pub bias: f64,
    pub base_size_range: (usize, usize),
    /// Also make base-node features class-correlated.
    pub mixed: bool,
    pub seed: u64,
}

impl Default for SpmotifConfig {
    fn default() -> Self {
        Self { n_graphs: 300, bias: 0.9, base_size_range: (8, 14), mixed: false, seed: 0 }
    }
}

impl SpmotifConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1.0 / 3.0 - 1e-12..=1.0).contains(&self.bias) {
            return Err(arg(format!("bias {} outside [1/3, 1]", self.bias)));
        }
        if self.n_graphs < 3 {
            return Err(arg("n_graphs must be >= 3"));
        }
        let (lo, hi) = self.base_size_range;
        if lo == 0 || lo > hi {
            return Err(arg(format!("empty base size range [{lo}, {hi}]")));
        }
        Ok(())
    }
}

/// Per-graph generation record, kept alongside the dataset for diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpmotifMeta {
    pub base: BaseKind,
    pub motif: MotifKind,
    pub base_nodes: usize,
}

pub fn generate_spmotif<T: Scalar>(cfg: &SpmotifConfig) -> Result<Dataset<T>> {
    Ok(generate_spmotif_with_meta(cfg)?.0)
}

pub fn generate_spmotif_with_meta<T: Scalar>(cfg: &SpmotifConfig) -> Result<(Dataset<T>, Vec<SpmotifMeta>)> {
    cfg.validate()?;
    let mut order_rng = rng::rng(rng::derive(cfg.seed, u64::MAX));
    let mut labels: Vec<usize> = (0..cfg.n_graphs).map(|i| i % NUM_CLASSES).collect();
    labels.shuffle(&mut order_rng);
    let (graphs, meta): (Vec<_>, Vec<_>) = labels
        .iter()
        .enumerate()
        .map(|(i, &label)| one_graph(cfg, label, rng::derive(cfg.seed, i as u64)))
        .unzip();
    Ok((Dataset::new(graphs, FEATURE_DIM, NUM_CLASSES), meta))
}

fn one_graph<T: Scalar>(cfg: &SpmotifConfig, label: usize, seed: u64) -> (Graph<T>, SpmotifMeta) {
    let mut r = rng::rng(seed);
    let motif = MotifKind::from_class(label);
    let matched = motif.matched_base();
    let base = if r.gen::<f64>() < cfg.bias {
        matched
    } else {
        let others: Vec<BaseKind> = BaseKind::ALL.into_iter().filter(|&b| b != matched).collect();
        others[r.gen_range(0..others.len())]
    };
    let size = r.gen_range(cfg.base_size_range.0..=cfg.base_size_range.1);
    let (nb, base_edges) = base.build(size);
    let (nm, motif_edges) = motif.build();
    let n = nb + nm;

    let bridge = (r.gen_range(0..nb), nb + r.gen_range(0..nm));
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut r);

    let mut adj = Matrix::zeros(n, n);
    let mut mask = Matrix::zeros(n, n);
    let mut link = |i: usize, j: usize, invariant: bool| {
        let (a, b) = (perm[i], perm[j]);
        adj[(a, b)] = T::one();
        adj[(b, a)] = T::one();
        if invariant {
            mask[(a, b)] = T::one();
            mask[(b, a)] = T::one();
        }
    };
    for &(i, j) in &base_edges {
        link(i, j, false);
    }
    for &(i, j) in &motif_edges {
        link(nb + i, nb + j, true);
    }
    link(bridge.0, bridge.1, false);

    let mut features = Matrix::zeros(n, FEATURE_DIM);
    for i in 0..n {
        for d in 0..FEATURE_DIM {
            features[(perm[i], d)] = T::lit(r.gen::<f64>());
        }
    }
    if cfg.mixed && r.gen::<f64>() < cfg.bias {
        let tag = T::lit(label as f64 / 10.0);
        for i in 0..nb {
            features[(perm[i], 0)] = tag;
        }
    }

    let g = Graph { adjacency: adj, features, label: Some(label), env_id: None, gt_mask: Some(mask) };
    (g, SpmotifMeta { base, motif, base_nodes: nb })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig {
    pub flip_rate: f64,
    pub seed: u64,
}

/// Replace each label by a uniformly chosen different class with
/// probability `flip_rate`.
pub fn inject_label_noise<T: Scalar>(ds: &Dataset<T>, cfg: &NoiseConfig) -> Result<Dataset<T>> {
    if !(0.0..1.0).contains(&cfg.flip_rate) {
        return Err(arg(format!("flip_rate {} outside [0, 1)", cfg.flip_rate)));
    }
    if ds.num_classes < 2 && cfg.flip_rate > 0.0 {
        return Err(arg("label noise needs at least two classes"));
    }
    let mut r = rng::rng(cfg.seed);
    let mut out = ds.clone();
    for (idx, g) in out.graphs.iter_mut().enumerate() {
        let y = g.label.ok_or_else(|| arg(format!("graph {idx} is unlabeled")))?;
        if r.gen::<f64>() < cfg.flip_rate {
            let shift = r.gen_range(1..ds.num_classes);
            g.label = Some((y + shift) % ds.num_classes);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::validate_graph;

    #[test]
    fn motif_edge_counts() {
        assert_eq!(MotifKind::Cycle.build().1.len(), 5);
        assert_eq!(MotifKind::House.build().1.len(), 6);
        assert_eq!(MotifKind::Crane.build().1.len(), 7);
    }

    #[test]
    fn generated_graphs_are_valid_and_masked() {
        let cfg = SpmotifConfig { n_graphs: 60, seed: 3, ..Default::default() };
        let (ds, meta) = generate_spmotif_with_meta::<f64>(&cfg).unwrap();
        for (g, m) in ds.graphs.iter().zip(&meta) {
            assert!(validate_graph(g).ok());
            let mask_edges = g.gt_mask.as_ref().unwrap().sum() / 2.0;
            assert_eq!(mask_edges as usize, m.motif.build().1.len());
            assert_eq!(g.label, Some(m.motif as usize));
        }
    }

    #[test]
    fn classes_are_balanced() {
        let cfg = SpmotifConfig { n_graphs: 100, seed: 1, ..Default::default() };
        let ds = generate_spmotif::<f64>(&cfg).unwrap();
        let mut counts = [0usize; 3];
        for g in &ds.graphs {
            counts[g.label.unwrap()] += 1;
        }
        assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
    }

    #[test]
    fn config_validation() {
        let bad = SpmotifConfig { bias: 0.2, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = SpmotifConfig { n_graphs: 2, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = SpmotifConfig { base_size_range: (9, 4), ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn zero_flip_rate_is_identity() {
        let ds = generate_spmotif::<f64>(&SpmotifConfig { n_graphs: 30, ..Default::default() }).unwrap();
        let out = inject_label_noise(&ds, &NoiseConfig { flip_rate: 0.0, seed: 9 }).unwrap();
        assert_eq!(out, ds);
    }

    #[test]
    fn unlabeled_graph_rejected() {
        let mut ds = generate_spmotif::<f64>(&SpmotifConfig { n_graphs: 3, ..Default::default() }).unwrap();
        ds.graphs[1].label = None;
        assert!(inject_label_noise(&ds, &NoiseConfig { flip_rate: 0.1, seed: 0 }).is_err());
    }
}
