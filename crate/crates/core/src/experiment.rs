//! End-to-end runs: data, training, ensemble, evaluation, ablations, and
//! subgraph visualization.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ensemble::{build_pseudo_dataset, cross_fit_scores, epsilon_stats, fuse_distribution, EpsilonStats};
use crate::error::{arg, Error, Result};
use crate::graph::{Dataset, Graph};
use crate::io::read_dataset;
use crate::metrics::{accuracy, mean_std, roc_auc};
use crate::model::{classify_subgraph, extract_edge_probs, sf_predict, ClassifierParams, ModelParams, SubgraphMask};
use crate::objective::{fit, fit_classifier, Ablation, ClassifierItem, ClassifierTrainConfig, EpochLog, TrainConfig};
use crate::rng;
use crate::scalar::Scalar;
use crate::synth::{generate_spmotif, inject_label_noise, NoiseConfig, SpmotifConfig};

/// Every knob of a run, addressable as a flat `key=value` line.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    pub train: SpmotifConfig,
    pub test: SpmotifConfig,
    pub train_path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
    pub label_noise: f64,
    pub fit: TrainConfig,
    pub spurious_epochs: usize,
    pub spurious_lr: f64,
    /// Cross-fitting folds for the spurious classifier; 1 fits in-sample.
    pub spurious_folds: usize,
    pub erm_epochs: usize,
    pub erm_lr: f64,
    /// Also run ERM and both ablations for comparison.
    pub compare: bool,
    pub parallel_seeds: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seeds: vec![1],
            train: SpmotifConfig { n_graphs: 1000, bias: 0.9, ..Default::default() },
            test: SpmotifConfig { n_graphs: 500, bias: 1.0 / 3.0, ..Default::default() },
            train_path: None,
            test_path: None,
            label_noise: 0.0,
            fit: TrainConfig::default(),
            spurious_epochs: 20,
            spurious_lr: 0.01,
            spurious_folds: 1,
            erm_epochs: 30,
            erm_lr: 0.01,
            compare: false,
            parallel_seeds: false,
        }
    }
}

fn parse<V: std::str::FromStr>(key: &str, v: &str) -> Result<V> {
    v.trim().parse().map_err(|_| arg(format!("bad value `{v}` for `{key}`")))
}

fn parse_list<V: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<V>> {
    v.split(',').filter(|s| !s.trim().is_empty()).map(|s| parse(key, s)).collect()
}

fn join<V: ToString>(xs: &[V]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let f = &mut self.fit;
        match key {
            "seeds" => self.seeds = parse_list(key, v)?,
            "train_graphs" => self.train.n_graphs = parse(key, v)?,
            "test_graphs" => self.test.n_graphs = parse(key, v)?,
            "train_bias" => self.train.bias = parse(key, v)?,
            "test_bias" => self.test.bias = parse(key, v)?,
            "base_size_min" => {
                self.train.base_size_range.0 = parse(key, v)?;
                self.test.base_size_range.0 = self.train.base_size_range.0;
            }
            "base_size_max" => {
                self.train.base_size_range.1 = parse(key, v)?;
                self.test.base_size_range.1 = self.train.base_size_range.1;
            }
            "mixed" => {
                self.train.mixed = parse(key, v)?;
                self.test.mixed = self.train.mixed;
            }
            "train_path" => self.train_path = Some(PathBuf::from(v.trim())),
            "test_path" => self.test_path = Some(PathBuf::from(v.trim())),
            "label_noise" => self.label_noise = parse(key, v)?,
            "epochs" => f.epochs = parse(key, v)?,
            "lr" => f.lr = parse(key, v)?,
            "k" | "K" => f.k = parse(key, v)?,
            "batch_size" => f.batch_size = parse(key, v)?,
            "env_size_a" => f.env_subset_sizes.0 = parse(key, v)?,
            "env_size_b" => f.env_subset_sizes.1 = parse(key, v)?,
            "tau_start" => f.tau_start = parse(key, v)?,
            "tau_decay" => f.tau_decay = parse(key, v)?,
            "tau_min" => f.tau_min = parse(key, v)?,
            "c_max" => f.c_max = parse(key, v)?,
            "seed" => f.seed = parse(key, v)?,
            "ablation" => f.ablation = parse(key, v)?,
            "hard_masks" => f.hard_masks = parse(key, v)?,
            "train_samples" => f.train_samples = parse(key, v)?,
            "eval_samples" => f.eval_samples = parse(key, v)?,
            "degree_cap" => f.degree_cap = parse(key, v)?,
            "extractor_hidden" => f.extractor_hidden = parse_list(key, v)?,
            "classifier_hidden" => f.classifier_hidden = parse_list(key, v)?,
            "walk_steps" => f.walk_steps = parse(key, v)?,
            "spurious_epochs" => self.spurious_epochs = parse(key, v)?,
            "spurious_lr" => self.spurious_lr = parse(key, v)?,
            "spurious_folds" => self.spurious_folds = parse(key, v)?,
            "erm_epochs" => self.erm_epochs = parse(key, v)?,
            "erm_lr" => self.erm_lr = parse(key, v)?,
            "compare" => self.compare = parse(key, v)?,
            "parallel_seeds" => self.parallel_seeds = parse(key, v)?,
            _ => return Err(arg(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Apply `key=value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse { line: i + 1, msg: format!("expected key=value, found `{line}`") })?;
            self.set(k.trim(), v.trim()).map_err(|e| Error::Parse { line: i + 1, msg: e.to_string() })?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path)?)
    }

    /// Canonical `key -> value` echo of the whole configuration.
    pub fn to_pairs(&self) -> BTreeMap<String, String> {
        let f = &self.fit;
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("seeds", join(&self.seeds));
        put("train_graphs", self.train.n_graphs.to_string());
        put("test_graphs", self.test.n_graphs.to_string());
        put("train_bias", self.train.bias.to_string());
        put("test_bias", self.test.bias.to_string());
        put("base_size_min", self.train.base_size_range.0.to_string());
        put("base_size_max", self.train.base_size_range.1.to_string());
        put("mixed", self.train.mixed.to_string());
        if let Some(p) = &self.train_path {
            put("train_path", p.display().to_string());
        }
        if let Some(p) = &self.test_path {
            put("test_path", p.display().to_string());
        }
        put("label_noise", self.label_noise.to_string());
        put("epochs", f.epochs.to_string());
        put("lr", f.lr.to_string());
        put("k", f.k.to_string());
        put("batch_size", f.batch_size.to_string());
        put("env_size_a", f.env_subset_sizes.0.to_string());
        put("env_size_b", f.env_subset_sizes.1.to_string());
        put("tau_start", f.tau_start.to_string());
        put("tau_decay", f.tau_decay.to_string());
        put("tau_min", f.tau_min.to_string());
        put("c_max", f.c_max.to_string());
        put("seed", f.seed.to_string());
        put("ablation", f.ablation.to_string());
        put("hard_masks", f.hard_masks.to_string());
        put("train_samples", f.train_samples.to_string());
        put("eval_samples", f.eval_samples.to_string());
        put("degree_cap", f.degree_cap.to_string());
        put("extractor_hidden", join(&f.extractor_hidden));
        put("classifier_hidden", join(&f.classifier_hidden));
        put("walk_steps", f.walk_steps.to_string());
        put("spurious_epochs", self.spurious_epochs.to_string());
        put("spurious_lr", self.spurious_lr.to_string());
        put("spurious_folds", self.spurious_folds.to_string());
        put("erm_epochs", self.erm_epochs.to_string());
        put("erm_lr", self.erm_lr.to_string());
        put("compare", self.compare.to_string());
        put("parallel_seeds", self.parallel_seeds.to_string());
        m
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(arg("at least one seed is required"));
        }
        if !(0.0..1.0).contains(&self.label_noise) {
            return Err(arg("label_noise must lie in [0, 1)"));
        }
        self.fit.validate()?;
        if self.train_path.is_none() {
            self.train.validate()?;
        }
        if self.test_path.is_none() {
            self.test.validate()?;
        }
        Ok(())
    }
}

/// Test-set metrics of one model variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantMetrics {
    pub train_acc: f64,
    pub test_acc: f64,
    pub test_auc: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mask_auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub seed: u64,
    pub train_acc: f64,
    pub test_acc: f64,
    pub test_auc: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mask_auc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub random_mask_auc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<Vec<EpsilonStats>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub calibration_fallbacks: Option<usize>,
    pub final_epoch: Option<EpochLog>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub variants: BTreeMap<String, VariantMetrics>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    fn of(xs: &[f64]) -> Self {
        let (mean, std) = mean_std(xs);
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failed_stage: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub variant: String,
    pub config: BTreeMap<String, String>,
    pub seeds: Vec<SeedRecord>,
    pub aggregate: BTreeMap<String, MeanStd>,
    /// `test_acc` mean/std of each comparison variant.
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub comparisons: BTreeMap<String, MeanStd>,
}

impl ExperimentReport {
    pub fn ok(&self) -> bool {
        self.status == "ok"
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

fn stage<V>(name: &str, r: Result<V>) -> Result<V> {
    r.map_err(|e| Error::Stage { stage: name.to_string(), source: Box::new(e) })
}

fn load_data<T: Scalar>(cfg: &ExperimentConfig, seed: u64) -> Result<(Dataset<T>, Dataset<T>)> {
    let train = match &cfg.train_path {
        Some(p) => read_dataset(p)?,
        None => generate_spmotif(&SpmotifConfig { seed: rng::derive(seed, 1), ..cfg.train.clone() })?,
    };
    let train = if cfg.label_noise > 0.0 {
        inject_label_noise(&train, &NoiseConfig { flip_rate: cfg.label_noise, seed: rng::derive(seed, 3) })?
    } else {
        train
    };
    let test = match &cfg.test_path {
        Some(p) => read_dataset(p)?,
        None => generate_spmotif(&SpmotifConfig { seed: rng::derive(seed, 2), ..cfg.test.clone() })?,
    };
    if train.feature_dim != test.feature_dim || train.num_classes != test.num_classes {
        return Err(arg("train and test disagree on feature dimension or class count"));
    }
    Ok((train, test))
}

fn labels_of<T: Scalar>(ds: &Dataset<T>) -> Result<Vec<usize>> {
    ds.labels().ok_or_else(|| arg("evaluation needs labelled data"))
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// Macro one-vs-rest ROC-AUC (class 1 for binary tasks); classes missing
/// from the labels are skipped.
pub fn multiclass_auc(probs: &[Vec<f64>], labels: &[usize], num_classes: usize) -> Result<f64> {
    let classes: Vec<usize> = if num_classes == 2 { vec![1] } else { (0..num_classes).collect() };
    let mut aucs = Vec::new();
    for c in classes {
        let scores: Vec<f64> = probs.iter().map(|p| p[c]).collect();
        let pos: Vec<bool> = labels.iter().map(|&y| y == c).collect();
        match roc_auc(&scores, &pos) {
            Ok(a) => aucs.push(a),
            Err(Error::UndefinedMetric(_)) => {}
            Err(e) => return Err(e),
        }
    }
    if aucs.is_empty() {
        return Err(Error::UndefinedMetric("no class has both positives and negatives".into()));
    }
    Ok(aucs.iter().sum::<f64>() / aucs.len() as f64)
}

fn to_f64(p: Vec<impl Scalar>) -> Vec<f64> {
    p.into_iter().map(Scalar::as_f64).collect()
}

/// Invariant-branch class distributions.
pub fn predict_invariant<T: Scalar>(ds: &Dataset<T>, mp: &ModelParams<T>, n_samples: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    use rayon::prelude::*;
    ds.graphs
        .par_iter()
        .enumerate()
        .map(|(i, g)| Ok(to_f64(sf_predict(g, mp, n_samples, rng::derive(seed, i as u64))?)))
        .collect()
}

pub fn predict_full_graph<T: Scalar>(ds: &Dataset<T>, cp: &ClassifierParams<T>) -> Result<Vec<Vec<f64>>> {
    use rayon::prelude::*;
    ds.graphs
        .par_iter()
        .map(|g| {
            let m = SubgraphMask { mask: g.support(), hard: true, temperature: T::one() };
            Ok(to_f64(classify_subgraph(g, &m, cp)?))
        })
        .collect()
}

/// ROC-AUC of the extractor's edge probabilities against ground-truth
/// masks, pooled over every existing edge; `None` without masks.
pub fn mask_recovery_auc<T: Scalar>(ds: &Dataset<T>, mp: &ModelParams<T>) -> Result<Option<f64>> {
    let mut scores = Vec::new();
    let mut truth = Vec::new();
    for g in &ds.graphs {
        let Some(gt) = &g.gt_mask else { return Ok(None) };
        let ep = extract_edge_probs(g, &mp.extractor_sf)?;
        for (i, j) in g.edges() {
            scores.push(ep.probs[(i, j)].as_f64());
            truth.push(gt[(i, j)] > T::zero());
        }
    }
    roc_auc(&scores, &truth).map(Some)
}

/// Same pooled AUC for independent uniform edge scores.
pub fn random_mask_auc<T: Scalar>(ds: &Dataset<T>, seed: u64) -> Result<Option<f64>> {
    use rand::Rng as _;
    let mut r = rng::rng(seed);
    let mut scores = Vec::new();
    let mut truth = Vec::new();
    for g in &ds.graphs {
        let Some(gt) = &g.gt_mask else { return Ok(None) };
        for (i, j) in g.edges() {
            scores.push(r.gen::<f64>());
            truth.push(gt[(i, j)] > T::zero());
        }
    }
    roc_auc(&scores, &truth).map(Some)
}

/// Test-time ensemble over the invariant branch.
pub struct EnsembleResult {
    pub probs: Vec<Vec<f64>>,
    pub invariant_probs: Vec<Vec<f64>>,
    pub epsilon: Vec<EpsilonStats>,
    pub fallbacks: usize,
}

pub fn ensemble_predict<T: Scalar>(
    ds: &Dataset<T>,
    mp: &ModelParams<T>,
    n_samples: usize,
    spurious: &ClassifierTrainConfig,
    folds: usize,
    seed: u64,
) -> Result<EnsembleResult> {
    let pl = build_pseudo_dataset(ds, mp, n_samples, seed)?;
    let invariant_probs: Vec<Vec<f64>> = pl.iter().map(|p| to_f64(p.p_inv.clone())).collect();
    let p_sp = match cross_fit_scores(ds, &pl, spurious, folds, rng::derive(seed, 7)) {
        Ok(p) => p,
        // one pseudo-class leaves nothing to calibrate: keep the invariant scores
        Err(Error::Degenerate(_)) => {
            let n = pl.len();
            return Ok(EnsembleResult { probs: invariant_probs.clone(), invariant_probs, epsilon: Vec::new(), fallbacks: n });
        }
        Err(e) => return Err(e),
    };
    let epsilon = epsilon_stats(&pl, &p_sp, ds.num_classes);
    let mut fallbacks = 0;
    let mut probs = Vec::with_capacity(pl.len());
    for (pi, s) in invariant_probs.iter().zip(&p_sp) {
        let (fused, fb) = fuse_distribution(pi, &to_f64(s.clone()), &epsilon);
        fallbacks += usize::from(fb);
        probs.push(fused);
    }
    Ok(EnsembleResult { probs, invariant_probs, epsilon, fallbacks })
}

struct Evaluated {
    metrics: VariantMetrics,
    epsilon: Option<Vec<EpsilonStats>>,
    fallbacks: Option<usize>,
    invariant: Option<VariantMetrics>,
}

fn eval_pnsis<T: Scalar>(
    cfg: &ExperimentConfig,
    fit_cfg: &TrainConfig,
    train: &Dataset<T>,
    test: &Dataset<T>,
    mp: &ModelParams<T>,
    seed: u64,
) -> Result<Evaluated> {
    let n = fit_cfg.eval_samples;
    let y_train = labels_of(train)?;
    let y_test = labels_of(test)?;
    let train_probs = stage("evaluate", predict_invariant(train, mp, n, rng::derive(seed, 20)))?;
    let preds = |ps: &[Vec<f64>]| ps.iter().map(|p| argmax(p)).collect::<Vec<_>>();
    let train_acc = accuracy(&preds(&train_probs), &y_train);
    let mask_auc = stage("evaluate", mask_recovery_auc(test, mp))?;
    let c = test.num_classes;
    if fit_cfg.ablation == Ablation::NoEnsemble {
        let probs = stage("evaluate", predict_invariant(test, mp, n, rng::derive(seed, 21)))?;
        let m = VariantMetrics {
            train_acc,
            test_acc: accuracy(&preds(&probs), &y_test),
            test_auc: stage("evaluate", multiclass_auc(&probs, &y_test, c))?,
            mask_auc,
        };
        return Ok(Evaluated { metrics: m, epsilon: None, fallbacks: None, invariant: None });
    }
    let sp_cfg = ClassifierTrainConfig {
        epochs: cfg.spurious_epochs,
        lr: cfg.spurious_lr,
        batch_size: fit_cfg.batch_size,
        hidden: fit_cfg.classifier_hidden.clone(),
        walk_steps: fit_cfg.walk_steps,
        seed: rng::derive(seed, 22),
    };
    let ens = stage("ensemble", ensemble_predict(test, mp, n, &sp_cfg, cfg.spurious_folds, rng::derive(seed, 23)))?;
    let metrics = VariantMetrics {
        train_acc,
        test_acc: accuracy(&preds(&ens.probs), &y_test),
        test_auc: stage("evaluate", multiclass_auc(&ens.probs, &y_test, c))?,
        mask_auc,
    };
    let invariant = VariantMetrics {
        train_acc,
        test_acc: accuracy(&preds(&ens.invariant_probs), &y_test),
        test_auc: stage("evaluate", multiclass_auc(&ens.invariant_probs, &y_test, c))?,
        mask_auc,
    };
    Ok(Evaluated { metrics, epsilon: Some(ens.epsilon), fallbacks: Some(ens.fallbacks), invariant: Some(invariant) })
}

fn run_erm<T: Scalar>(cfg: &ExperimentConfig, train: &Dataset<T>, test: &Dataset<T>, seed: u64) -> Result<VariantMetrics> {
    let y_train = labels_of(train)?;
    let y_test = labels_of(test)?;
    let items: Vec<ClassifierItem<'_, T>> = train
        .graphs
        .iter()
        .zip(&y_train)
        .map(|(g, &label)| ClassifierItem { graph: g, weights: None, label })
        .collect();
    let erm_cfg = ClassifierTrainConfig {
        epochs: cfg.erm_epochs,
        lr: cfg.erm_lr,
        batch_size: cfg.fit.batch_size,
        hidden: cfg.fit.classifier_hidden.clone(),
        walk_steps: cfg.fit.walk_steps,
        seed: rng::derive(seed, 30),
    };
    let (cp, _) = fit_classifier(&items, train.num_classes, &erm_cfg)?;
    let tr = predict_full_graph(train, &cp)?;
    let te = predict_full_graph(test, &cp)?;
    let preds = |ps: &[Vec<f64>]| ps.iter().map(|p| argmax(p)).collect::<Vec<_>>();
    Ok(VariantMetrics {
        train_acc: accuracy(&preds(&tr), &y_train),
        test_acc: accuracy(&preds(&te), &y_test),
        test_auc: multiclass_auc(&te, &y_test, test.num_classes)?,
        mask_auc: None,
    })
}

fn run_seed<T: Scalar>(cfg: &ExperimentConfig, seed: u64) -> Result<SeedRecord> {
    let (train, test) = stage("data", load_data::<T>(cfg, seed))?;
    let fit_cfg = TrainConfig { seed: rng::derive(seed, 10), ..cfg.fit.clone() };
    let fitted = stage("fit", fit(&train, &fit_cfg))?;
    let ev = eval_pnsis(cfg, &fit_cfg, &train, &test, &fitted.params, seed)?;
    let random_mask_auc = stage("evaluate", random_mask_auc(&test, rng::derive(seed, 40)))?;

    let mut variants = BTreeMap::new();
    if cfg.compare {
        variants.insert("erm".to_string(), stage("erm", run_erm(cfg, &train, &test, seed))?);
        if fit_cfg.ablation == Ablation::Full {
            if let Some(inv) = &ev.invariant {
                variants.insert(Ablation::NoEnsemble.to_string(), inv.clone());
            }
        }
        if fit_cfg.ablation != Ablation::NoBound {
            let s_cfg = TrainConfig { ablation: Ablation::NoBound, ..fit_cfg.clone() };
            let s_fit = stage("fit_no_bound", fit(&train, &s_cfg))?;
            let s_ev = eval_pnsis(cfg, &s_cfg, &train, &test, &s_fit.params, seed)?;
            variants.insert(Ablation::NoBound.to_string(), s_ev.metrics);
        }
    }
    let m = ev.metrics;
    Ok(SeedRecord {
        seed,
        train_acc: m.train_acc,
        test_acc: m.test_acc,
        test_auc: m.test_auc,
        mask_auc: m.mask_auc,
        random_mask_auc,
        epsilon: ev.epsilon,
        calibration_fallbacks: ev.fallbacks,
        final_epoch: fitted.log.last().cloned(),
        variants,
    })
}

fn aggregate(records: &[SeedRecord]) -> (BTreeMap<String, MeanStd>, BTreeMap<String, MeanStd>) {
    let mut agg = BTreeMap::new();
    let col = |f: &dyn Fn(&SeedRecord) -> Option<f64>| records.iter().filter_map(f).collect::<Vec<f64>>();
    agg.insert("train_acc".into(), MeanStd::of(&col(&|r| Some(r.train_acc))));
    agg.insert("test_acc".into(), MeanStd::of(&col(&|r| Some(r.test_acc))));
    agg.insert("test_auc".into(), MeanStd::of(&col(&|r| Some(r.test_auc))));
    let mask = col(&|r| r.mask_auc);
    if mask.len() == records.len() && !mask.is_empty() {
        agg.insert("mask_auc".into(), MeanStd::of(&mask));
        agg.insert("random_mask_auc".into(), MeanStd::of(&col(&|r| r.random_mask_auc)));
    }
    let mut cmp = BTreeMap::new();
    if let Some(first) = records.first() {
        for name in first.variants.keys() {
            let xs = col(&|r| r.variants.get(name).map(|v| v.test_acc));
            cmp.insert(name.clone(), MeanStd::of(&xs));
        }
    }
    (agg, cmp)
}

/// Run every seed and assemble the report. Stage failures produce a
/// report marked `failed` rather than an error.
pub fn run_experiment<T: Scalar>(cfg: &ExperimentConfig) -> ExperimentReport {
    let mut report = ExperimentReport {
        status: "ok".into(),
        failed_stage: None,
        error: None,
        variant: cfg.fit.ablation.to_string(),
        config: cfg.to_pairs(),
        seeds: Vec::new(),
        aggregate: BTreeMap::new(),
        comparisons: BTreeMap::new(),
    };
    let fail = |report: &mut ExperimentReport, e: Error| {
        report.status = "failed".into();
        report.failed_stage = Some(match &e {
            Error::Stage { stage, .. } => stage.clone(),
            _ => "config".into(),
        });
        report.error = Some(e.to_string());
    };
    if let Err(e) = cfg.validate() {
        fail(&mut report, e);
        return report;
    }
    let results: Vec<Result<SeedRecord>> = if cfg.parallel_seeds {
        use rayon::prelude::*;
        cfg.seeds.par_iter().map(|&s| run_seed::<T>(cfg, s)).collect()
    } else {
        cfg.seeds.iter().map(|&s| run_seed::<T>(cfg, s)).collect()
    };
    for r in results {
        match r {
            Ok(rec) => report.seeds.push(rec),
            Err(e) => {
                fail(&mut report, e);
                return report;
            }
        }
    }
    let (agg, cmp) = aggregate(&report.seeds);
    report.aggregate = agg;
    report.comparisons = cmp;
    report
}

/// Graphviz description of `g` with kept edges marked `invariant=true`.
pub fn subgraph_dot<T: Scalar>(g: &Graph<T>, mask: &SubgraphMask<T>) -> Result<String> {
    let n = g.node_count();
    if mask.mask.shape() != (n, n) {
        return Err(arg("mask shape differs from adjacency"));
    }
    for i in 0..n {
        for j in 0..n {
            if mask.mask[(i, j)] != T::zero() && g.adjacency[(i, j)] == T::zero() {
                return Err(arg(format!("mask keeps non-edge ({i},{j})")));
            }
        }
    }
    let mut out = String::from("graph subgraph {\n");
    for i in 0..n {
        let feats: Vec<String> = g.features.row(i).iter().map(|x| format!("{:.2}", x.as_f64())).collect();
        let _ = writeln!(out, "  n{i} [label=\"{i}: {}\"];", feats.join(" "));
    }
    let half = T::lit(0.5);
    for (i, j) in g.edges() {
        if mask.mask[(i, j)] >= half {
            let _ = writeln!(out, "  n{i} -- n{j} [invariant=true, color=red, penwidth=2];");
        } else {
            let _ = writeln!(out, "  n{i} -- n{j} [invariant=false, color=gray];");
        }
    }
    out.push_str("}\n");
    Ok(out)
}

pub fn export_subgraph_viz<T: Scalar>(g: &Graph<T>, mask: &SubgraphMask<T>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, subgraph_dot(g, mask)?)?;
    Ok(())
}
