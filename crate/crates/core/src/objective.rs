//! PNS risk, the penalized training objective, the training loop, and an
//! empirical check of the risk-transfer bound between environments.
//!
//! The structure penalty is measured on the expected subgraph the
//! sufficient extractor keeps, `M = σ(Z Zᵀ) ⊙ A`. Only the adjacency slice
//! of the collection tensor depends on `M`, so its PMP coordinates are
//! rebuilt on the tape each step:
//!
//! ```text
//! h₀(M)    = Σ M
//! h_ab(M)  = Σ (1 + M) ⊙ (M^∘b · M^∘a),   M^∘0 = J
//! ```
//!
//! Every other coordinate is a constant of the raw graph and is cached.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{arg, Error, Result};
use crate::graph::{split_environments, Dataset, EnvBatchPair, Graph};
use crate::gsd::{feature_expectation, gsd_from_parts};
use crate::matrix::Matrix;
use crate::model::{
    classifier_tape, classify_subgraph, draw_noise, edge_scores_tape, extract_edge_probs, mask_tape, sample_subgraph,
    ClassifierParams, ModelDims, ModelParams, ModelVars, DEFAULT_WALK_STEPS,
};
use crate::pmp::{channel_exponent_classes, embed_all, embed_unsorted, MultiIndexFamily, PmpConfig, DEFAULT_MAX_PAIRS};
use crate::rng;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PnsRiskValue<T> {
    pub sf_term: T,
    pub nc_term: T,
    pub total: T,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Surrogate {
    Indicator,
    CrossEntropy { c_max: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown<T> {
    pub pns_risk: PnsRiskValue<T>,
    pub gsd_penalty: T,
    pub k: T,
    pub total: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    Full,
    /// Structure penalty removed (`K = 0`).
    NoBound,
    /// Spurious-ensemble stage removed.
    NoEnsemble,
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Ablation::Full => "full",
            Ablation::NoBound => "no_bound",
            Ablation::NoEnsemble => "no_ensemble",
        })
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Ablation::Full),
            "no_bound" => Ok(Ablation::NoBound),
            "no_ensemble" => Ok(Ablation::NoEnsemble),
            other => Err(arg(format!("unknown ablation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Penalty weight. Raw structure distances between motif-graph batches
    /// run to 1e5 and beyond, so useful values are small.
    pub k: f64,
    /// Graphs per optimizer step; an epoch has `|ds| / batch_size` steps.
    pub batch_size: usize,
    /// Sizes of the two environment subsets drawn each step.
    pub env_subset_sizes: (usize, usize),
    pub tau_start: f64,
    pub tau_decay: f64,
    pub tau_min: f64,
    pub c_max: f64,
    pub seed: u64,
    pub ablation: Ablation,
    /// Straight-through hard masks during training.
    pub hard_masks: bool,
    pub train_samples: usize,
    pub eval_samples: usize,
    pub degree_cap: usize,
    pub extractor_hidden: Vec<usize>,
    pub classifier_hidden: Vec<usize>,
    pub walk_steps: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            lr: 0.01,
            k: 3e-5,
            batch_size: 32,
            env_subset_sizes: (32, 32),
            tau_start: 1.0,
            tau_decay: 0.97,
            tau_min: 0.3,
            c_max: 3.0,
            seed: 0,
            ablation: Ablation::Full,
            hard_masks: false,
            train_samples: 1,
            eval_samples: 16,
            degree_cap: 2,
            extractor_hidden: vec![32, 16],
            classifier_hidden: vec![32, 32],
            walk_steps: DEFAULT_WALK_STEPS,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(arg("lr must be finite and >= 0"));
        }
        if !(self.k >= 0.0 && self.k.is_finite()) {
            return Err(arg("K must be finite and >= 0"));
        }
        if !(self.c_max > 0.0) {
            return Err(arg("c_max must be > 0"));
        }
        if !(self.tau_start > 0.0 && self.tau_min > 0.0 && self.tau_decay > 0.0) {
            return Err(arg("temperature schedule must be positive"));
        }
        if self.batch_size == 0 || self.env_subset_sizes.0 == 0 || self.env_subset_sizes.1 == 0 {
            return Err(arg("batch and subset sizes must be >= 1"));
        }
        if self.train_samples == 0 || self.eval_samples == 0 {
            return Err(arg("sample counts must be >= 1"));
        }
        if self.extractor_hidden.is_empty() || self.classifier_hidden.is_empty() {
            return Err(arg("hidden layer lists must be non-empty"));
        }
        Ok(())
    }

    /// Penalty weight after applying the ablation.
    pub fn effective_k(&self) -> f64 {
        if self.ablation == Ablation::NoBound {
            0.0
        } else {
            self.k
        }
    }

    pub fn tau_at(&self, epoch: usize) -> f64 {
        (self.tau_start * self.tau_decay.powi(epoch as i32)).max(self.tau_min)
    }

    pub fn model_dims(&self, feature_dim: usize, num_classes: usize) -> ModelDims {
        ModelDims {
            feature_dim,
            num_classes,
            extractor_hidden: self.extractor_hidden.clone(),
            classifier_hidden: self.classifier_hidden.clone(),
            walk_steps: self.walk_steps,
        }
    }
}

fn label_of<T>(g: &Graph<T>, idx: usize) -> Result<usize> {
    g.label.ok_or_else(|| arg(format!("graph {idx} has no label")))
}

fn argmax<T: Scalar>(p: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// Per-graph outcomes of both branches under hard masks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphOutcome {
    pub sf_wrong: f64,
    pub nc_right: f64,
    pub sf_ce: f64,
    pub nc_ce: f64,
}

pub fn graph_outcome<T: Scalar>(g: &Graph<T>, y: usize, mp: &ModelParams<T>, n_samples: usize, seed: u64) -> Result<GraphOutcome> {
    if n_samples == 0 {
        return Err(arg("n_samples must be >= 1"));
    }
    let ep_sf = extract_edge_probs(g, &mp.extractor_sf)?;
    let ep_nc = extract_edge_probs(g, &mp.extractor_nc)?;
    let mut o = GraphOutcome { sf_wrong: 0.0, nc_right: 0.0, sf_ce: 0.0, nc_ce: 0.0 };
    for s in 0..n_samples as u64 {
        let m_sf = sample_subgraph(&ep_sf, g, T::one(), true, rng::derive(seed, 2 * s))?;
        let m_nc = sample_subgraph(&ep_nc, g, T::one(), true, rng::derive(seed, 2 * s + 1))?;
        let p_sf = classify_subgraph(g, &m_sf, &mp.classifier_sf)?;
        let p_nc = classify_subgraph(g, &m_nc, &mp.classifier_nc)?;
        o.sf_wrong += f64::from(u8::from(argmax(&p_sf) != y));
        o.nc_right += f64::from(u8::from(argmax(&p_nc) == y));
        o.sf_ce += -p_sf[y].as_f64().max(f64::MIN_POSITIVE).ln();
        o.nc_ce += -p_nc[y].as_f64().max(f64::MIN_POSITIVE).ln();
    }
    let n = n_samples as f64;
    o.sf_wrong /= n;
    o.nc_right /= n;
    o.sf_ce /= n;
    o.nc_ce /= n;
    Ok(o)
}

impl GraphOutcome {
    fn terms(&self, surrogate: Surrogate) -> (f64, f64) {
        match surrogate {
            Surrogate::Indicator => (self.sf_wrong, self.nc_right),
            Surrogate::CrossEntropy { c_max } => (self.sf_ce, (c_max - self.nc_ce).max(0.0)),
        }
    }
}

pub fn pns_risk<T: Scalar>(
    batch: &[&Graph<T>],
    mp: &ModelParams<T>,
    n_samples: usize,
    surrogate: Surrogate,
    seed: u64,
) -> Result<PnsRiskValue<T>> {
    if batch.is_empty() {
        return Err(arg("empty batch"));
    }
    let labels = batch.iter().enumerate().map(|(i, g)| label_of(g, i)).collect::<Result<Vec<_>>>()?;
    let outcomes = batch
        .par_iter()
        .zip(&labels)
        .enumerate()
        .map(|(i, (g, &y))| graph_outcome(g, y, mp, n_samples, rng::derive(seed, i as u64)))
        .collect::<Result<Vec<_>>>()?;
    let n = batch.len() as f64;
    let (sf, nc) = outcomes.iter().fold((0.0, 0.0), |(a, b), o| {
        let (s, c) = o.terms(surrogate);
        (a + s, b + c)
    });
    let (sf, nc) = (T::lit(sf / n), T::lit(nc / n));
    Ok(PnsRiskValue { sf_term: sf, nc_term: nc, total: sf + nc })
}

/// Cached constant PMP coordinates and the adjacency-slice exponent classes.
#[derive(Debug, Clone)]
pub struct PenaltyCache<T> {
    family: MultiIndexFamily,
    /// `(a, b)` exponents of the adjacency slice with their multiplicities.
    classes: Vec<((u32, u32), usize)>,
    adj_channel: usize,
    base: Vec<Vec<T>>,
}

impl<T: Scalar> PenaltyCache<T> {
    pub fn new(graphs: &[&Graph<T>], degree_cap: usize) -> Result<Self> {
        let d = graphs.first().map_or(0, |g| g.feature_dim());
        let family = MultiIndexFamily::new(d + 2, degree_cap, DEFAULT_MAX_PAIRS)?;
        let classes = channel_exponent_classes(&family, d);
        let base = graphs.par_iter().map(|g| embed_unsorted(g, &family)).collect();
        Ok(Self { family, classes, adj_channel: d, base })
    }

    /// L1 distance over the coordinates that do not depend on the extractor.
    fn constant_l1(&self, i: usize, j: usize) -> T {
        let c = self.family.channels;
        self.base[i]
            .iter()
            .zip(&self.base[j])
            .enumerate()
            .filter(|(k, _)| k % c != self.adj_channel)
            .fold(T::zero(), |acc, (_, (&x, &y))| acc + (x - y).abs())
    }

    /// Multiplicity of each tape coordinate: block 0, then each class.
    fn multiplicities(&self) -> Vec<T> {
        std::iter::once(T::one()).chain(self.classes.iter().map(|&(_, m)| T::from_usize_lossy(m))).collect()
    }
}

#[derive(Debug, Clone, Copy)]
struct StepOpts<T> {
    tau: T,
    hard: bool,
    c_max: T,
    k: T,
    samples: usize,
}

struct Forward<T> {
    tape: Tape<T>,
    vars: ModelVars,
    risk: Option<Var>,
    sf_ce: T,
    nc_sur: T,
    sf_correct: usize,
    h: Vec<Var>,
    hv: Vec<T>,
}

fn forward_graph<T: Scalar>(
    g: &Graph<T>,
    label: Option<usize>,
    mp: &ModelParams<T>,
    opts: &StepOpts<T>,
    cache: &PenaltyCache<T>,
    seed: u64,
) -> Forward<T> {
    let mut tape = Tape::new();
    let vars = mp.on_tape(&mut tape);
    let a = tape.constant(g.adjacency.clone());
    let x = tape.constant(g.features.clone());
    let support = tape.constant(g.support());
    let scores = edge_scores_tape(&mut tape, a, x, &vars.extractor_sf);

    let (mut risk, mut sf_ce, mut nc_sur, mut sf_correct) = (None, T::zero(), T::zero(), 0);
    if let Some(y) = label {
        let scores_nc = edge_scores_tape(&mut tape, a, x, &vars.extractor_nc);
        let inv_s = T::one() / T::from_usize_lossy(opts.samples);
        let mut acc: Option<Var> = None;
        for s in 0..opts.samples as u64 {
            let noise_sf = draw_noise(g, rng::derive(seed, 2 * s));
            let noise_nc = draw_noise(g, rng::derive(seed, 2 * s + 1));
            let m_sf = mask_tape(&mut tape, scores, &noise_sf, support, opts.tau, opts.hard);
            let w_sf = tape.mul(m_sf, a);
            let lp_sf = classifier_tape(&mut tape, w_sf, x, &vars.classifier_sf);
            let m_nc = mask_tape(&mut tape, scores_nc, &noise_nc, support, opts.tau, opts.hard);
            let w_nc = tape.mul(m_nc, a);
            let lp_nc = classifier_tape(&mut tape, w_nc, x, &vars.classifier_nc);

            let p_sf = tape.pick(lp_sf, 0, y);
            let ce_sf = tape.scale(p_sf, -T::one());
            let p_nc = tape.pick(lp_nc, 0, y);
            // c_max − CE = c_max + log p
            let gap = tape.shift(p_nc, opts.c_max);
            let sur = tape.relu(gap);
            let term = tape.add(ce_sf, sur);
            acc = Some(match acc {
                Some(prev) => tape.add(prev, term),
                None => term,
            });
            sf_ce += tape.scalar(ce_sf) * inv_s;
            nc_sur += tape.scalar(sur) * inv_s;
            if argmax(tape.value(lp_sf).row(0)) == y {
                sf_correct += 1;
            }
        }
        risk = acc.map(|v| tape.scale(v, inv_s));
    }

    let probs = tape.sigmoid(scores);
    let m = tape.mul(probs, a);
    let mut h = vec![tape.sum_all(m)];
    let gate = tape.shift(m, T::one());
    let n = g.node_count();
    let mut powers = vec![tape.constant(Matrix::filled(n, n, T::one())), m];
    for _ in 2..=cache.family.degree_cap {
        let prev = *powers.last().unwrap();
        powers.push(tape.mul(prev, m));
    }
    for &((ea, eb), _) in &cache.classes {
        let z = tape.matmul(powers[eb as usize], powers[ea as usize]);
        let gz = tape.mul(gate, z);
        h.push(tape.sum_all(gz));
    }
    let hv = h.iter().map(|&v| tape.scalar(v)).collect();
    Forward { tape, vars, risk, sf_ce, nc_sur, sf_correct, h, hv }
}

struct Evaluation<T> {
    breakdown: LossBreakdown<T>,
    grad: Option<ModelParams<T>>,
    sf_correct: usize,
    seen: usize,
}

fn evaluate_pair<T: Scalar>(
    batch_a: &[(&Graph<T>, usize)],
    batch_b: &[(&Graph<T>, usize)],
    mp: &ModelParams<T>,
    opts: &StepOpts<T>,
    cache: &PenaltyCache<T>,
    seed: u64,
    want_grad: bool,
) -> Result<Evaluation<T>> {
    if batch_a.is_empty() || batch_b.is_empty() {
        return Err(arg("environment batches must be non-empty"));
    }
    let labels = batch_a.iter().enumerate().map(|(i, (g, _))| label_of(g, i)).collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(&Graph<T>, Option<usize>, u64)> = batch_a
        .iter()
        .zip(&labels)
        .enumerate()
        .map(|(p, ((g, _), &y))| (*g, Some(y), rng::derive(seed, p as u64)))
        .chain(batch_b.iter().map(|(g, _)| (*g, None, 0)))
        .collect();
    let mut fwd: Vec<Forward<T>> =
        jobs.par_iter().map(|&(g, y, s)| forward_graph(g, y, mp, opts, cache, s)).collect();

    let (na, nb) = (batch_a.len(), batch_b.len());
    let inv_pairs = T::one() / T::from_usize_lossy(na * nb);
    let mult = cache.multiplicities();
    let nq = mult.len();
    let mut weights = vec![vec![T::zero(); nq]; na + nb];
    let mut pair_terms = Vec::with_capacity(na * nb);
    for i in 0..na {
        for j in 0..nb {
            let mut term = cache.constant_l1(batch_a[i].1, batch_b[j].1);
            for q in 0..nq {
                let diff = fwd[i].hv[q] - fwd[na + j].hv[q];
                term += mult[q] * diff.abs();
                let s = mult[q] * inv_pairs * diff.signum_or_zero();
                weights[i][q] += s;
                weights[na + j][q] -= s;
            }
            pair_terms.push(term);
        }
    }
    let structure = crate::scalar::multiset_sum(&mut pair_terms) * inv_pairs;
    let ga: Vec<&Graph<T>> = batch_a.iter().map(|(g, _)| *g).collect();
    let gb: Vec<&Graph<T>> = batch_b.iter().map(|(g, _)| *g).collect();
    let penalty = structure + feature_expectation(&ga, &gb)?;

    let inv_a = T::one() / T::from_usize_lossy(na);
    let sf_term = fwd[..na].iter().fold(T::zero(), |acc, f| acc + f.sf_ce) * inv_a;
    let nc_term = fwd[..na].iter().fold(T::zero(), |acc, f| acc + f.nc_sur) * inv_a;
    let risk = PnsRiskValue { sf_term, nc_term, total: sf_term + nc_term };
    let total = risk.total + opts.k * penalty;
    let breakdown = LossBreakdown { pns_risk: risk, gsd_penalty: penalty, k: opts.k, total };
    if !total.is_finite() {
        return Err(Error::Numeric { path: "total loss".into() });
    }
    let sf_correct = fwd[..na].iter().map(|f| f.sf_correct).sum();
    let seen = na * opts.samples;
    if !want_grad {
        return Ok(Evaluation { breakdown, grad: None, sf_correct, seen });
    }

    let k = opts.k;
    let parts: Vec<Option<ModelParams<T>>> = fwd
        .par_iter_mut()
        .zip(weights.par_iter())
        .map(|(f, w)| {
            let tape = &mut f.tape;
            let mut root = f.risk.map(|r| tape.scale(r, inv_a));
            if k > T::zero() {
                for (&hq, &wq) in f.h.iter().zip(w) {
                    if wq != T::zero() {
                        let t = tape.scale(hq, k * wq);
                        root = Some(match root {
                            Some(prev) => tape.add(prev, t),
                            None => t,
                        });
                    }
                }
            }
            root.map(|r| mp.collect(&f.vars, &tape.backward(r)))
        })
        .collect();
    let mut grad = mp.zeros_like();
    for p in parts.into_iter().flatten() {
        grad.add_scaled(&p, T::one());
    }
    grad.check_finite()?;
    Ok(Evaluation { breakdown, grad: Some(grad), sf_correct, seen })
}

trait SignumOrZero {
    fn signum_or_zero(self) -> Self;
}

impl<T: Scalar> SignumOrZero for T {
    fn signum_or_zero(self) -> T {
        if self > T::zero() {
            T::one()
        } else if self < T::zero() {
            -T::one()
        } else {
            T::zero()
        }
    }
}

fn step_opts<T: Scalar>(cfg: &TrainConfig, tau: f64) -> StepOpts<T> {
    StepOpts {
        tau: T::lit(tau),
        hard: cfg.hard_masks,
        c_max: T::lit(cfg.c_max),
        k: T::lit(cfg.effective_k()),
        samples: cfg.train_samples,
    }
}

fn pair_members<'a, T: Scalar>(pair: &EnvBatchPair<'a, T>) -> (Vec<(&'a Graph<T>, usize)>, Vec<(&'a Graph<T>, usize)>, Vec<&'a Graph<T>>) {
    let na = pair.batch_a.len();
    let a = pair.batch_a.iter().enumerate().map(|(i, g)| (*g, i)).collect();
    let b = pair.batch_b.iter().enumerate().map(|(j, g)| (*g, na + j)).collect();
    let all = pair.batch_a.iter().chain(&pair.batch_b).copied().collect();
    (a, b, all)
}

/// Training objective on one environment pair at temperature `cfg.tau_start`.
///
/// Risk uses the cross-entropy surrogate on `batch_a`; the penalty is the
/// structure distance between the expected extracted subgraphs of both
/// batches plus the feature term.
pub fn total_loss<T: Scalar>(pair: &EnvBatchPair<'_, T>, mp: &ModelParams<T>, cfg: &TrainConfig, seed: u64) -> Result<LossBreakdown<T>> {
    cfg.validate()?;
    let (a, b, all) = pair_members(pair);
    let cache = PenaltyCache::new(&all, cfg.degree_cap)?;
    let opts = step_opts(cfg, cfg.tau_start);
    Ok(evaluate_pair(&a, &b, mp, &opts, &cache, seed, false)?.breakdown)
}

/// [`total_loss`] together with its gradient for fixed sampling noise.
pub fn total_loss_grad<T: Scalar>(
    pair: &EnvBatchPair<'_, T>,
    mp: &ModelParams<T>,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(LossBreakdown<T>, ModelParams<T>)> {
    cfg.validate()?;
    let (a, b, all) = pair_members(pair);
    let cache = PenaltyCache::new(&all, cfg.degree_cap)?;
    let opts = step_opts(cfg, cfg.tau_start);
    let ev = evaluate_pair(&a, &b, mp, &opts, &cache, seed, true)?;
    Ok((ev.breakdown, ev.grad.expect("gradient requested")))
}

/// Adaptive-moment optimizer over a fixed list of matrices.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    lr: T,
    beta1: T,
    beta2: T,
    eps: T,
    t: i32,
    m: Vec<Matrix<T>>,
    v: Vec<Matrix<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new<'a>(lr: f64, shapes: impl IntoIterator<Item = &'a Matrix<T>>) -> Self {
        let m: Vec<Matrix<T>> = shapes.into_iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
        Self { lr: T::lit(lr), beta1: T::lit(0.9), beta2: T::lit(0.999), eps: T::lit(1e-8), t: 0, v: m.clone(), m }
    }

    pub fn step(&mut self, params: Vec<&mut Matrix<T>>, grads: Vec<&Matrix<T>>) {
        self.t += 1;
        let c1 = T::one() - self.beta1.powi(self.t);
        let c2 = T::one() - self.beta2.powi(self.t);
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((pv, &gv), mv), vv) in p
                .as_mut_slice()
                .iter_mut()
                .zip(g.as_slice())
                .zip(m.as_mut_slice())
                .zip(v.as_mut_slice())
            {
                *mv = self.beta1 * *mv + (T::one() - self.beta1) * gv;
                *vv = self.beta2 * *vv + (T::one() - self.beta2) * gv * gv;
                let mhat = *mv / c1;
                let vhat = *vv / c2;
                *pv -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// One structured record per epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub tau: f64,
    pub sf_loss: f64,
    pub nc_loss: f64,
    pub gsd_penalty: f64,
    pub total: f64,
    pub train_acc: f64,
}

#[derive(Debug, Clone)]
pub struct FitOutcome<T> {
    pub params: ModelParams<T>,
    pub log: Vec<EpochLog>,
}

impl<T> FitOutcome<T> {
    /// Line-delimited JSON, one record per epoch.
    pub fn log_lines(&self) -> String {
        self.log.iter().map(|r| serde_json::to_string(r).expect("log record") + "\n").collect()
    }
}

fn check_labeled<T>(ds: &Dataset<T>) -> Result<()> {
    for (i, g) in ds.graphs.iter().enumerate() {
        let y = label_of(g, i)?;
        if y >= ds.num_classes {
            return Err(arg(format!("graph {i}: label {y} >= {}", ds.num_classes)));
        }
    }
    Ok(())
}

pub fn fit<T: Scalar>(ds: &Dataset<T>, cfg: &TrainConfig) -> Result<FitOutcome<T>> {
    let init = ModelParams::init(&cfg.model_dims(ds.feature_dim, ds.num_classes), rng::derive(cfg.seed, 1));
    fit_from(ds, cfg, init)
}

/// Train starting from given parameters.
pub fn fit_from<T: Scalar>(ds: &Dataset<T>, cfg: &TrainConfig, init: ModelParams<T>) -> Result<FitOutcome<T>> {
    cfg.validate()?;
    check_labeled(ds)?;
    let (sa, sb) = cfg.env_subset_sizes;
    if ds.len() < sa + sb {
        return Err(arg(format!("dataset of {} graphs is smaller than subsets {sa}+{sb}", ds.len())));
    }
    let mut mp = init;
    mp.validate()?;
    let refs: Vec<&Graph<T>> = ds.graphs.iter().collect();
    let cache = PenaltyCache::new(&refs, cfg.degree_cap)?;
    let mut adam = Adam::new(cfg.lr, mp.named_matrices().into_iter().map(|(_, m)| m));
    let steps = (ds.len() / cfg.batch_size).max(1);
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let tau = cfg.tau_at(epoch);
        let opts = step_opts::<T>(cfg, tau);
        let (mut sf, mut nc, mut pen, mut tot) = (0.0, 0.0, 0.0, 0.0);
        let (mut correct, mut seen) = (0, 0);
        for step in 0..steps {
            let stream = (epoch * steps + step) as u64;
            let pair = split_environments(ds, sa, sb, rng::derive(cfg.seed, 2 * stream + 1000))?;
            let a: Vec<_> = pair.batch_a.iter().copied().zip(pair.index_a.iter().copied()).collect();
            let b: Vec<_> = pair.batch_b.iter().copied().zip(pair.index_b.iter().copied()).collect();
            let ev = evaluate_pair(&a, &b, &mp, &opts, &cache, rng::derive(cfg.seed, 2 * stream + 1001), true)
                .map_err(|e| match e {
                    Error::Numeric { path } => Error::Numeric { path: format!("{path} (epoch {epoch}, step {step})") },
                    other => other,
                })?;
            let grad = ev.grad.expect("gradient requested");
            let names = grad.named_matrices();
            adam.step(
                mp.named_matrices_mut().into_iter().map(|(_, m)| m).collect(),
                names.iter().map(|(_, m)| *m).collect(),
            );
            let bd = ev.breakdown;
            sf += bd.pns_risk.sf_term.as_f64();
            nc += bd.pns_risk.nc_term.as_f64();
            pen += bd.gsd_penalty.as_f64();
            tot += bd.total.as_f64();
            correct += ev.sf_correct;
            seen += ev.seen;
        }
        mp.check_finite().map_err(|e| match e {
            Error::Numeric { path } => Error::Numeric { path: format!("{path} after epoch {epoch}") },
            other => other,
        })?;
        let s = steps as f64;
        log.push(EpochLog {
            epoch,
            tau,
            sf_loss: sf / s,
            nc_loss: nc / s,
            gsd_penalty: pen / s,
            total: tot / s,
            train_acc: correct as f64 / seen as f64,
        });
    }
    Ok(FitOutcome { params: mp, log })
}

/// Settings for plain supervised classifier training.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub hidden: Vec<usize>,
    pub walk_steps: usize,
    pub seed: u64,
}

impl Default for ClassifierTrainConfig {
    fn default() -> Self {
        Self { epochs: 30, lr: 0.01, batch_size: 32, hidden: vec![32, 32], walk_steps: DEFAULT_WALK_STEPS, seed: 0 }
    }
}

/// A graph to classify, its edge weights (`None` = the full adjacency), and a target.
#[derive(Debug, Clone, Copy)]
pub struct ClassifierItem<'a, T> {
    pub graph: &'a Graph<T>,
    pub weights: Option<&'a Matrix<T>>,
    pub label: usize,
}

fn item_weights<T: Scalar>(it: &ClassifierItem<'_, T>) -> Matrix<T> {
    match it.weights {
        Some(w) => w.zip_map(&it.graph.adjacency, |a, b| a * b),
        None => it.graph.adjacency.clone(),
    }
}

/// Cross-entropy training of a single classifier with Adam.
/// Returns the parameters and the mean loss of each epoch.
pub fn fit_classifier<T: Scalar>(
    items: &[ClassifierItem<'_, T>],
    num_classes: usize,
    cfg: &ClassifierTrainConfig,
) -> Result<(ClassifierParams<T>, Vec<f64>)> {
    let Some(first) = items.first() else { return Err(arg("no training items")) };
    if !(cfg.lr >= 0.0) || cfg.batch_size == 0 || cfg.hidden.is_empty() {
        return Err(arg("invalid classifier training config"));
    }
    if let Some(it) = items.iter().find(|it| it.label >= num_classes) {
        return Err(arg(format!("label {} >= {num_classes}", it.label)));
    }
    let dims: Vec<usize> = std::iter::once(first.graph.feature_dim() + cfg.walk_steps).chain(cfg.hidden.iter().copied()).collect();
    let mut cp = ClassifierParams::glorot(&dims, num_classes, rng::derive(cfg.seed, 1));
    let mut adam = Adam::new(cfg.lr, cp.named_matrices().into_iter().map(|(_, m)| m));
    let weights: Vec<Matrix<T>> = items.iter().map(item_weights).collect();
    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng::rng(rng::derive(cfg.seed, 100 + epoch as u64)));
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let inv = T::one() / T::from_usize_lossy(chunk.len());
            let parts: Vec<(T, ClassifierParams<T>)> = chunk
                .par_iter()
                .map(|&i| {
                    let mut tape = Tape::new();
                    let vars = cp.on_tape(&mut tape, true);
                    let w = tape.constant(weights[i].clone());
                    let x = tape.constant(items[i].graph.features.clone());
                    let lp = classifier_tape(&mut tape, w, x, &vars);
                    let p = tape.pick(lp, 0, items[i].label);
                    let loss = tape.scale(p, -inv);
                    (-tape.scalar(p), cp.collect(&vars, &tape.backward(loss)))
                })
                .collect();
            let mut grad = parts[0].1.clone();
            for (_, m) in grad.named_matrices_mut() {
                m.as_mut_slice().fill(T::zero());
            }
            for (l, g) in &parts {
                total += l.as_f64();
                for ((_, dst), (_, src)) in grad.named_matrices_mut().into_iter().zip(g.named_matrices()) {
                    dst.add_assign(src);
                }
            }
            if let Some((path, _)) = grad.named_matrices().into_iter().find(|(_, m)| !m.is_finite()) {
                return Err(Error::Numeric { path: format!("{path} (epoch {epoch})") });
            }
            let gm = grad.named_matrices();
            adam.step(cp.named_matrices_mut().into_iter().map(|(_, m)| m).collect(), gm.iter().map(|(_, m)| *m).collect());
        }
        losses.push(total / items.len() as f64);
    }
    Ok((cp, losses))
}

/// Risk-transfer bound fit and fresh-pair violation rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub violation_rate: f64,
    pub k: f64,
    pub lambda: f64,
    pub fit_pairs: usize,
    pub fresh_pairs: usize,
}

/// One environment pair: indicator risks on both sides and their distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundSample {
    pub r_a: f64,
    pub r_b: f64,
    pub d: f64,
}

/// Smallest `λ + K·mean(d)` over `K, λ ≥ 0` such that
/// `r_a ≤ r_b + K·d + λ` holds on every sample.
pub fn fit_bound(samples: &[BoundSample]) -> (f64, f64) {
    if samples.is_empty() {
        return (0.0, 0.0);
    }
    let mean_d = samples.iter().map(|s| s.d).sum::<f64>() / samples.len() as f64;
    let lambda_for = |k: f64| samples.iter().map(|s| s.r_a - s.r_b - k * s.d).fold(0.0f64, f64::max);
    // the optimum sits at K = 0 or where two constraints (or one and λ = 0) meet
    let mut cands = vec![0.0];
    for (p, sp) in samples.iter().enumerate() {
        let ep = sp.r_a - sp.r_b;
        if sp.d > 0.0 && ep > 0.0 {
            cands.push(ep / sp.d);
        }
        for sq in &samples[p + 1..] {
            let eq = sq.r_a - sq.r_b;
            let dd = sp.d - sq.d;
            if dd != 0.0 {
                let k = (ep - eq) / dd;
                if k > 0.0 && k.is_finite() {
                    cands.push(k);
                }
            }
        }
    }
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for k in cands {
        let lam = lambda_for(k);
        let obj = lam + k * mean_d;
        if obj < best.0 - 1e-15 || (obj <= best.0 + 1e-15 && k < best.1) {
            best = (obj, k, lam);
        }
    }
    (best.1, best.2)
}

pub fn violation_rate(samples: &[BoundSample], k: f64, lambda: f64) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let bad = samples.iter().filter(|s| s.r_a > s.r_b + k * s.d + lambda + 1e-9).count();
    bad as f64 / samples.len() as f64
}

/// Fit `(K, λ)` on `n_pairs` random environment pairs and report how many of
/// `n_pairs` fresh pairs break `r_a ≤ r_b + K·d + λ`.
pub fn bound_check<T: Scalar>(
    ds: &Dataset<T>,
    mp: &ModelParams<T>,
    n_pairs: usize,
    sizes: (usize, usize),
    seed: u64,
) -> Result<BoundReport> {
    if n_pairs < 10 {
        return Err(arg("bound check needs at least 10 pairs"));
    }
    check_labeled(ds)?;
    let refs: Vec<&Graph<T>> = ds.graphs.iter().collect();
    // per-graph risk and embedding are fixed for a given model and seed
    let risks = refs
        .par_iter()
        .enumerate()
        .map(|(i, g)| {
            let o = graph_outcome(g, g.label.unwrap(), mp, 1, rng::derive(seed, i as u64))?;
            Ok(o.sf_wrong + o.nc_right)
        })
        .collect::<Result<Vec<f64>>>()?;
    let emb = embed_all(&refs, PmpConfig::default())?;
    let mean = |idx: &[usize]| idx.iter().map(|&i| risks[i]).sum::<f64>() / idx.len() as f64;
    let samples = (0..2 * n_pairs)
        .map(|p| {
            let pair = split_environments(ds, sizes.0, sizes.1, rng::derive(seed, (1u64 << 32) + p as u64))?;
            let ea: Vec<_> = pair.index_a.iter().map(|&i| emb[i].clone()).collect();
            let eb: Vec<_> = pair.index_b.iter().map(|&i| emb[i].clone()).collect();
            let feat = feature_expectation(&pair.batch_a, &pair.batch_b)?;
            let d = gsd_from_parts(&ea, &eb, feat)?.total.as_f64();
            Ok(BoundSample { r_a: mean(&pair.index_a), r_b: mean(&pair.index_b), d })
        })
        .collect::<Result<Vec<_>>>()?;
    let (fit_set, fresh) = samples.split_at(n_pairs);
    let (k, lambda) = fit_bound(fit_set);
    Ok(BoundReport { violation_rate: violation_rate(fresh, k, lambda), k, lambda, fit_pairs: n_pairs, fresh_pairs: n_pairs })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ablation_round_trips_through_text() {
        for a in [Ablation::Full, Ablation::NoBound, Ablation::NoEnsemble] {
            assert_eq!(a.to_string().parse::<Ablation>().unwrap(), a);
        }
        assert!("both".parse::<Ablation>().is_err());
    }

    #[test]
    fn tau_schedule_decays_to_floor() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.tau_at(0), 1.0);
        assert!((cfg.tau_at(1) - 0.97).abs() < 1e-15);
        assert_eq!(cfg.tau_at(1000), 0.3);
    }

    #[test]
    fn no_bound_zeroes_k() {
        let cfg = TrainConfig { ablation: Ablation::NoBound, k: 5.0, ..Default::default() };
        assert_eq!(cfg.effective_k(), 0.0);
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(TrainConfig { lr: -1.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { k: -0.1, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { c_max: 0.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn bound_fit_is_tight_on_fitting_set() {
        let samples: Vec<BoundSample> = (0..30)
            .map(|i| {
                let x = i as f64;
                BoundSample { r_a: (x * 0.37).sin().abs(), r_b: (x * 0.11).cos().abs(), d: 0.5 + (x * 0.7).sin().abs() }
            })
            .collect();
        let (k, lambda) = fit_bound(&samples);
        assert!(k >= 0.0 && lambda >= 0.0);
        assert_eq!(violation_rate(&samples, k, lambda), 0.0);
        let lam0 = samples.iter().map(|s| s.r_a - s.r_b).fold(0.0f64, f64::max);
        assert_eq!(violation_rate(&samples, 0.0, lam0), 0.0);
        let mean_d = samples.iter().map(|s| s.d).sum::<f64>() / 30.0;
        assert!(lambda + k * mean_d <= lam0 + 1e-12);
    }

    #[test]
    fn identical_sides_need_no_slack() {
        let s = [BoundSample { r_a: 0.4, r_b: 0.4, d: 0.0 }; 5];
        assert_eq!(fit_bound(&s), (0.0, 0.0));
        assert_eq!(violation_rate(&s, 0.0, 0.0), 0.0);
    }

    fn nc_batch() -> Vec<Graph<f64>> {
        (0..8)
            .map(|i| {
                let n = 4 + i % 3;
                let e: Vec<_> = (0..n - 1).map(|k| (k, k + 1)).chain([(0, n - 1)]).collect();
                let y = i % 2;
                Graph::from_edges(n, &e, Matrix::from_fn(n, 2, |r, c| if c == 0 { y as f64 } else { (r % 3) as f64 / 3.0 })).with_label(y)
            })
            .collect()
    }

    /// Accuracy of the nc branch and the gradient of either its surrogate
    /// or, for `fit_first`, its plain cross-entropy, at fixed soft-mask noise.
    fn nc_step(mp: &ModelParams<f64>, gs: &[Graph<f64>], fit_first: bool) -> (f64, ModelParams<f64>) {
        let mut correct = 0;
        let (_, grad) = crate::model::gradients(mp, |tape, vars| {
            let mut acc = None;
            for (i, g) in gs.iter().enumerate() {
                let y = g.label.unwrap();
                let a = tape.constant(g.adjacency.clone());
                let x = tape.constant(g.features.clone());
                let support = tape.constant(g.support());
                let s = edge_scores_tape(tape, a, x, &vars.extractor_nc);
                let noise = draw_noise(g, i as u64);
                let m = mask_tape(tape, s, &noise, support, 1.0, false);
                let w = tape.mul(m, a);
                let lp = classifier_tape(tape, w, x, &vars.classifier_nc);
                if argmax(tape.value(lp).row(0)) == y {
                    correct += 1;
                }
                let p = tape.pick(lp, 0, y);
                let term = if fit_first {
                    tape.scale(p, -1.0)
                } else {
                    let gap = tape.shift(p, 3.0);
                    tape.relu(gap)
                };
                acc = Some(match acc {
                    Some(prev) => tape.add(prev, term),
                    None => term,
                });
            }
            acc.unwrap()
        })
        .unwrap();
        (correct as f64 / gs.len() as f64, grad)
    }

    #[test]
    fn minimizing_the_nc_surrogate_lowers_nc_accuracy() {
        let gs = nc_batch();
        let mut mp = ModelParams::<f64>::init(&ModelDims { extractor_hidden: vec![8], classifier_hidden: vec![8], ..ModelDims::new(2, 2) }, 3);
        let mut adam = Adam::new(0.01, mp.named_matrices().into_iter().map(|(_, m)| m));
        let mut run = |mp: &mut ModelParams<f64>, fit_first: bool| {
            for _ in 0..50 {
                let (_, g) = nc_step(mp, &gs, fit_first);
                let names = g.named_matrices();
                adam.step(mp.named_matrices_mut().into_iter().map(|(_, m)| m).collect(), names.iter().map(|(_, m)| *m).collect());
            }
            nc_step(mp, &gs, fit_first).0
        };
        let start = run(&mut mp, true);
        let end = run(&mut mp, false);
        assert!(end < start, "{start} -> {end}");
    }

    #[test]
    fn adam_with_zero_lr_is_identity() {
        let mut p = Matrix::<f64>::from_rows(&[vec![1.0, -2.0]]);
        let g = Matrix::from_rows(&[vec![0.5, 0.5]]);
        let before = p.clone();
        let mut opt = Adam::new(0.0, [&p]);
        opt.step(vec![&mut p], vec![&g]);
        assert_eq!(p, before);
    }

    #[test]
    fn adam_moves_against_gradient() {
        let mut p = Matrix::<f64>::from_rows(&[vec![1.0, -2.0]]);
        let g = Matrix::from_rows(&[vec![0.5, -0.5]]);
        let mut opt = Adam::new(0.1, [&p]);
        opt.step(vec![&mut p], vec![&g]);
        assert!((p[(0, 0)] - 0.9).abs() < 1e-7);
        assert!((p[(0, 1)] + 1.9).abs() < 1e-7);
    }
}
