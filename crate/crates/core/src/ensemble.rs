//! Pseudo-labelled invariant/spurious pairs, the spurious classifier, and
//! logit fusion of the two classifiers.
//!
//! With `Y` separating the invariant and spurious parts,
//!
//! ```text
//! P(Y | Gc, Gs) = σ( logit P(Y|Gc) + logit P(Y|Gs) − logit P(Y) ).
//! ```
//!
//! The spurious classifier is fit to pseudo-labels, so it estimates
//! `q = P(Ŷ | Gs)` rather than `P(Y | Gs)`. The class-conditional noise
//! correction `(q + TNR − 1) / (TPR + TNR − 1)` undoes this, with the
//! pseudo-labels' TPR and TNR estimated from the invariant classifier's
//! calibrated scores.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Dataset, Graph};
use crate::matrix::Matrix;
use crate::model::{classify_subgraph, extract_edge_probs, sample_subgraph, sf_predict, ClassifierParams, ModelParams, SubgraphMask};
use crate::objective::{fit_classifier, ClassifierItem, ClassifierTrainConfig};
use crate::rng;
use crate::scalar::{logit, sigmoid, Scalar};

pub const PROB_CLAMP: f64 = 1e-6;
pub const DEGENERATE_TOL: f64 = 1e-6;

/// One graph split by the invariant extractor.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoPair<T> {
    pub graph_index: usize,
    /// Hard invariant mask.
    pub mask: Matrix<T>,
    /// Edge support minus `mask`.
    pub complement: Matrix<T>,
    pub y_hat: usize,
    /// Invariant classifier's class distribution.
    pub p_inv: Vec<T>,
}

/// Pseudo-label statistics for one class (one-vs-rest).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonStats {
    /// Number of positive pseudo-labels.
    pub eps0: f64,
    /// `eps0 / N`.
    pub eps0_rate: f64,
    /// Mean of `1 − p_sp` over pseudo-negatives.
    pub eps1: f64,
    /// Mean of `p_inv` over pseudo-positives.
    pub eps2: f64,
    /// Logit of the clamped pseudo-label base rate.
    pub eps3: f64,
    /// Estimated `P(Ŷ=1 | Y=1)`.
    pub tpr: f64,
    /// Estimated `P(Ŷ=0 | Y=0)`.
    pub tnr: f64,
}

fn clamp_p(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

impl EpsilonStats {
    /// Statistics from per-graph pseudo-labels `y_hat ∈ {0,1}`, invariant
    /// scores, and spurious scores for the positive class.
    pub fn from_scores(y_hat: &[bool], p_inv: &[f64], p_sp: &[f64]) -> Self {
        let n = y_hat.len() as f64;
        let pos = y_hat.iter().filter(|&&y| y).count() as f64;
        let neg = n - pos;
        let sum = |f: &dyn Fn(usize) -> f64| (0..y_hat.len()).map(f).sum::<f64>();
        let yf = |i: usize| f64::from(u8::from(y_hat[i]));
        let eps1 = if neg > 0.0 { sum(&|i| (1.0 - yf(i)) * (1.0 - p_sp[i])) / neg } else { 0.0 };
        let eps2 = if pos > 0.0 { sum(&|i| yf(i) * p_inv[i]) / pos } else { 0.0 };
        let mass_pos = sum(&|i| p_inv[i]);
        let mass_neg = n - mass_pos;
        let tpr = if mass_pos > 0.0 { sum(&|i| yf(i) * p_inv[i]) / mass_pos } else { 1.0 };
        let tnr = if mass_neg > 0.0 { sum(&|i| (1.0 - yf(i)) * (1.0 - p_inv[i])) / mass_neg } else { 1.0 };
        let rate = if n > 0.0 { pos / n } else { 0.5 };
        Self { eps0: pos, eps0_rate: rate, eps1, eps2, eps3: logit(clamp_p(rate)), tpr, tnr }
    }

    pub fn base_rate(&self) -> f64 {
        sigmoid(self.eps3)
    }

    /// Noise-corrected spurious probability.
    pub fn calibrate(&self, p_sp: f64) -> Result<f64> {
        let den = self.tpr + self.tnr - 1.0;
        if den.abs() < DEGENERATE_TOL {
            return Err(Error::CalibrationDegenerate(den.abs()));
        }
        Ok(clamp_p((clamp_p(p_sp) + self.tnr - 1.0) / den))
    }

    pub fn is_finite(&self) -> bool {
        [self.eps0, self.eps0_rate, self.eps1, self.eps2, self.eps3, self.tpr, self.tnr].iter().all(|v| v.is_finite())
    }
}

/// `σ(logit p_inv + logit p_sp_cal − ε3)`.
pub fn fuse(p_inv: f64, p_sp: f64, eps: &EpsilonStats) -> Result<f64> {
    let cal = eps.calibrate(p_sp)?;
    Ok(sigmoid(logit(clamp_p(p_inv)) + logit(cal) - eps.eps3))
}

/// [`fuse`], falling back to the uncalibrated spurious score when the
/// calibration is degenerate. The flag reports the fallback.
pub fn fuse_or_fallback(p_inv: f64, p_sp: f64, eps: &EpsilonStats) -> (f64, bool) {
    match fuse(p_inv, p_sp, eps) {
        Ok(v) => (v, false),
        Err(_) => (sigmoid(logit(clamp_p(p_inv)) + logit(clamp_p(p_sp)) - eps.eps3), true),
    }
}

/// Positive pseudo-label of class `c`; binary tasks threshold class 1 at 0.5.
fn pseudo_label<T: Scalar>(p: &[T]) -> usize {
    if p.len() == 2 {
        usize::from(p[1] >= T::lit(0.5))
    } else {
        let mut best = 0;
        for (i, v) in p.iter().enumerate() {
            if *v > p[best] {
                best = i;
            }
        }
        best
    }
}

pub fn build_pseudo_dataset<T: Scalar>(
    ds: &Dataset<T>,
    mp: &ModelParams<T>,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<PseudoPair<T>>> {
    use rayon::prelude::*;
    ds.graphs
        .par_iter()
        .enumerate()
        .map(|(i, g)| pseudo_pair(g, i, mp, n_samples, rng::derive(seed, i as u64)))
        .collect()
}

fn pseudo_pair<T: Scalar>(g: &Graph<T>, idx: usize, mp: &ModelParams<T>, n_samples: usize, seed: u64) -> Result<PseudoPair<T>> {
    let ep = extract_edge_probs(g, &mp.extractor_sf)?;
    let m = sample_subgraph(&ep, g, T::one(), true, rng::derive(seed, 0))?;
    let p_inv = sf_predict(g, mp, n_samples, rng::derive(seed, 1))?;
    let complement = g.support().zip_map(&m.mask, |s, k| s - k);
    Ok(PseudoPair { graph_index: idx, mask: m.mask, complement, y_hat: pseudo_label(&p_inv), p_inv })
}

pub fn train_spurious<T: Scalar>(
    ds: &Dataset<T>,
    pl: &[PseudoPair<T>],
    cfg: &ClassifierTrainConfig,
) -> Result<ClassifierParams<T>> {
    if pl.is_empty() {
        return Err(Error::Degenerate("empty pseudo-labelled set".into()));
    }
    let first = pl[0].y_hat;
    if pl.iter().all(|p| p.y_hat == first) {
        return Err(Error::Degenerate(format!("every pseudo-label is {first}")));
    }
    let items: Vec<ClassifierItem<'_, T>> = pl
        .iter()
        .map(|p| ClassifierItem { graph: &ds.graphs[p.graph_index], weights: Some(&p.complement), label: p.y_hat })
        .collect();
    Ok(fit_classifier(&items, ds.num_classes, cfg)?.0)
}

/// Spurious classifier's class distribution on each pair's complement.
pub fn spurious_scores<T: Scalar>(ds: &Dataset<T>, pl: &[PseudoPair<T>], sp: &ClassifierParams<T>) -> Result<Vec<Vec<T>>> {
    use rayon::prelude::*;
    pl.par_iter()
        .map(|p| {
            let g = &ds.graphs[p.graph_index];
            let m = SubgraphMask { mask: p.complement.clone(), hard: true, temperature: T::one() };
            classify_subgraph(g, &m, sp)
        })
        .collect()
}

/// Out-of-fold spurious scores: each fold is scored by a classifier fit on
/// the other folds, so the calibration statistics are not measured on the
/// classifier's own training pairs. `folds == 1` fits and scores in-sample.
pub fn cross_fit_scores<T: Scalar>(
    ds: &Dataset<T>,
    pl: &[PseudoPair<T>],
    cfg: &ClassifierTrainConfig,
    folds: usize,
    seed: u64,
) -> Result<Vec<Vec<T>>> {
    use rand::seq::SliceRandom;
    if folds <= 1 {
        let sp = train_spurious(ds, pl, cfg)?;
        return spurious_scores(ds, pl, &sp);
    }
    if folds > pl.len() {
        return Err(Error::Argument(format!("{folds} folds for {} pairs", pl.len())));
    }
    let mut order: Vec<usize> = (0..pl.len()).collect();
    order.shuffle(&mut rng::rng(seed));
    let mut fold_of = vec![0; pl.len()];
    for (rank, &i) in order.iter().enumerate() {
        fold_of[i] = rank % folds;
    }
    let mut out: Vec<Option<Vec<T>>> = vec![None; pl.len()];
    for f in 0..folds {
        let (held, rest): (Vec<_>, Vec<_>) = pl.iter().enumerate().partition(|(i, _)| fold_of[*i] == f);
        let rest: Vec<PseudoPair<T>> = rest.into_iter().map(|(_, p)| p.clone()).collect();
        let held_pairs: Vec<PseudoPair<T>> = held.iter().map(|(_, p)| (*p).clone()).collect();
        let fold_cfg = ClassifierTrainConfig { seed: rng::derive(cfg.seed, f as u64), ..cfg.clone() };
        let sp = train_spurious(ds, &rest, &fold_cfg)?;
        for ((i, _), s) in held.iter().zip(spurious_scores(ds, &held_pairs, &sp)?) {
            out[*i] = Some(s);
        }
    }
    Ok(out.into_iter().map(|s| s.expect("every pair lies in one fold")).collect())
}

/// Per-class statistics; binary tasks yield one entry (class 1).
pub fn epsilon_stats<T: Scalar>(pl: &[PseudoPair<T>], p_sp: &[Vec<T>], num_classes: usize) -> Vec<EpsilonStats> {
    let classes: Vec<usize> = if num_classes == 2 { vec![1] } else { (0..num_classes).collect() };
    classes
        .into_iter()
        .map(|c| {
            let y: Vec<bool> = pl.iter().map(|p| p.y_hat == c).collect();
            let pi: Vec<f64> = pl.iter().map(|p| p.p_inv[c].as_f64()).collect();
            let ps: Vec<f64> = p_sp.iter().map(|p| p[c].as_f64()).collect();
            EpsilonStats::from_scores(&y, &pi, &ps)
        })
        .collect()
}

/// Fused class distribution; multiclass fuses each class against the rest
/// and renormalizes. The flag is set when any class fell back.
pub fn fuse_distribution(p_inv: &[f64], p_sp: &[f64], eps: &[EpsilonStats]) -> (Vec<f64>, bool) {
    if p_inv.len() == 2 {
        let (v, fb) = fuse_or_fallback(p_inv[1], p_sp[1], &eps[0]);
        return (vec![1.0 - v, v], fb);
    }
    let mut fallback = false;
    let raw: Vec<f64> = (0..p_inv.len())
        .map(|c| {
            let (v, fb) = fuse_or_fallback(p_inv[c], p_sp[c], &eps[c]);
            fallback |= fb;
            v
        })
        .collect();
    let s: f64 = raw.iter().sum();
    (raw.into_iter().map(|v| v / s).collect(), fallback)
}
