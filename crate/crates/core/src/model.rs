//! GCN encoders, edge extractors, subgraph classifiers, and differentiable
//! edge sampling.
//!
//! Every forward pass is built on an [`autodiff::Tape`](crate::autodiff::Tape);
//! inference simply registers parameters as constants.

use rand::Rng as _;

use crate::autodiff::{Grads, Tape, Var};
use crate::error::{arg, Error, Result};
use crate::graph::Graph;
use crate::matrix::Matrix;
use crate::rng;
use crate::scalar::{logit, sigmoid, Scalar};

/// Stack of graph-convolution layers
/// `H ← ReLU(D̂^{-1/2} Â D̂^{-1/2} H W + b)`, last layer linear.
#[derive(Debug, Clone, PartialEq)]
pub struct GcnParams<T> {
    pub layer_weights: Vec<Matrix<T>>,
    /// One `1 × d_out` row per layer.
    pub layer_biases: Vec<Matrix<T>>,
}

impl<T: Scalar> GcnParams<T> {
    /// Glorot-uniform weights, zero biases. `dims = [d_in, d_1, ..., d_out]`.
    pub fn glorot(dims: &[usize], seed: u64) -> Self {
        assert!(dims.len() >= 2, "a GCN needs at least one layer");
        let mut r = rng::rng(seed);
        let mut layer_weights = Vec::new();
        let mut layer_biases = Vec::new();
        for w in dims.windows(2) {
            let bound = (6.0 / (w[0] + w[1]) as f64).sqrt();
            layer_weights.push(Matrix::from_fn(w[0], w[1], |_, _| T::lit(r.gen_range(-bound..bound))));
            layer_biases.push(Matrix::zeros(1, w[1]));
        }
        Self { layer_weights, layer_biases }
    }

    pub fn n_layers(&self) -> usize {
        self.layer_weights.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layer_weights[0].rows()
    }

    pub fn output_dim(&self) -> usize {
        self.layer_weights[self.n_layers() - 1].cols()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_weights.is_empty() || self.layer_weights.len() != self.layer_biases.len() {
            return Err(arg("GCN needs matching, non-empty weight and bias lists"));
        }
        for (l, (w, b)) in self.layer_weights.iter().zip(&self.layer_biases).enumerate() {
            if b.shape() != (1, w.cols()) {
                return Err(arg(format!("layer {l}: bias shape {:?} vs weight {:?}", b.shape(), w.shape())));
            }
            if l > 0 && self.layer_weights[l - 1].cols() != w.rows() {
                return Err(arg(format!("layer {l}: input dim {} != previous output {}", w.rows(), self.layer_weights[l - 1].cols())));
            }
        }
        Ok(())
    }

    fn named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Matrix<T>)>) {
        for (l, (w, b)) in self.layer_weights.iter().zip(&self.layer_biases).enumerate() {
            out.push((format!("{prefix}.w{l}"), w));
            out.push((format!("{prefix}.b{l}"), b));
        }
    }

    fn named_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Matrix<T>)>) {
        for (l, (w, b)) in self.layer_weights.iter_mut().zip(self.layer_biases.iter_mut()).enumerate() {
            out.push((format!("{prefix}.w{l}"), w));
            out.push((format!("{prefix}.b{l}"), b));
        }
    }

    fn on_tape(&self, tape: &mut Tape<T>, trainable: bool) -> GcnVars {
        let reg = |tape: &mut Tape<T>, m: &Matrix<T>| if trainable { tape.param(m.clone()) } else { tape.constant(m.clone()) };
        GcnVars {
            w: self.layer_weights.iter().map(|m| reg(tape, m)).collect(),
            b: self.layer_biases.iter().map(|m| reg(tape, m)).collect(),
        }
    }

    fn collect(&self, vars: &GcnVars, grads: &Grads<T>) -> Self {
        let pick = |v: Var, m: &Matrix<T>| grads.get_or_zeros(v, m.rows(), m.cols());
        Self {
            layer_weights: vars.w.iter().zip(&self.layer_weights).map(|(&v, m)| pick(v, m)).collect(),
            layer_biases: vars.b.iter().zip(&self.layer_biases).map(|(&v, m)| pick(v, m)).collect(),
        }
    }
}

/// GCN backbone plus mean-pool and affine readout to `C` logits.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams<T> {
    pub gcn: GcnParams<T>,
    pub readout: Matrix<T>,
    pub readout_bias: Matrix<T>,
}

impl<T: Scalar> ClassifierParams<T> {
    pub fn glorot(dims: &[usize], num_classes: usize, seed: u64) -> Self {
        let gcn = GcnParams::glorot(dims, rng::derive(seed, 0));
        let d = *dims.last().unwrap();
        let head = GcnParams::<T>::glorot(&[d, num_classes], rng::derive(seed, 1));
        Self { gcn, readout: head.layer_weights[0].clone(), readout_bias: Matrix::zeros(1, num_classes) }
    }

    pub fn num_classes(&self) -> usize {
        self.readout.cols()
    }

    pub fn validate(&self) -> Result<()> {
        self.gcn.validate()?;
        if self.readout.rows() != self.gcn.output_dim() {
            return Err(arg(format!("readout rows {} != GCN output {}", self.readout.rows(), self.gcn.output_dim())));
        }
        if self.readout_bias.shape() != (1, self.readout.cols()) {
            return Err(arg("readout bias shape"));
        }
        Ok(())
    }

    fn named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Matrix<T>)>) {
        self.gcn.named(&format!("{prefix}.gcn"), out);
        out.push((format!("{prefix}.readout"), &self.readout));
        out.push((format!("{prefix}.readout_bias"), &self.readout_bias));
    }

    fn named_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Matrix<T>)>) {
        self.gcn.named_mut(&format!("{prefix}.gcn"), out);
        out.push((format!("{prefix}.readout"), &mut self.readout));
        out.push((format!("{prefix}.readout_bias"), &mut self.readout_bias));
    }

    pub(crate) fn on_tape(&self, tape: &mut Tape<T>, trainable: bool) -> ClassifierVars {
        let gcn = self.gcn.on_tape(tape, trainable);
        let (r, rb) = if trainable {
            (tape.param(self.readout.clone()), tape.param(self.readout_bias.clone()))
        } else {
            (tape.constant(self.readout.clone()), tape.constant(self.readout_bias.clone()))
        };
        ClassifierVars { gcn, r, rb }
    }

    pub(crate) fn collect(&self, vars: &ClassifierVars, grads: &Grads<T>) -> Self {
        Self {
            gcn: self.gcn.collect(&vars.gcn, grads),
            readout: grads.get_or_zeros(vars.r, self.readout.rows(), self.readout.cols()),
            readout_bias: grads.get_or_zeros(vars.rb, 1, self.readout_bias.cols()),
        }
    }

    /// Every matrix paired with a dotted path, in a fixed order.
    pub fn named_matrices(&self) -> Vec<(String, &Matrix<T>)> {
        let mut out = Vec::new();
        self.named("classifier", &mut out);
        out
    }

    pub fn named_matrices_mut(&mut self) -> Vec<(String, &mut Matrix<T>)> {
        let mut out = Vec::new();
        self.named_mut("classifier", &mut out);
        out
    }
}

/// Layer widths for the four networks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelDims {
    pub feature_dim: usize,
    pub num_classes: usize,
    pub extractor_hidden: Vec<usize>,
    pub classifier_hidden: Vec<usize>,
    /// Closed-walk encodings appended to every network's input.
    pub walk_steps: usize,
}

pub const DEFAULT_WALK_STEPS: usize = 5;

impl ModelDims {
    pub fn new(feature_dim: usize, num_classes: usize) -> Self {
        Self {
            feature_dim,
            num_classes,
            extractor_hidden: vec![32, 16],
            classifier_hidden: vec![32, 32],
            walk_steps: DEFAULT_WALK_STEPS,
        }
    }

    fn extractor(&self) -> Vec<usize> {
        std::iter::once(self.feature_dim + self.walk_steps).chain(self.extractor_hidden.iter().copied()).collect()
    }

    fn classifier(&self) -> Vec<usize> {
        std::iter::once(self.feature_dim + self.walk_steps).chain(self.classifier_hidden.iter().copied()).collect()
    }
}

/// Sufficient (`sf`) and necessary (`nc`) extractor/classifier pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub extractor_sf: GcnParams<T>,
    pub extractor_nc: GcnParams<T>,
    pub classifier_sf: ClassifierParams<T>,
    pub classifier_nc: ClassifierParams<T>,
    pub num_classes: usize,
}

impl<T: Scalar> ModelParams<T> {
    pub fn init(dims: &ModelDims, seed: u64) -> Self {
        Self {
            extractor_sf: GcnParams::glorot(&dims.extractor(), rng::derive(seed, 10)),
            extractor_nc: GcnParams::glorot(&dims.extractor(), rng::derive(seed, 11)),
            classifier_sf: ClassifierParams::glorot(&dims.classifier(), dims.num_classes, rng::derive(seed, 12)),
            classifier_nc: ClassifierParams::glorot(&dims.classifier(), dims.num_classes, rng::derive(seed, 13)),
            num_classes: dims.num_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.extractor_sf.validate()?;
        self.extractor_nc.validate()?;
        self.classifier_sf.validate()?;
        self.classifier_nc.validate()?;
        if self.extractor_sf.output_dim() != self.extractor_nc.output_dim() {
            return Err(arg("extractor output dims differ"));
        }
        if self.classifier_sf.num_classes() != self.num_classes || self.classifier_nc.num_classes() != self.num_classes {
            return Err(arg("readout width != num_classes"));
        }
        Ok(())
    }

    /// Width of the network inputs: features plus walk encodings.
    pub fn input_dim(&self) -> usize {
        self.extractor_sf.input_dim()
    }

    /// Every matrix paired with a dotted path, in a fixed order.
    pub fn named_matrices(&self) -> Vec<(String, &Matrix<T>)> {
        let mut out = Vec::new();
        self.extractor_sf.named("extractor_sf", &mut out);
        self.extractor_nc.named("extractor_nc", &mut out);
        self.classifier_sf.named("classifier_sf", &mut out);
        self.classifier_nc.named("classifier_nc", &mut out);
        out
    }

    pub fn named_matrices_mut(&mut self) -> Vec<(String, &mut Matrix<T>)> {
        let mut out = Vec::new();
        self.extractor_sf.named_mut("extractor_sf", &mut out);
        self.extractor_nc.named_mut("extractor_nc", &mut out);
        self.classifier_sf.named_mut("classifier_sf", &mut out);
        self.classifier_nc.named_mut("classifier_nc", &mut out);
        out
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, m) in z.named_matrices_mut() {
            m.as_mut_slice().fill(T::zero());
        }
        z
    }

    /// `self += s · other`
    pub fn add_scaled(&mut self, other: &Self, s: T) {
        let src = other.named_matrices();
        for ((_, dst), (_, m)) in self.named_matrices_mut().into_iter().zip(src) {
            for (d, &x) in dst.as_mut_slice().iter_mut().zip(m.as_slice()) {
                *d += s * x;
            }
        }
    }

    pub fn param_count(&self) -> usize {
        self.named_matrices().iter().map(|(_, m)| m.as_slice().len()).sum()
    }

    pub fn to_flat(&self) -> Vec<T> {
        self.named_matrices().iter().flat_map(|(_, m)| m.as_slice().iter().copied()).collect()
    }

    pub fn set_flat(&mut self, flat: &[T]) {
        let mut pos = 0;
        for (_, m) in self.named_matrices_mut() {
            let n = m.as_slice().len();
            m.as_mut_slice().copy_from_slice(&flat[pos..pos + n]);
            pos += n;
        }
        assert_eq!(pos, flat.len(), "flat parameter length");
    }

    /// First matrix holding a non-finite entry, as a numeric error.
    pub fn check_finite(&self) -> Result<()> {
        match self.named_matrices().into_iter().find(|(_, m)| !m.is_finite()) {
            Some((path, _)) => Err(Error::Numeric { path }),
            None => Ok(()),
        }
    }

    pub(crate) fn on_tape(&self, tape: &mut Tape<T>) -> ModelVars {
        ModelVars {
            extractor_sf: self.extractor_sf.on_tape(tape, true),
            extractor_nc: self.extractor_nc.on_tape(tape, true),
            classifier_sf: self.classifier_sf.on_tape(tape, true),
            classifier_nc: self.classifier_nc.on_tape(tape, true),
        }
    }

    pub(crate) fn collect(&self, vars: &ModelVars, grads: &Grads<T>) -> Self {
        Self {
            extractor_sf: self.extractor_sf.collect(&vars.extractor_sf, grads),
            extractor_nc: self.extractor_nc.collect(&vars.extractor_nc, grads),
            classifier_sf: self.classifier_sf.collect(&vars.classifier_sf, grads),
            classifier_nc: self.classifier_nc.collect(&vars.classifier_nc, grads),
            num_classes: self.num_classes,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GcnVars {
    w: Vec<Var>,
    b: Vec<Var>,
}

#[derive(Debug, Clone)]
pub struct ClassifierVars {
    gcn: GcnVars,
    r: Var,
    rb: Var,
}

/// Tape handles for every parameter matrix of a [`ModelParams`].
#[derive(Debug, Clone)]
pub struct ModelVars {
    pub extractor_sf: GcnVars,
    pub extractor_nc: GcnVars,
    pub classifier_sf: ClassifierVars,
    pub classifier_nc: ClassifierVars,
}

impl GcnVars {
    pub fn weights(&self) -> &[Var] {
        &self.w
    }
}

/// `σ(Z Zᵀ)` for node embeddings `Z`.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeProbMatrix<T> {
    pub probs: Matrix<T>,
}

/// Sampled edge weights in `[0, 1]`, zero off the edge set.
#[derive(Debug, Clone, PartialEq)]
pub struct SubgraphMask<T> {
    pub mask: Matrix<T>,
    pub hard: bool,
    pub temperature: T,
}

fn check_input<T: Scalar>(g: &Graph<T>, p: &GcnParams<T>) -> Result<()> {
    p.validate()?;
    if g.feature_dim() > p.input_dim() {
        return Err(arg(format!("graph has {} features, GCN expects at most {}", g.feature_dim(), p.input_dim())));
    }
    Ok(())
}

/// Appends `steps` closed-walk encodings `2^k diag(S^k)`, `k = 2..=steps+1`,
/// to the node features, where `S` is the loop-free normalization of the
/// weighted adjacency `w`. Cycle and triangle membership show up here while a
/// GCN over noise features barely sees them.
pub(crate) fn encode_tape<T: Scalar>(tape: &mut Tape<T>, w: Var, x: Var, steps: usize) -> Var {
    if steps == 0 {
        return x;
    }
    let s = tape.walk_norm(w);
    let mut p = tape.matmul(s, s);
    let mut out = x;
    for k in 2..=steps + 1 {
        if k > 2 {
            p = tape.matmul(p, s);
        }
        let d = tape.diag(p);
        let d = tape.scale(d, T::lit(2f64.powi(k as i32)));
        out = tape.hcat(out, d);
    }
    out
}

/// Encoding count implied by a first layer that is wider than the features.
fn walk_steps_of<T: Scalar>(tape: &Tape<T>, x: Var, p: &GcnVars) -> usize {
    tape.value(p.w[0]).rows() - tape.value(x).cols()
}

pub(crate) fn gcn_tape<T: Scalar>(tape: &mut Tape<T>, norm: Var, x: Var, p: &GcnVars) -> Var {
    let mut h = x;
    let last = p.w.len() - 1;
    for (l, (&w, &b)) in p.w.iter().zip(&p.b).enumerate() {
        let hw = tape.matmul(h, w);
        let agg = tape.matmul(norm, hw);
        h = tape.add_row(agg, b);
        if l < last {
            h = tape.relu(h);
        }
    }
    h
}

/// Edge logits `Z Zᵀ` from an extractor over the full graph.
pub(crate) fn edge_scores_tape<T: Scalar>(tape: &mut Tape<T>, adj: Var, x: Var, p: &GcnVars) -> Var {
    let steps = walk_steps_of(tape, x, p);
    let xin = encode_tape(tape, adj, x, steps);
    let norm = tape.gcn_norm(adj);
    let z = gcn_tape(tape, norm, xin, p);
    tape.matmul_t(z, z)
}

/// Binary-concrete mask `σ((s + L)/τ) ⊙ support`, with straight-through
/// thresholding when `hard`.
pub(crate) fn mask_tape<T: Scalar>(
    tape: &mut Tape<T>,
    scores: Var,
    noise: &Matrix<T>,
    support: Var,
    tau: T,
    hard: bool,
) -> Var {
    let l = tape.constant(noise.clone());
    let shifted = tape.add(scores, l);
    let scaled = tape.scale(shifted, T::one() / tau);
    let soft = tape.sigmoid(scaled);
    let m = tape.mul(soft, support);
    if hard {
        let half = T::lit(0.5);
        let fwd = tape.value(m).zip_map(tape.value(support), |v, s| {
            if s > T::zero() && v >= half {
                T::one()
            } else {
                T::zero()
            }
        });
        tape.straight_through(m, fwd)
    } else {
        m
    }
}

/// Row of class log-probabilities for a weighted adjacency.
pub(crate) fn classifier_tape<T: Scalar>(tape: &mut Tape<T>, weights: Var, x: Var, p: &ClassifierVars) -> Var {
    let steps = walk_steps_of(tape, x, &p.gcn);
    let xin = encode_tape(tape, weights, x, steps);
    let norm = tape.gcn_norm(weights);
    let h = gcn_tape(tape, norm, xin, &p.gcn);
    let pooled = tape.mean_rows(h);
    let z = tape.matmul(pooled, p.r);
    let logits = tape.add_row(z, p.rb);
    tape.log_softmax(logits)
}

pub fn gcn_forward<T: Scalar>(g: &Graph<T>, p: &GcnParams<T>, edge_weights: Option<&Matrix<T>>) -> Result<Matrix<T>> {
    check_input(g, p)?;
    let adj = match edge_weights {
        Some(w) => {
            if w.shape() != g.adjacency.shape() {
                return Err(arg("edge weight shape differs from adjacency"));
            }
            w.zip_map(&g.adjacency, |a, b| a * b)
        }
        None => g.adjacency.clone(),
    };
    let mut tape = Tape::new();
    let a = tape.constant(adj);
    let x = tape.constant(g.features.clone());
    let vars = p.on_tape(&mut tape, false);
    let steps = walk_steps_of(&tape, x, &vars);
    let xin = encode_tape(&mut tape, a, x, steps);
    let norm = tape.gcn_norm(a);
    let out = gcn_tape(&mut tape, norm, xin, &vars);
    Ok(tape.value(out).clone())
}

pub fn extract_edge_probs<T: Scalar>(g: &Graph<T>, p: &GcnParams<T>) -> Result<EdgeProbMatrix<T>> {
    let z = gcn_forward(g, p, None)?;
    let n = z.rows();
    let mut probs = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let s = z.row(i).iter().zip(z.row(j)).fold(T::zero(), |acc, (&a, &b)| acc + a * b);
            let v = sigmoid(s);
            probs[(i, j)] = v;
            probs[(j, i)] = v;
        }
    }
    Ok(EdgeProbMatrix { probs })
}

/// Symmetric logistic noise `G₁ − G₂` (difference of standard Gumbels) on
/// each existing edge, zero elsewhere.
pub fn draw_noise<T: Scalar>(g: &Graph<T>, seed: u64) -> Matrix<T> {
    let mut r = rng::rng(seed);
    let n = g.node_count();
    let mut out = Matrix::zeros(n, n);
    let mut gumbel = || -(-r.gen_range(f64::MIN_POSITIVE..1.0).ln()).ln();
    for (i, j) in g.edges() {
        let l = T::lit(gumbel() - gumbel());
        out[(i, j)] = l;
        out[(j, i)] = l;
    }
    out
}

pub fn sample_subgraph<T: Scalar>(
    ep: &EdgeProbMatrix<T>,
    g: &Graph<T>,
    tau: T,
    hard: bool,
    seed: u64,
) -> Result<SubgraphMask<T>> {
    if !(tau > T::zero()) {
        return Err(arg("temperature must be positive"));
    }
    let noise = draw_noise(g, seed);
    let eps = T::lit(1e-12);
    let n = g.node_count();
    let mut mask = Matrix::zeros(n, n);
    for (i, j) in g.edges() {
        let p = ep.probs[(i, j)].max(eps).min(T::one() - eps);
        let soft = sigmoid((logit(p) + noise[(i, j)]) / tau);
        let v = if hard {
            if soft >= T::lit(0.5) {
                T::one()
            } else {
                T::zero()
            }
        } else {
            soft
        };
        mask[(i, j)] = v;
        mask[(j, i)] = v;
    }
    Ok(SubgraphMask { mask, hard, temperature: tau })
}

fn probs_from_log<T: Scalar>(logp: &Matrix<T>) -> Vec<T> {
    let e: Vec<T> = logp.row(0).iter().map(|v| v.exp()).collect();
    let s = e.iter().fold(T::zero(), |a, &b| a + b);
    e.into_iter().map(|v| v / s).collect()
}

pub fn classify_subgraph<T: Scalar>(g: &Graph<T>, m: &SubgraphMask<T>, cp: &ClassifierParams<T>) -> Result<Vec<T>> {
    cp.validate()?;
    check_input(g, &cp.gcn)?;
    if m.mask.shape() != g.adjacency.shape() {
        return Err(arg("mask shape differs from adjacency"));
    }
    let mut tape = Tape::new();
    let w = tape.constant(m.mask.zip_map(&g.adjacency, |a, b| a * b));
    let x = tape.constant(g.features.clone());
    let vars = cp.on_tape(&mut tape, false);
    let lp = classifier_tape(&mut tape, w, x, &vars);
    Ok(probs_from_log(tape.value(lp)))
}

/// Mean class distribution of one extractor/classifier pair over
/// `n_samples` hard masks.
pub fn branch_predict<T: Scalar>(
    g: &Graph<T>,
    extractor: &GcnParams<T>,
    classifier: &ClassifierParams<T>,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<T>> {
    if n_samples == 0 {
        return Err(arg("n_samples must be >= 1"));
    }
    let ep = extract_edge_probs(g, extractor)?;
    let mut acc = vec![T::zero(); classifier.num_classes()];
    for s in 0..n_samples {
        // hard masks do not depend on τ
        let m = sample_subgraph(&ep, g, T::one(), true, rng::derive(seed, s as u64))?;
        for (a, p) in acc.iter_mut().zip(classify_subgraph(g, &m, classifier)?) {
            *a += p;
        }
    }
    let n = T::from_usize_lossy(n_samples);
    Ok(acc.into_iter().map(|a| a / n).collect())
}

pub fn joint_predict<T: Scalar>(g: &Graph<T>, mp: &ModelParams<T>, n_samples: usize, seed: u64) -> Result<Vec<T>> {
    let sf = branch_predict(g, &mp.extractor_sf, &mp.classifier_sf, n_samples, rng::derive(seed, 0))?;
    let nc = branch_predict(g, &mp.extractor_nc, &mp.classifier_nc, n_samples, rng::derive(seed, 1))?;
    let half = T::lit(0.5);
    Ok(sf.into_iter().zip(nc).map(|(a, b)| half * a + half * b).collect())
}

/// Invariant-branch prediction used for evaluation.
pub fn sf_predict<T: Scalar>(g: &Graph<T>, mp: &ModelParams<T>, n_samples: usize, seed: u64) -> Result<Vec<T>> {
    branch_predict(g, &mp.extractor_sf, &mp.classifier_sf, n_samples, rng::derive(seed, 0))
}

/// Value and gradient of a scalar loss built on a tape from the model's
/// parameter handles.
pub fn gradients<T: Scalar>(
    mp: &ModelParams<T>,
    loss: impl FnOnce(&mut Tape<T>, &ModelVars) -> Var,
) -> Result<(T, ModelParams<T>)> {
    let mut tape = Tape::new();
    let vars = mp.on_tape(&mut tape);
    let out = loss(&mut tape, &vars);
    let value = tape.scalar(out);
    if !value.is_finite() {
        return Err(Error::Numeric { path: "loss".into() });
    }
    let grads = tape.backward(out);
    let g = mp.collect(&vars, &grads);
    g.check_finite()?;
    Ok((value, g))
}

impl ClassifierVars {
    pub fn readout(&self) -> Var {
        self.r
    }
}
