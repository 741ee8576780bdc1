//! Permutation-invariant structure embedding built from power-sum
//! multi-symmetric polynomials over the pairwise feature-collection tensor.
//!
//! For a graph with `V` nodes and `D` features, the collection tensor has
//! `c = D + 2` channels: `D` diagonal feature slices, the adjacency, and the
//! pairwise Euclidean distance between node feature rows. Every exponent
//! pair `(a, b) ∈ ℕ^c × ℕ^c` with `|a| + |b| ≤ N_cap` contributes one block
//! of `c` coordinates:
//!
//! ```text
//! z[j](i1,i2)_ch = Σ_k  C[k,i2,ch]^a_j[ch] · C[i1,k,ch]^b_j[ch]
//! h[0]_ch        = Σ_(i1,i2) C[i1,i2,ch]
//! h[j]_ch        = Σ_(i1,i2) (1 + C[i1,i2,ch]) · z[j](i1,i2)_ch
//! ```
//!
//! The `(1 + C)` weight pairs each tuple colour with its own multiset
//! summary before pooling; without it, `h` reduces to walk counts of length
//! two and cannot tell regular graphs of equal size apart.
//!
//! All sums are taken over sorted addends, so relabelling nodes leaves `h`
//! bit-identical.

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::matrix::Matrix;
use crate::scalar::{multiset_sum, Scalar};

/// Default ceiling on the number of exponent pairs.
pub const DEFAULT_MAX_PAIRS: usize = 512;
pub const DEFAULT_DEGREE_CAP: usize = 2;

/// `V × V × (D+2)` tensor stored channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureCollectionTensor<T> {
    pub channels: Vec<Matrix<T>>,
    pub node_count: usize,
    pub feature_dim: usize,
}

impl<T: Scalar> FeatureCollectionTensor<T> {
    pub fn adjacency_channel(&self) -> usize {
        self.feature_dim
    }

    pub fn distance_channel(&self) -> usize {
        self.feature_dim + 1
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, ch: usize) -> T {
        self.channels[ch][(i, j)]
    }
}

/// Symmetric matrix of Euclidean distances between feature rows.
pub fn feature_distances<T: Scalar>(features: &Matrix<T>) -> Matrix<T> {
    let n = features.rows();
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let d = features
                .row(i)
                .iter()
                .zip(features.row(j))
                .fold(T::zero(), |acc, (&x, &y)| acc + (x - y) * (x - y))
                .sqrt();
            out[(i, j)] = d;
            out[(j, i)] = d;
        }
    }
    out
}

pub fn feature_collection<T: Scalar>(g: &Graph<T>) -> FeatureCollectionTensor<T> {
    let n = g.node_count();
    let d = g.feature_dim();
    let mut channels = Vec::with_capacity(d + 2);
    for f in 0..d {
        let mut m = Matrix::zeros(n, n);
        for k in 0..n {
            m[(k, k)] = g.features[(k, f)];
        }
        channels.push(m);
    }
    channels.push(g.adjacency.clone());
    channels.push(feature_distances(&g.features));
    FeatureCollectionTensor { channels, node_count: n, feature_dim: d }
}

/// Canonically ordered exponent pairs `(a_j, b_j)` with `|a_j|+|b_j| ≤ cap`.
///
/// Order: total degree ascending, then the concatenated exponent vector
/// `a ∥ b` in descending lexicographic order. The family for cap `N` is a
/// prefix of the family for cap `N + 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiIndexFamily {
    pub channels: usize,
    pub degree_cap: usize,
    /// Each entry is `a ∥ b`, length `2 * channels`.
    pub exponents: Vec<Vec<u32>>,
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc.saturating_mul((n - i) as u128) / (i as u128 + 1))
}

/// Number of exponent pairs for `channels` channels and degree cap `cap`.
pub fn pair_count(channels: usize, cap: usize) -> u128 {
    binomial(cap + 2 * channels, 2 * channels)
}

impl MultiIndexFamily {
    pub fn new(channels: usize, degree_cap: usize, max_pairs: usize) -> Result<Self> {
        if degree_cap == 0 {
            return Err(Error::Argument("degree cap must be >= 1".into()));
        }
        let count = pair_count(channels, degree_cap);
        if count > max_pairs as u128 {
            return Err(Error::Capacity(format!(
                "{count} exponent pairs for {channels} channels at degree {degree_cap} exceed ceiling {max_pairs}"
            )));
        }
        let width = 2 * channels;
        let mut exponents = Vec::with_capacity(count as usize);
        for deg in 0..=degree_cap {
            let mut cur = vec![0u32; width];
            compositions(deg as u32, 0, &mut cur, &mut exponents);
        }
        debug_assert_eq!(exponents.len() as u128, count);
        Ok(Self { channels, degree_cap, exponents })
    }

    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exponents.is_empty()
    }

    /// Exponents `(a_j[ch], b_j[ch])` seen by channel `ch` in pair `j`.
    #[inline]
    pub fn channel_exponents(&self, j: usize, ch: usize) -> (u32, u32) {
        let e = &self.exponents[j];
        (e[ch], e[self.channels + ch])
    }

    /// Embedding length `c · (1 + D′)`.
    pub fn embedding_len(&self) -> usize {
        self.channels * (1 + self.len())
    }
}

// Emits every vector with the given total in descending lexicographic order.
fn compositions(remaining: u32, pos: usize, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    if pos + 1 == cur.len() {
        cur[pos] = remaining;
        out.push(cur.clone());
        cur[pos] = 0;
        return;
    }
    for v in (0..=remaining).rev() {
        cur[pos] = v;
        compositions(remaining - v, pos + 1, cur, out);
    }
    cur[pos] = 0;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PmpConfig {
    pub degree_cap: usize,
    pub max_pairs: usize,
}

impl Default for PmpConfig {
    fn default() -> Self {
        Self { degree_cap: DEFAULT_DEGREE_CAP, max_pairs: DEFAULT_MAX_PAIRS }
    }
}

impl PmpConfig {
    pub fn with_cap(degree_cap: usize) -> Self {
        Self { degree_cap, ..Self::default() }
    }
}

/// Fixed-length structure encoding of one graph.
#[derive(Debug, Clone, PartialEq)]
pub struct StructureEmbedding<T> {
    pub h: Vec<T>,
    pub degree_cap: usize,
    pub pairs: usize,
    pub channels: usize,
}

impl<T: Scalar> StructureEmbedding<T> {
    pub fn len(&self) -> usize {
        self.h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h.is_empty()
    }

    /// Coordinate of channel `ch` in block `block` (block 0 is the raw tuple colour).
    pub fn coord(&self, block: usize, ch: usize) -> T {
        self.h[block * self.channels + ch]
    }
}

/// Pooled `(a, b)` coordinate of a single channel slice `m`.
pub(crate) fn channel_pair_value<T: Scalar>(m: &Matrix<T>, a: u32, b: u32, scratch: &mut Vec<T>) -> T {
    let n = m.rows();
    let mut outer = Vec::with_capacity(n * n);
    for i1 in 0..n {
        for i2 in 0..n {
            scratch.clear();
            for k in 0..n {
                scratch.push(m[(k, i2)].powi(a as i32) * m[(i1, k)].powi(b as i32));
            }
            let z = multiset_sum(scratch);
            outer.push((T::one() + m[(i1, i2)]) * z);
        }
    }
    multiset_sum(&mut outer)
}

pub(crate) fn channel_raw_sum<T: Scalar>(m: &Matrix<T>) -> T {
    let mut all = m.as_slice().to_vec();
    multiset_sum(&mut all)
}

pub fn structure_embedding<T: Scalar>(g: &Graph<T>, cfg: PmpConfig) -> Result<StructureEmbedding<T>> {
    let family = MultiIndexFamily::new(g.feature_dim() + 2, cfg.degree_cap, cfg.max_pairs)?;
    Ok(embed_with_family(g, &family))
}

/// Embedding using a prebuilt exponent family; the family's channel count
/// must equal `D + 2`.
pub fn embed_with_family<T: Scalar>(g: &Graph<T>, family: &MultiIndexFamily) -> StructureEmbedding<T> {
    let tensor = feature_collection(g);
    let c = family.channels;
    assert_eq!(c, tensor.channels.len(), "family channel count");
    let cap = family.degree_cap;
    let mut h = vec![T::zero(); family.embedding_len()];
    let mut scratch = Vec::new();
    for (ch, slice) in tensor.channels.iter().enumerate() {
        h[ch] = channel_raw_sum(slice);
        // each channel only ever sees (a_j[ch], b_j[ch]); memoize those
        let mut memo: Vec<Option<T>> = vec![None; (cap + 1) * (cap + 1)];
        for j in 0..family.len() {
            let (a, b) = family.channel_exponents(j, ch);
            let slot = a as usize * (cap + 1) + b as usize;
            let v = *memo[slot].get_or_insert_with(|| channel_pair_value(slice, a, b, &mut scratch));
            h[(1 + j) * c + ch] = v;
        }
    }
    StructureEmbedding { h, degree_cap: cap, pairs: family.len(), channels: c }
}

/// Embeddings for many graphs sharing one feature dimension.
pub fn embed_all<T: Scalar>(graphs: &[&Graph<T>], cfg: PmpConfig) -> Result<Vec<StructureEmbedding<T>>> {
    use rayon::prelude::*;
    let Some(first) = graphs.first() else { return Ok(Vec::new()) };
    let family = MultiIndexFamily::new(first.feature_dim() + 2, cfg.degree_cap, cfg.max_pairs)?;
    if graphs.iter().any(|g| g.feature_dim() != first.feature_dim()) {
        return Err(Error::Argument("graphs disagree on feature dimension".into()));
    }
    Ok(graphs.par_iter().map(|g| embed_with_family(g, &family)).collect())
}

/// Distinct `(a, b)` exponents seen by channel `ch`, with how many family
/// members share them, in first-appearance order.
pub fn channel_exponent_classes(family: &MultiIndexFamily, ch: usize) -> Vec<((u32, u32), usize)> {
    let mut out: Vec<((u32, u32), usize)> = Vec::new();
    for j in 0..family.len() {
        let e = family.channel_exponents(j, ch);
        match out.iter_mut().find(|(k, _)| *k == e) {
            Some((_, n)) => *n += 1,
            None => out.push((e, 1)),
        }
    }
    out
}

/// Elementwise power with `x^0 = 1`.
pub(crate) fn hadamard_power<T: Scalar>(m: &Matrix<T>, e: u32) -> Matrix<T> {
    m.map(|x| x.powi(e as i32))
}

/// Same coordinates as [`embed_with_family`] but accumulated in plain
/// matrix-product order. Faster; not bit-stable under relabelling.
pub fn embed_unsorted<T: Scalar>(g: &Graph<T>, family: &MultiIndexFamily) -> Vec<T> {
    let tensor = feature_collection(g);
    let c = family.channels;
    assert_eq!(c, tensor.channels.len(), "family channel count");
    let mut h = vec![T::zero(); family.embedding_len()];
    for (ch, slice) in tensor.channels.iter().enumerate() {
        h[ch] = slice.sum();
        let gate = slice.map(|x| T::one() + x);
        let powers: Vec<Matrix<T>> = (0..=family.degree_cap as u32).map(|e| hadamard_power(slice, e)).collect();
        let classes: Vec<((u32, u32), T)> = channel_exponent_classes(family, ch)
            .into_iter()
            .map(|((a, b), _)| {
                let z = powers[b as usize].matmul(&powers[a as usize]);
                ((a, b), gate.zip_map(&z, |x, y| x * y).sum())
            })
            .collect();
        for j in 0..family.len() {
            let e = family.channel_exponents(j, ch);
            h[(1 + j) * c + ch] = classes.iter().find(|(k, _)| *k == e).unwrap().1;
        }
    }
    h
}
