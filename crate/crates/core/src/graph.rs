//! Graph and dataset data model, validation, and environment subset sampling.

use std::fmt;

use rand::seq::index;

use crate::error::{arg, Result};
use crate::matrix::Matrix;
use crate::rng;
use crate::scalar::Scalar;

/// Tolerance for adjacency symmetry.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// A single attributed graph with dense adjacency.
///
/// `adjacency[i][j]` is the edge weight between `i` and `j` (0 = no edge).
/// `gt_mask` marks ground-truth invariant edges and only exists for
/// synthetic data.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph<T> {
    pub adjacency: Matrix<T>,
    pub features: Matrix<T>,
    pub label: Option<usize>,
    pub env_id: Option<i64>,
    pub gt_mask: Option<Matrix<T>>,
}

/// One broken [`Graph`] invariant.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    EmptyGraph,
    NonSquareAdjacency { rows: usize, cols: usize },
    Asymmetric { max_gap: f64 },
    NonZeroDiagonal { node: usize },
    NegativeWeight { i: usize, j: usize },
    NonFinite,
    FeatureRows { expected: usize, found: usize },
    MaskShape,
    MaskAsymmetric,
    MaskNotBinary { i: usize, j: usize },
    MaskOutsideEdgeSet { i: usize, j: usize },
    LabelOutOfRange { label: usize, num_classes: usize },
    FeatureDim { expected: usize, found: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyGraph => write!(f, "empty graph"),
            Violation::NonSquareAdjacency { rows, cols } => {
                write!(f, "adjacency not square ({rows}x{cols})")
            }
            Violation::Asymmetric { max_gap } => write!(f, "asymmetric (max gap {max_gap:e})"),
            Violation::NonZeroDiagonal { node } => write!(f, "nonzero diagonal at node {node}"),
            Violation::NegativeWeight { i, j } => write!(f, "negative weight at ({i},{j})"),
            Violation::NonFinite => write!(f, "non-finite entry"),
            Violation::FeatureRows { expected, found } => {
                write!(f, "feature rows {found} != node count {expected}")
            }
            Violation::MaskShape => write!(f, "mask shape differs from adjacency"),
            Violation::MaskAsymmetric => write!(f, "mask asymmetric"),
            Violation::MaskNotBinary { i, j } => write!(f, "mask not binary at ({i},{j})"),
            Violation::MaskOutsideEdgeSet { i, j } => {
                write!(f, "mask outside edge set at ({i},{j})")
            }
            Violation::LabelOutOfRange { label, num_classes } => {
                write!(f, "label {label} >= num_classes {num_classes}")
            }
            Violation::FeatureDim { expected, found } => {
                write!(f, "feature dim {found} != dataset dim {expected}")
            }
        }
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new(adjacency: Matrix<T>, features: Matrix<T>) -> Self {
        Self { adjacency, features, label: None, env_id: None, gt_mask: None }
    }

    pub fn with_label(mut self, label: usize) -> Self {
        self.label = Some(label);
        self
    }

    pub fn with_gt_mask(mut self, mask: Matrix<T>) -> Self {
        self.gt_mask = Some(mask);
        self
    }

    /// Unweighted graph from an undirected edge list.
    pub fn from_edges(n: usize, edges: &[(usize, usize)], features: Matrix<T>) -> Self {
        let mut adj = Matrix::zeros(n, n);
        for &(i, j) in edges {
            adj[(i, j)] = T::one();
            adj[(j, i)] = T::one();
        }
        Self::new(adj, features)
    }

    #[inline]
    pub fn node_count(&self) -> usize {
        self.adjacency.rows()
    }

    #[inline]
    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    /// {0,1} indicator of the edge set.
    pub fn support(&self) -> Matrix<T> {
        self.adjacency.map(|w| if w != T::zero() { T::one() } else { T::zero() })
    }

    /// Undirected edges `(i, j)` with `i < j`, in row-major order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let n = self.node_count();
        let mut out = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if self.adjacency[(i, j)] != T::zero() {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// Same graph with nodes relabelled: node `i` becomes node `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            adjacency: self.adjacency.permute_square(perm),
            features: self.features.permute_rows(perm),
            label: self.label,
            env_id: self.env_id,
            gt_mask: self.gt_mask.as_ref().map(|m| m.permute_square(perm)),
        }
    }

    /// Same nodes and features with adjacency replaced by `weights ⊙ A`.
    pub fn reweighted(&self, weights: &Matrix<T>) -> Self {
        Self {
            adjacency: self.adjacency.zip_map(weights, |a, w| a * w),
            features: self.features.clone(),
            label: self.label,
            env_id: self.env_id,
            gt_mask: None,
        }
    }

    pub fn cast<U: Scalar>(&self) -> Graph<U> {
        Graph {
            adjacency: self.adjacency.cast(),
            features: self.features.cast(),
            label: self.label,
            env_id: self.env_id,
            gt_mask: self.gt_mask.as_ref().map(Matrix::cast),
        }
    }
}

/// Outcome of [`validate_graph`]; `ok()` iff no violation was found.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Check every structural invariant of `g`. Never aborts.
pub fn validate_graph<T: Scalar>(g: &Graph<T>) -> ValidationReport {
    let mut v = Vec::new();
    let (rows, cols) = g.adjacency.shape();
    if rows == 0 {
        v.push(Violation::EmptyGraph);
    }
    if rows != cols {
        v.push(Violation::NonSquareAdjacency { rows, cols });
        return ValidationReport { violations: v };
    }
    if !g.adjacency.is_finite() || !g.features.is_finite() {
        v.push(Violation::NonFinite);
    }
    if let Some(gap) = g.adjacency.asymmetry() {
        if gap.as_f64() > SYMMETRY_TOL {
            v.push(Violation::Asymmetric { max_gap: gap.as_f64() });
        }
    }
    for i in 0..rows {
        if g.adjacency[(i, i)] != T::zero() {
            v.push(Violation::NonZeroDiagonal { node: i });
        }
        for j in 0..cols {
            if g.adjacency[(i, j)] < T::zero() {
                v.push(Violation::NegativeWeight { i, j });
            }
        }
    }
    if g.features.rows() != rows {
        v.push(Violation::FeatureRows { expected: rows, found: g.features.rows() });
    }
    if let Some(mask) = &g.gt_mask {
        if mask.shape() != g.adjacency.shape() {
            v.push(Violation::MaskShape);
        } else {
            if mask.asymmetry().is_some_and(|gap| gap != T::zero()) {
                v.push(Violation::MaskAsymmetric);
            }
            for i in 0..rows {
                for j in 0..cols {
                    let m = mask[(i, j)];
                    if m != T::zero() && m != T::one() {
                        v.push(Violation::MaskNotBinary { i, j });
                    } else if m == T::one() && g.adjacency[(i, j)] == T::zero() {
                        v.push(Violation::MaskOutsideEdgeSet { i, j });
                    }
                }
            }
        }
    }
    ValidationReport { violations: v }
}

/// Ordered collection of graphs sharing a feature dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub graphs: Vec<Graph<T>>,
    pub feature_dim: usize,
    pub num_classes: usize,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(graphs: Vec<Graph<T>>, feature_dim: usize, num_classes: usize) -> Self {
        Self { graphs, feature_dim, num_classes }
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    /// Graph-level and dataset-level violations, keyed by graph index.
    pub fn validate(&self) -> Vec<(usize, Violation)> {
        let mut out = Vec::new();
        for (idx, g) in self.graphs.iter().enumerate() {
            for v in validate_graph(g).violations {
                out.push((idx, v));
            }
            if g.feature_dim() != self.feature_dim {
                out.push((idx, Violation::FeatureDim { expected: self.feature_dim, found: g.feature_dim() }));
            }
            if let Some(label) = g.label {
                if label >= self.num_classes {
                    out.push((idx, Violation::LabelOutOfRange { label, num_classes: self.num_classes }));
                }
            }
        }
        out
    }

    pub fn labels(&self) -> Option<Vec<usize>> {
        self.graphs.iter().map(|g| g.label).collect()
    }
}

/// Two disjoint random subsets standing in for two training environments.
#[derive(Debug, Clone)]
pub struct EnvBatchPair<'a, T> {
    pub batch_a: Vec<&'a Graph<T>>,
    pub batch_b: Vec<&'a Graph<T>>,
    pub index_a: Vec<usize>,
    pub index_b: Vec<usize>,
}

/// Draw two disjoint subsets uniformly without replacement.
pub fn split_environments<T: Scalar>(
    ds: &Dataset<T>,
    size_a: usize,
    size_b: usize,
    seed: u64,
) -> Result<EnvBatchPair<'_, T>> {
    if size_a == 0 || size_b == 0 {
        return Err(arg("environment subset sizes must be >= 1"));
    }
    if size_a + size_b > ds.len() {
        return Err(arg(format!(
            "subset sizes {size_a}+{size_b} exceed dataset size {}",
            ds.len()
        )));
    }
    let mut r = rng::rng(seed);
    let picked = index::sample(&mut r, ds.len(), size_a + size_b).into_vec();
    let index_a = picked[..size_a].to_vec();
    let index_b = picked[size_a..].to_vec();
    Ok(EnvBatchPair {
        batch_a: index_a.iter().map(|&i| &ds.graphs[i]).collect(),
        batch_b: index_b.iter().map(|&i| &ds.graphs[i]).collect(),
        index_a,
        index_b,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triangle() -> Graph<f64> {
        let x = Matrix::from_rows(&[vec![0.1, 0.2], vec![0.3, 0.4], vec![0.5, 0.6]]);
        Graph::from_edges(3, &[(0, 1), (1, 2), (0, 2)], x)
    }

    #[test]
    fn triangle_is_valid() {
        assert!(validate_graph(&triangle()).ok());
    }

    #[test]
    fn asymmetric_adjacency_reported() {
        let mut g = triangle();
        g.adjacency[(0, 1)] = 0.5;
        let report = validate_graph(&g);
        assert!(matches!(report.violations[0], Violation::Asymmetric { .. }));
        assert!(report.violations[0].to_string().starts_with("asymmetric"));
    }

    #[test]
    fn mask_outside_edges_reported() {
        let mut g = Graph::from_edges(3, &[(0, 1)], Matrix::zeros(3, 1));
        let mut mask = Matrix::zeros(3, 3);
        mask[(1, 2)] = 1.0;
        mask[(2, 1)] = 1.0;
        g.gt_mask = Some(mask);
        let report = validate_graph(&g);
        assert_eq!(report.violations.len(), 2);
        assert!(report.violations[0].to_string().contains("mask outside edge set"));
    }

    #[test]
    fn feature_rows_and_diagonal_reported() {
        let mut g = triangle();
        g.adjacency[(2, 2)] = 1.0;
        g.features = Matrix::zeros(2, 2);
        let report = validate_graph(&g);
        assert!(report.violations.contains(&Violation::NonZeroDiagonal { node: 2 }));
        assert!(report.violations.contains(&Violation::FeatureRows { expected: 3, found: 2 }));
    }

    fn ten() -> Dataset<f64> {
        Dataset::new((0..10).map(|_| triangle()).collect(), 2, 2)
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let ds = ten();
        let a = split_environments(&ds, 4, 4, 7).unwrap();
        let b = split_environments(&ds, 4, 4, 7).unwrap();
        assert_eq!(a.index_a, b.index_a);
        assert_eq!(a.index_b, b.index_b);
        assert_eq!(a.batch_a.len(), 4);
        assert!(a.index_a.iter().all(|i| !a.index_b.contains(i)));
    }

    #[test]
    fn split_rejects_oversized_request() {
        assert!(split_environments(&ten(), 6, 6, 1).is_err());
        assert!(split_environments(&ten(), 0, 1, 1).is_err());
    }

    #[test]
    fn split_of_two_partitions_both() {
        let ds = Dataset::new(vec![triangle(), triangle()], 2, 2);
        let p = split_environments(&ds, 1, 1, 3).unwrap();
        let mut all = [p.index_a[0], p.index_b[0]];
        all.sort();
        assert_eq!(all, [0, 1]);
    }

    #[test]
    fn split_inclusion_frequency_is_uniform() {
        let ds = ten();
        let draws = 10_000;
        let mut hits = [0usize; 10];
        for s in 0..draws {
            let p = split_environments(&ds, 3, 4, s as u64).unwrap();
            for &i in &p.index_a {
                hits[i] += 1;
            }
        }
        for h in hits {
            let freq = h as f64 / draws as f64;
            assert!((freq - 0.3).abs() <= 0.05, "frequency {freq}");
        }
    }
}
