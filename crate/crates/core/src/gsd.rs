//! Graph structure distance between two environment batches.

use crate::error::{arg, Result};
use crate::graph::Graph;
use crate::matrix::Matrix;
use crate::pmp::{embed_all, PmpConfig, StructureEmbedding};
use crate::scalar::{multiset_sum, Scalar};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GsdValue<T> {
    pub total: T,
    pub structure_term: T,
    pub feature_term: T,
}

pub fn l1_distance<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + (x - y).abs())
}

/// Mean over all cross pairs of `‖h_a − h_b‖₁`.
///
/// Pair terms are summed as a multiset, so swapping the arguments yields
/// the bit-identical value.
pub fn pairwise_l1_mean<T: Scalar>(ha: &[StructureEmbedding<T>], hb: &[StructureEmbedding<T>]) -> Result<T> {
    let va: Vec<&[T]> = ha.iter().map(|e| e.h.as_slice()).collect();
    let vb: Vec<&[T]> = hb.iter().map(|e| e.h.as_slice()).collect();
    pairwise_l1_mean_raw(&va, &vb)
}

pub fn pairwise_l1_mean_raw<T: Scalar>(ha: &[&[T]], hb: &[&[T]]) -> Result<T> {
    if ha.is_empty() || hb.is_empty() {
        return Err(arg("pairwise mean needs two non-empty batches"));
    }
    let len = ha[0].len();
    if ha.iter().chain(hb).any(|h| h.len() != len) {
        return Err(arg("embedding length mismatch"));
    }
    let mut terms = Vec::with_capacity(ha.len() * hb.len());
    for a in ha {
        for b in hb {
            terms.push(l1_distance(a, b));
        }
    }
    Ok(multiset_sum(&mut terms) / T::from_usize_lossy(terms.len()))
}

/// Frobenius distance after zero-padding both matrices to the larger node count.
pub fn padded_frobenius<T: Scalar>(xa: &Matrix<T>, xb: &Matrix<T>) -> T {
    debug_assert_eq!(xa.cols(), xb.cols());
    let rows = xa.rows().max(xb.rows());
    let cols = xa.cols();
    let pa = xa.padded(rows, cols);
    let pb = xb.padded(rows, cols);
    pa.as_slice()
        .iter()
        .zip(pb.as_slice())
        .fold(T::zero(), |acc, (&x, &y)| acc + (x - y) * (x - y))
        .sqrt()
}

/// Mean over cross pairs of the padded Frobenius distance between feature matrices.
pub fn feature_expectation<T: Scalar>(batch_a: &[&Graph<T>], batch_b: &[&Graph<T>]) -> Result<T> {
    if batch_a.is_empty() || batch_b.is_empty() {
        return Err(arg("feature term needs two non-empty batches"));
    }
    let d = batch_a[0].feature_dim();
    if batch_a.iter().chain(batch_b).any(|g| g.feature_dim() != d) {
        return Err(arg("feature dimension mismatch between batches"));
    }
    let mut terms = Vec::with_capacity(batch_a.len() * batch_b.len());
    for a in batch_a {
        for b in batch_b {
            terms.push(padded_frobenius(&a.features, &b.features));
        }
    }
    Ok(multiset_sum(&mut terms) / T::from_usize_lossy(terms.len()))
}

pub fn gsd<T: Scalar>(batch_a: &[&Graph<T>], batch_b: &[&Graph<T>], cfg: PmpConfig) -> Result<GsdValue<T>> {
    let feature_term = feature_expectation(batch_a, batch_b)?;
    let ha = embed_all(batch_a, cfg)?;
    let hb = embed_all(batch_b, cfg)?;
    gsd_from_parts(&ha, &hb, feature_term)
}

pub fn gsd_from_parts<T: Scalar>(
    ha: &[StructureEmbedding<T>],
    hb: &[StructureEmbedding<T>],
    feature_term: T,
) -> Result<GsdValue<T>> {
    let structure_term = pairwise_l1_mean(ha, hb)?;
    Ok(GsdValue { total: structure_term + feature_term, structure_term, feature_term })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pmp::structure_embedding;

    fn emb(h: Vec<f64>) -> StructureEmbedding<f64> {
        let channels = h.len();
        StructureEmbedding { h, degree_cap: 1, pairs: 0, channels }
    }

    #[test]
    fn singleton_identity_is_zero() {
        let a = [emb(vec![1.0, -2.0])];
        assert_eq!(pairwise_l1_mean(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn single_pair_l1() {
        let a = [emb(vec![0.0, 0.0])];
        let b = [emb(vec![1.0, 2.0])];
        assert_eq!(pairwise_l1_mean(&a, &b).unwrap(), 3.0);
    }

    #[test]
    fn two_by_one_mean() {
        let a = [emb(vec![0.0]), emb(vec![2.0])];
        let b = [emb(vec![1.0])];
        assert_eq!(pairwise_l1_mean(&a, &b).unwrap(), 1.0);
    }

    #[test]
    fn length_mismatch_rejected() {
        let a = [emb(vec![0.0])];
        let b = [emb(vec![1.0, 2.0])];
        assert!(pairwise_l1_mean(&a, &b).is_err());
        assert!(pairwise_l1_mean::<f64>(&[], &b).is_err());
    }

    #[test]
    fn one_node_graphs_feature_and_structure_terms() {
        let ga = Graph::new(Matrix::zeros(1, 1), Matrix::from_rows(&[vec![0.0]]));
        let gb = Graph::new(Matrix::zeros(1, 1), Matrix::from_rows(&[vec![3.0]]));
        let v = gsd(&[&ga], &[&gb], PmpConfig::with_cap(1)).unwrap();
        assert_eq!(v.feature_term, 3.0);
        let ha = structure_embedding(&ga, PmpConfig::with_cap(1)).unwrap();
        let hb = structure_embedding(&gb, PmpConfig::with_cap(1)).unwrap();
        assert_eq!(v.structure_term, l1_distance(&ha.h, &hb.h));
        assert_eq!(v.total, v.structure_term + v.feature_term);
    }

    #[test]
    fn feature_dim_mismatch_rejected() {
        let ga = Graph::<f64>::new(Matrix::zeros(1, 1), Matrix::zeros(1, 2));
        let gb = Graph::new(Matrix::zeros(1, 1), Matrix::zeros(1, 3));
        assert!(gsd(&[&ga], &[&gb], PmpConfig::default()).is_err());
    }

    #[test]
    fn padding_compares_unequal_sizes() {
        let xa = Matrix::from_rows(&[vec![1.0], vec![2.0]]);
        let xb = Matrix::from_rows(&[vec![1.0]]);
        assert_eq!(padded_frobenius(&xa, &xb), 2.0);
        assert_eq!(padded_frobenius(&xb, &xa), 2.0);
    }
}
