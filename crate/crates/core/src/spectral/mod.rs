//! Laplacian eigenpairs, weighted spectral embeddings and the low-rank
//! (truncated SVD) reconstruction they induce.

mod eigensolver;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;

pub use eigensolver::{smallest_eigenpairs, EigenOptions};

use crate::error::{GarnetError, Result};
use crate::graph::{NormalizedOperator, OperatorKind, SparseGraph};

/// Eigenvalues below this are treated as exact zeros.
const ZERO_EIGENVALUE: f64 = 1e-12;

/// Smallest eigenpairs, ascending, with unit-norm eigenvector columns.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralPair {
    pub eigenvalues: Vec<f64>,
    /// n x r, column k pairs with `eigenvalues[k]`.
    pub eigenvectors: DMatrix<f64>,
    pub residual_norms: Vec<f64>,
    pub restarts: usize,
}

impl SpectralPair {
    pub fn r(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn n(&self) -> usize {
        self.eigenvectors.nrows()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingSource {
    AdversarialV,
    BaseGraphU,
    WithFeatures,
}

/// Row-major n x r matrix; row i is the embedding of node i.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    n: usize,
    cols: usize,
    data: Vec<f64>,
    source: EmbeddingSource,
}

impl EmbeddingMatrix {
    pub fn from_rows(n: usize, cols: usize, data: Vec<f64>, source: EmbeddingSource) -> Self {
        assert_eq!(data.len(), n * cols, "embedding data has wrong length");
        EmbeddingMatrix {
            n,
            cols,
            data,
            source,
        }
    }

    pub fn from_dmatrix(m: &DMatrix<f64>, source: EmbeddingSource) -> Self {
        let (n, cols) = m.shape();
        let data = (0..n)
            .flat_map(|i| (0..cols).map(move |j| m[(i, j)]))
            .collect();
        Self::from_rows(n, cols, data, source)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn source(&self) -> EmbeddingSource {
        self.source
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.cols, &self.data)
    }

    /// `||row_i - row_j||^2`, i.e. `||M^T e_{ij}||^2`.
    pub fn sq_dist(&self, i: usize, j: usize) -> f64 {
        sq_dist(self.row(i), self.row(j))
    }

    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|x| *x *= c);
        out
    }

    /// Dumps rows as CSV with 17 significant digits.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let write = || -> std::io::Result<()> {
            let mut out = BufWriter::new(File::create(path)?);
            for i in 0..self.n {
                let line: Vec<String> = self.row(i).iter().map(|x| format!("{x:.16e}")).collect();
                writeln!(out, "{}", line.join(","))?;
            }
            out.flush()
        };
        write().map_err(|e| GarnetError::io(path, e))
    }
}

#[inline]
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

/// The `r` smallest eigenpairs of the normalized Laplacian.
pub fn top_r_eigenpairs(
    op: &NormalizedOperator<'_>,
    r: usize,
    opts: &EigenOptions,
) -> Result<SpectralPair> {
    if op.kind() != OperatorKind::NormalizedLaplacian {
        return Err(GarnetError::InvalidConfig(
            "eigenpairs are taken from the normalized Laplacian".into(),
        ));
    }
    let sp = smallest_eigenpairs(op, r, opts)?;
    if let Some(&last) = sp.eigenvalues.last() {
        if last > 1.0 {
            log::warn!("lambda_r = {last:.6} exceeds 1; embedding weights use |1 - lambda|");
        }
    }
    Ok(sp)
}

/// Embedding rank: `min(10 c, n - 2)` unless overridden.
pub fn choose_r(num_classes: usize, n: usize, override_r: Option<usize>) -> usize {
    if let Some(r) = override_r {
        return r;
    }
    (10 * num_classes).min(n.saturating_sub(2)).max(1)
}

/// Column k is `sqrt(|1 - lambda_k|) v_k`.
pub fn weighted_embedding(sp: &SpectralPair) -> EmbeddingMatrix {
    let weights: Vec<f64> = sp.eigenvalues.iter().map(|l| (1.0 - l).abs().sqrt()).collect();
    scale_columns(sp, &weights, (0..sp.r()).collect(), EmbeddingSource::AdversarialV)
}

/// Column k is `u_k / sqrt(lambda_k + 1/sigma_sq)`.
///
/// With an infinite prior variance the zero-eigenvalue columns would be
/// singular; they are dropped. Their eigenvectors are constant on each
/// connected component, so they contribute nothing to intra-component
/// distances anyway.
pub fn base_graph_embedding(sp: &SpectralPair, sigma_sq: f64) -> EmbeddingMatrix {
    let prior = if sigma_sq.is_infinite() { 0.0 } else { 1.0 / sigma_sq };
    let keep: Vec<usize> = (0..sp.r())
        .filter(|&k| prior > 0.0 || sp.eigenvalues[k] > ZERO_EIGENVALUE)
        .collect();
    let weights: Vec<f64> = sp
        .eigenvalues
        .iter()
        .map(|l| 1.0 / (l + prior).sqrt())
        .collect();
    scale_columns(sp, &weights, keep, EmbeddingSource::BaseGraphU)
}

fn scale_columns(
    sp: &SpectralPair,
    weights: &[f64],
    keep: Vec<usize>,
    source: EmbeddingSource,
) -> EmbeddingMatrix {
    let n = sp.n();
    let cols = keep.len();
    let mut data = vec![0.0; n * cols];
    for (c, &k) in keep.iter().enumerate() {
        let w = weights[k];
        for i in 0..n {
            data[i * cols + c] = w * sp.eigenvectors[(i, k)];
        }
    }
    EmbeddingMatrix::from_rows(n, cols, data, source)
}

/// Dense `V V^T`, refused above `dense_limit` nodes.
pub fn low_rank_reconstruct(v: &EmbeddingMatrix, dense_limit: usize) -> Result<DMatrix<f64>> {
    if v.n() > dense_limit {
        return Err(GarnetError::DenseLimitExceeded {
            n: v.n(),
            limit: dense_limit,
        });
    }
    let m = v.to_dmatrix();
    Ok(&m * m.transpose())
}

/// Turns a dense reconstruction into a weighted graph by keeping its
/// strictly positive off-diagonal entries.
pub fn dense_to_graph(a: &DMatrix<f64>) -> SparseGraph {
    let n = a.nrows();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let w = 0.5 * (a[(i, j)] + a[(j, i)]);
            if w > 0.0 {
                edges.push((i, j, w));
            }
        }
    }
    SparseGraph::from_edges(n, edges)
}

/// `[V | scale * X_rownorm]`, with each feature row scaled to unit norm.
pub fn embedding_with_features(
    v: &EmbeddingMatrix,
    features: &DMatrix<f64>,
    feature_scale: f64,
) -> Result<EmbeddingMatrix> {
    if features.nrows() != v.n() {
        return Err(GarnetError::DimensionMismatch {
            expected: v.n(),
            got: features.nrows(),
        });
    }
    let (n, r, d) = (v.n(), v.cols(), features.ncols());
    let cols = r + d;
    let mut data = Vec::with_capacity(n * cols);
    for i in 0..n {
        data.extend_from_slice(v.row(i));
        let row = features.row(i);
        let norm = row.norm();
        let scale = if norm > 0.0 { feature_scale / norm } else { 0.0 };
        data.extend(row.iter().map(|x| x * scale));
    }
    Ok(EmbeddingMatrix::from_rows(
        n,
        cols,
        data,
        EmbeddingSource::WithFeatures,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::normalized_operator;

    fn k3() -> SparseGraph {
        SparseGraph::from_unweighted(3, [(0, 1), (1, 2), (0, 2)])
    }

    fn spectrum(g: &SparseGraph, r: usize) -> SpectralPair {
        let op = normalized_operator(g, OperatorKind::NormalizedLaplacian);
        top_r_eigenpairs(&op, r, &EigenOptions::default()).unwrap()
    }

    #[test]
    fn k3_first_pair() {
        let sp = spectrum(&k3(), 1);
        assert!(sp.eigenvalues[0].abs() < 1e-14);
        let s = 1.0 / 3f64.sqrt();
        for i in 0..3 {
            assert!((sp.eigenvectors[(i, 0)] - s).abs() < 1e-14);
        }
        let v = weighted_embedding(&sp);
        for i in 0..3 {
            assert!((v.row(i)[0] - s).abs() < 1e-14);
        }
        let a = low_rank_reconstruct(&v, 5000).unwrap();
        assert!(a.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-14));
    }

    #[test]
    fn p2_first_pair() {
        let g = SparseGraph::from_unweighted(2, [(0, 1)]);
        let sp = spectrum(&g, 1);
        assert!(sp.eigenvalues[0].abs() < 1e-14);
        let v = weighted_embedding(&sp);
        let s = 1.0 / 2f64.sqrt();
        assert!((v.row(0)[0] - s).abs() < 1e-14 && (v.row(1)[0] - s).abs() < 1e-14);
    }

    #[test]
    fn rank_bounds() {
        let g = k3();
        let op = normalized_operator(&g, OperatorKind::NormalizedLaplacian);
        let opts = EigenOptions::default();
        assert!(matches!(
            top_r_eigenpairs(&op, 3, &opts),
            Err(GarnetError::RankTooLarge { .. })
        ));
        assert!(matches!(
            top_r_eigenpairs(&op, 0, &opts),
            Err(GarnetError::RankTooLarge { .. })
        ));
        let adj = normalized_operator(&g, OperatorKind::NormalizedAdjacency);
        assert!(top_r_eigenpairs(&adj, 1, &opts).is_err());
    }

    #[test]
    fn choose_r_rules() {
        assert_eq!(choose_r(5, 2485, None), 50);
        assert_eq!(choose_r(40, 169_343, Some(500)), 500);
        assert_eq!(choose_r(10, 8, None), 6);
    }

    #[test]
    fn unit_eigenvalue_gives_zero_column() {
        let sp = SpectralPair {
            eigenvalues: vec![0.0, 1.0],
            eigenvectors: DMatrix::from_row_slice(2, 2, &[0.6, 0.8, 0.8, -0.6]),
            residual_norms: vec![0.0, 0.0],
            restarts: 0,
        };
        let v = weighted_embedding(&sp);
        assert_eq!(v.row(0)[1], 0.0);
        assert_eq!(v.row(1)[1], 0.0);
    }

    #[test]
    fn base_embedding_drops_null_columns_without_prior() {
        let sp = SpectralPair {
            eigenvalues: vec![0.0, 0.5],
            eigenvectors: DMatrix::from_row_slice(2, 2, &[0.6, 0.8, 0.8, -0.6]),
            residual_norms: vec![0.0, 0.0],
            restarts: 0,
        };
        let u = base_graph_embedding(&sp, f64::INFINITY);
        assert_eq!(u.cols(), 1);
        assert!((u.row(0)[0] - 0.8 / 0.5f64.sqrt()).abs() < 1e-15);
        let u = base_graph_embedding(&sp, 1.0);
        assert_eq!(u.cols(), 2);
        assert!((u.row(1)[0] - 0.8).abs() < 1e-15);
        assert!((u.row(1)[1] + 0.6 / 1.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn dense_limit_guard() {
        let v = EmbeddingMatrix::from_rows(10, 1, vec![1.0; 10], EmbeddingSource::AdversarialV);
        assert!(matches!(
            low_rank_reconstruct(&v, 5),
            Err(GarnetError::DenseLimitExceeded { n: 10, limit: 5 })
        ));
    }

    #[test]
    fn features_concatenation() {
        let sp = spectrum(&k3(), 1);
        let v = weighted_embedding(&sp);
        let x = DMatrix::<f64>::identity(3, 3) * 4.0;
        let e = embedding_with_features(&v, &x, 1.0).unwrap();
        assert_eq!(e.cols(), 4);
        for i in 0..3 {
            let row = e.row(i);
            assert!((row[0] - 1.0 / 3f64.sqrt()).abs() < 1e-14);
            for j in 0..3 {
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((row[1 + j] - expected).abs() < 1e-15);
            }
        }
        let zero_row = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 3.0, 4.0, 1.0, 0.0]);
        let e = embedding_with_features(&v, &zero_row, 2.5).unwrap();
        let norms: Vec<f64> = (0..3)
            .map(|i| e.row(i)[1..].iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect();
        assert_eq!(norms[0], 0.0);
        assert!((norms[1] - 2.5).abs() < 1e-14 && (norms[2] - 2.5).abs() < 1e-14);
        assert!(embedding_with_features(&v, &DMatrix::zeros(2, 2), 1.0).is_err());
    }

    #[test]
    fn sign_convention() {
        let g = SparseGraph::from_unweighted(6, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (0, 3)]);
        let sp = spectrum(&g, 4);
        for k in 0..4 {
            let col = sp.eigenvectors.column(k);
            let mut best = 0;
            for i in 0..col.len() {
                if col[i].abs() > col[best].abs() {
                    best = i;
                }
            }
            assert!(col[best] > 0.0);
        }
    }
}
