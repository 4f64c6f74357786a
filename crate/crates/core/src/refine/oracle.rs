//! Dense reference evaluations of the GMRF log-likelihood
//! `F = log det(L + I/sigma^2) - tr(V V^T (L + I/sigma^2)) / r` and of its
//! exact edge gradient. Cubic cost; meant for verification on small graphs.

use nalgebra::{Cholesky, DMatrix, SymmetricEigen};

use crate::error::{GarnetError, Result};
use crate::graph::{LaplacianOperator, SparseGraph};
use crate::spectral::EmbeddingMatrix;

fn precision(laplacian: &DMatrix<f64>, sigma_sq: f64) -> DMatrix<f64> {
    let n = laplacian.nrows();
    laplacian + DMatrix::identity(n, n) * (1.0 / sigma_sq)
}

/// `F` for a dense combinatorial Laplacian.
pub fn log_likelihood_dense(
    laplacian: &DMatrix<f64>,
    v: &EmbeddingMatrix,
    sigma_sq: f64,
) -> Result<f64> {
    let n = laplacian.nrows();
    if v.n() != n {
        return Err(GarnetError::DimensionMismatch {
            expected: n,
            got: v.n(),
        });
    }
    if !sigma_sq.is_finite() {
        return Err(GarnetError::NotPositiveDefinite);
    }
    let theta = precision(laplacian, sigma_sq);
    let chol = Cholesky::new(theta.clone()).ok_or(GarnetError::NotPositiveDefinite)?;
    let log_det = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let vm = v.to_dmatrix();
    let trace = (vm.transpose() * &theta * &vm).trace();
    Ok(log_det - trace / v.cols() as f64)
}

/// `F` for a graph, refused above `dense_limit` nodes.
pub fn log_likelihood_oracle(
    g: &SparseGraph,
    v: &EmbeddingMatrix,
    sigma_sq: f64,
    dense_limit: usize,
) -> Result<f64> {
    if g.n() > dense_limit {
        return Err(GarnetError::DenseLimitExceeded {
            n: g.n(),
            limit: dense_limit,
        });
    }
    log_likelihood_dense(&LaplacianOperator::new(g).to_dense(), v, sigma_sq)
}

/// Exact `dF/dw_ij` from the full eigendecomposition of the Laplacian:
/// `sum_k (u_k^T e_ij)^2 / (lambda_k + 1/sigma^2) - ||V^T e_ij||^2 / r`.
pub struct EdgeGradient {
    eigenvalues: Vec<f64>,
    eigenvectors: DMatrix<f64>,
    prior: f64,
}

impl EdgeGradient {
    pub fn new(laplacian: &DMatrix<f64>, sigma_sq: f64) -> Self {
        let eig = SymmetricEigen::new(laplacian.clone());
        EdgeGradient {
            eigenvalues: eig.eigenvalues.iter().copied().collect(),
            eigenvectors: eig.eigenvectors,
            prior: 1.0 / sigma_sq,
        }
    }

    /// `sum_k (u_k^T e_ij)^2 / (lambda_k + 1/sigma^2)` over all eigenpairs.
    pub fn log_det_term(&self, i: usize, j: usize) -> f64 {
        self.eigenvalues
            .iter()
            .enumerate()
            .map(|(k, &l)| {
                let p = self.eigenvectors[(i, k)] - self.eigenvectors[(j, k)];
                p * p / (l + self.prior)
            })
            .sum()
    }

    pub fn gradient(&self, v: &EmbeddingMatrix, i: usize, j: usize) -> f64 {
        self.log_det_term(i, j) - v.sq_dist(i, j) / v.cols() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::EmbeddingSource;

    fn emb(rows: &[f64], cols: usize) -> EmbeddingMatrix {
        EmbeddingMatrix::from_rows(rows.len() / cols, cols, rows.to_vec(), EmbeddingSource::AdversarialV)
    }

    fn p2_laplacian(w: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[w, -w, -w, w])
    }

    #[test]
    fn empty_graph_is_minus_frobenius() {
        let v = emb(&[0.3, -1.2, 0.5], 1);
        let f = log_likelihood_oracle(&SparseGraph::empty(3), &v, 1.0, 5000).unwrap();
        assert!((f + (0.09 + 1.44 + 0.25)).abs() < 1e-14);
    }

    #[test]
    fn p2_closed_form_and_gradient() {
        let v = emb(&[0.4, -0.1], 1);
        // det [[1+w, -w], [-w, 1+w]] = 1 + 2w; trace term = (1+w)(a^2+b^2) - 2wab.
        let f = |w: f64| log_likelihood_dense(&p2_laplacian(w), &v, 1.0).unwrap();
        let (a, b) = (0.4f64, -0.1f64);
        let closed = |w: f64| (1.0 + 2.0 * w).ln() - ((1.0 + w) * (a * a + b * b) - 2.0 * w * a * b);
        assert!((f(1.0) - closed(1.0)).abs() < 1e-14);

        let h = 1e-6;
        let fd = (f(1.0 + h) - f(1.0 - h)) / (2.0 * h);
        let grad = EdgeGradient::new(&p2_laplacian(1.0), 1.0).gradient(&v, 0, 1);
        assert!(((fd - grad) / grad).abs() < 1e-6, "fd {fd} vs analytic {grad}");
        // 2 / (1 + 2w) - (a - b)^2 at w = 1.
        assert!((grad - (2.0 / 3.0 - 0.25)).abs() < 1e-12);
    }

    #[test]
    fn coincident_endpoints_increase_likelihood() {
        let g = SparseGraph::from_unweighted(3, [(0, 1)]);
        let v = emb(&[0.2, 0.7, 0.7], 1);
        let before = log_likelihood_oracle(&g, &v, 1.0, 5000).unwrap();
        let g2 = SparseGraph::from_edges(3, [(0, 1, 1.0), (1, 2, 1e-3)]);
        let after = log_likelihood_oracle(&g2, &v, 1.0, 5000).unwrap();
        assert!(after > before);
    }

    #[test]
    fn guards() {
        let g = SparseGraph::from_unweighted(2, [(0, 1)]);
        let v = emb(&[0.1, 0.2], 1);
        assert!(matches!(
            log_likelihood_oracle(&g, &v, f64::INFINITY, 5000),
            Err(GarnetError::NotPositiveDefinite)
        ));
        assert!(matches!(
            log_likelihood_oracle(&g, &v, 1.0, 1),
            Err(GarnetError::DenseLimitExceeded { .. })
        ));
    }
}
