//! Helpers shared by the integration tests: random graphs and dense
//! reference computations that do not go through the library's operators.

#![allow(dead_code)]

use garnet_core::graph::SparseGraph;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Erdos-Renyi graph with unit weights.
pub fn random_graph(n: usize, p: f64, seed: u64) -> SparseGraph {
    let mut rng = rng(seed);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    SparseGraph::from_unweighted(n, edges)
}

/// Erdos-Renyi graph with weights drawn from [0.5, 2).
pub fn random_weighted_graph(n: usize, p: f64, seed: u64) -> SparseGraph {
    let mut rng = rng(seed);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < p {
                edges.push((i, j, rng.random_range(0.5..2.0)));
            }
        }
    }
    SparseGraph::from_edges(n, edges)
}

/// Random graph that contains a Hamiltonian path, hence is connected.
pub fn random_connected_graph(n: usize, p: f64, seed: u64) -> SparseGraph {
    let mut rng = rng(seed);
    let mut edges: Vec<(usize, usize, f64)> = (0..n - 1).map(|i| (i, i + 1, 1.0)).collect();
    for i in 0..n {
        for j in i + 2..n {
            if rng.random::<f64>() < p {
                edges.push((i, j, 1.0));
            }
        }
    }
    SparseGraph::from_edges(n, edges)
}

/// Dense adjacency assembled from the edge iterator.
pub fn dense_adjacency(g: &SparseGraph) -> DMatrix<f64> {
    let n = g.n();
    let mut a = DMatrix::zeros(n, n);
    for (i, j, w) in g.edges() {
        a[(i, j)] = w;
        a[(j, i)] = w;
    }
    a
}

/// `D^{-1/2} A D^{-1/2}` with zero rows for isolated nodes.
pub fn dense_norm_adjacency(g: &SparseGraph) -> DMatrix<f64> {
    let a = dense_adjacency(g);
    let n = a.nrows();
    let s: Vec<f64> = (0..n)
        .map(|i| {
            let d: f64 = a.row(i).iter().sum();
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    DMatrix::from_fn(n, n, |i, j| s[i] * a[(i, j)] * s[j])
}

/// `I - D^{-1/2} A D^{-1/2}`.
pub fn dense_norm_laplacian(g: &SparseGraph) -> DMatrix<f64> {
    let n = g.n();
    DMatrix::identity(n, n) - dense_norm_adjacency(g)
}

/// `D - A`.
pub fn dense_laplacian(g: &SparseGraph) -> DMatrix<f64> {
    let a = dense_adjacency(g);
    let n = a.nrows();
    let mut l = -a.clone();
    for i in 0..n {
        l[(i, i)] = a.row(i).iter().sum();
    }
    l
}

/// Ascending eigenvalues with matching eigenvector columns.
pub fn sorted_eigen(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..m.nrows()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vecs = DMatrix::from_fn(m.nrows(), m.nrows(), |i, c| eig.eigenvectors[(i, order[c])]);
    (vals, vecs)
}

/// Largest principal angle (radians) between the column spans of `a` and `b`,
/// both with orthonormal columns.
pub fn max_principal_angle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let m = a.transpose() * b;
    let sv = m.singular_values();
    let smallest = sv.iter().copied().fold(f64::INFINITY, f64::min);
    smallest.clamp(-1.0, 1.0).acos()
}

/// Best rank-`r` approximation from a dense SVD.
pub fn tsvd(m: &DMatrix<f64>, r: usize) -> DMatrix<f64> {
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("u requested");
    let vt = svd.v_t.expect("v_t requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let mut out = DMatrix::zeros(m.nrows(), m.ncols());
    for &k in order.iter().take(r) {
        out += svd.singular_values[k] * u.column(k) * vt.row(k);
    }
    out
}

pub fn random_vector(n: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))
}

/// Random points in `[0, 1)^dim`, row-major.
pub fn random_points(n: usize, dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng(seed);
    (0..n * dim).map(|_| rng.random::<f64>()).collect()
}

/// All-pairs nearest neighbors with the smaller-id tie-break.
pub fn brute_force_knn(points: &[f64], dim: usize, k: usize) -> Vec<Vec<usize>> {
    let n = points.len() / dim;
    (0..n)
        .map(|i| {
            let row_i = &points[i * dim..(i + 1) * dim];
            let mut d: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let row_j = &points[j * dim..(j + 1) * dim];
                    let s: f64 = row_i.iter().zip(row_j).map(|(a, b)| (a - b) * (a - b)).sum();
                    (s, j)
                })
                .collect();
            d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            d.into_iter().take(k).map(|(_, j)| j).collect()
        })
        .collect()
}
