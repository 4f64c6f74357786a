//! kNN base-graph construction over embedding rows.

mod hnsw;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GarnetError, Result};
use crate::graph::SparseGraph;
use crate::spectral::{sq_dist, EmbeddingMatrix};

use hnsw::{Candidate, Hnsw, Visited};

/// Out-degree of the HNSW layers above 0 (layer 0 uses twice this).
const HNSW_LINKS: usize = 16;
const HNSW_MIN_EF_CONSTRUCTION: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KnnMode {
    Exact,
    Approximate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnnConfig {
    pub k: usize,
    pub mode: KnnMode,
    /// Candidate-list size for approximate queries; at least `k`.
    pub approx_ef: usize,
    pub seed: u64,
}

impl KnnConfig {
    pub fn exact(k: usize) -> Self {
        KnnConfig {
            k,
            mode: KnnMode::Exact,
            approx_ef: 2 * k,
            seed: 0,
        }
    }

    pub fn approximate(k: usize, approx_ef: usize, seed: u64) -> Self {
        KnnConfig {
            k,
            mode: KnnMode::Approximate,
            approx_ef,
            seed,
        }
    }
}

/// The `k` nearest rows to each row (nearest first, ties by smaller id),
/// before symmetrization.
pub fn knn_lists(emb: &EmbeddingMatrix, cfg: &KnnConfig) -> Result<Vec<Vec<usize>>> {
    let n = emb.n();
    if cfg.k == 0 || n < 2 || cfg.k > n - 1 {
        return Err(GarnetError::KTooLarge { k: cfg.k, n });
    }
    if cfg.approx_ef < cfg.k {
        return Err(GarnetError::InvalidConfig(format!(
            "approx_ef ({}) must be at least k ({})",
            cfg.approx_ef, cfg.k
        )));
    }
    let first = emb.row(0);
    if (1..n).all(|i| emb.row(i) == first) {
        return Err(GarnetError::DegenerateEmbedding);
    }
    Ok(match cfg.mode {
        KnnMode::Exact => (0..n)
            .into_par_iter()
            .map(|i| exact_neighbors(emb, i, cfg.k))
            .collect(),
        KnnMode::Approximate => {
            let ef_construction = cfg.approx_ef.max(HNSW_MIN_EF_CONSTRUCTION);
            let index = Hnsw::build(emb, HNSW_LINKS, ef_construction, cfg.seed);
            (0..n)
                .into_par_iter()
                .map_init(
                    || Visited::new(n),
                    |visited, i| index.neighbors_of(i, cfg.k, cfg.approx_ef, visited),
                )
                .collect()
        }
    })
}

fn exact_neighbors(emb: &EmbeddingMatrix, i: usize, k: usize) -> Vec<usize> {
    let query = emb.row(i);
    let mut cands: Vec<Candidate> = (0..emb.n())
        .filter(|&j| j != i)
        .map(|j| Candidate {
            dist: sq_dist(query, emb.row(j)),
            id: j as u32,
        })
        .collect();
    if k < cands.len() {
        cands.select_nth_unstable(k - 1);
        cands.truncate(k);
    }
    cands.sort_unstable();
    cands.into_iter().map(|c| c.id as usize).collect()
}

/// Unit-weight kNN graph, symmetrized by union.
pub fn build_knn_graph(emb: &EmbeddingMatrix, cfg: &KnnConfig) -> Result<SparseGraph> {
    let lists = knn_lists(emb, cfg)?;
    let pairs = lists
        .iter()
        .enumerate()
        .flat_map(|(i, nbrs)| nbrs.iter().map(move |&j| (i.min(j), i.max(j))));
    let mut pairs: Vec<(usize, usize)> = pairs.collect();
    pairs.sort_unstable();
    pairs.dedup();
    Ok(SparseGraph::from_unweighted(emb.n(), pairs))
}

/// Share of `exact`'s edges that `approx` also contains.
pub fn knn_recall(approx: &SparseGraph, exact: &SparseGraph) -> Result<f64> {
    if approx.n() != exact.n() {
        return Err(GarnetError::SizeMismatch {
            left: approx.n(),
            right: exact.n(),
        });
    }
    let total = exact.num_edges();
    if total == 0 {
        return Ok(1.0);
    }
    let hit = exact.edges().filter(|&(i, j, _)| approx.has_edge(i, j)).count();
    Ok(hit as f64 / total as f64)
}
