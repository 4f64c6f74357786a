//! Base-graph refinement: score every kNN edge by how strongly the
//! attractive-GMRF likelihood gradient favours it, then prune the weak ones.
//!
//! For an edge (i, j) the likelihood gradient is approximated by
//! `||U^T e_ij||^2 - ||V^T e_ij||^2 / r`, where `V` is the weighted spectral
//! embedding of the input graph and `U` the inverse-eigenvalue-weighted
//! embedding of the base graph. The full score is the ratio
//! `s_ij = ||U^T e_ij||^2 / ||V^T e_ij||^2` (small means prunable); the
//! simplified score is just `d_ij = ||V^T e_ij||^2` (large means prunable).

pub mod oracle;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{GarnetError, Result};
use crate::graph::{LaplacianOperator, SparseGraph};
use crate::spectral::{base_graph_embedding, smallest_eigenpairs, EigenOptions, EmbeddingMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RefineMode {
    #[serde(rename = "full")]
    FullDistortion,
    Simplified,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineConfig {
    pub gamma: f64,
    pub mode: RefineMode,
    /// Prior variance; `f64::INFINITY` drops the identity term of the precision matrix.
    pub sigma_sq: f64,
    /// Eigenpairs of the base-graph Laplacian used for `U` (full mode only).
    pub r_base: usize,
    pub eig: EigenOptions,
}

impl RefineConfig {
    pub fn simplified(gamma: f64) -> Self {
        RefineConfig {
            gamma,
            mode: RefineMode::Simplified,
            sigma_sq: f64::INFINITY,
            r_base: 0,
            eig: EigenOptions::default(),
        }
    }

    pub fn full(gamma: f64, r_base: usize) -> Self {
        RefineConfig {
            gamma,
            mode: RefineMode::FullDistortion,
            sigma_sq: f64::INFINITY,
            r_base,
            eig: EigenOptions::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.gamma.is_nan() || self.gamma < 0.0 {
            return Err(GarnetError::InvalidConfig(format!(
                "gamma must be nonnegative, got {}",
                self.gamma
            )));
        }
        if self.sigma_sq.is_nan() || self.sigma_sq <= 0.0 {
            return Err(GarnetError::InvalidConfig(format!(
                "sigma_sq must be positive, got {}",
                self.sigma_sq
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EdgeScore {
    pub i: usize,
    pub j: usize,
    pub distortion: f64,
}

fn check_rows(g: &SparseGraph, v: &EmbeddingMatrix) -> Result<()> {
    if v.n() != g.n() {
        return Err(GarnetError::DimensionMismatch {
            expected: g.n(),
            got: v.n(),
        });
    }
    Ok(())
}

/// `s_ij = ||U_i - U_j||^2 / ||V_i - V_j||^2` for every base-graph edge.
///
/// `U` comes from the smallest `r_base` eigenpairs of the base graph's
/// combinatorial Laplacian. Edges whose endpoints coincide in `V` score
/// `+inf` and are never pruned.
pub fn score_edges_full(
    g_base: &SparseGraph,
    v: &EmbeddingMatrix,
    cfg: &RefineConfig,
) -> Result<Vec<EdgeScore>> {
    cfg.validate()?;
    check_rows(g_base, v)?;
    let lap = LaplacianOperator::new(g_base);
    let sp = smallest_eigenpairs(&lap, cfg.r_base, &cfg.eig)?;
    let u = base_graph_embedding(&sp, cfg.sigma_sq);
    Ok(score_with_embeddings(g_base, &u, v))
}

/// Full-distortion scores from an already computed `U`.
pub fn score_with_embeddings(
    g_base: &SparseGraph,
    u: &EmbeddingMatrix,
    v: &EmbeddingMatrix,
) -> Vec<EdgeScore> {
    g_base
        .edges()
        .map(|(i, j, _)| {
            let num = u.sq_dist(i, j);
            let den = v.sq_dist(i, j);
            let distortion = if den > 0.0 { num / den } else { f64::INFINITY };
            EdgeScore { i, j, distortion }
        })
        .collect()
}

/// `d_ij = ||V_i - V_j||^2` for every base-graph edge.
pub fn score_edges_simplified(g_base: &SparseGraph, v: &EmbeddingMatrix) -> Result<Vec<EdgeScore>> {
    check_rows(g_base, v)?;
    Ok(g_base
        .edges()
        .map(|(i, j, _)| EdgeScore {
            i,
            j,
            distortion: v.sq_dist(i, j),
        })
        .collect())
}

/// Keeps `s >= gamma` (full) or `d <= gamma` (simplified); edges keep their weights.
pub fn prune_edges(
    g_base: &SparseGraph,
    scores: &[EdgeScore],
    cfg: &RefineConfig,
) -> Result<SparseGraph> {
    cfg.validate()?;
    if scores.len() != g_base.num_edges() {
        return Err(GarnetError::DimensionMismatch {
            expected: g_base.num_edges(),
            got: scores.len(),
        });
    }
    let mut sorted: Vec<&EdgeScore> = scores.iter().collect();
    sorted.sort_by_key(|s| (s.i, s.j));
    for (s, (i, j, _)) in sorted.iter().zip(g_base.edges()) {
        if (s.i, s.j) != (i, j) {
            return Err(GarnetError::InvalidConfig(format!(
                "edge scores do not cover base-graph edge ({i}, {j})"
            )));
        }
    }
    let mut keep = sorted.iter().map(|s| match cfg.mode {
        RefineMode::FullDistortion => s.distortion >= cfg.gamma,
        RefineMode::Simplified => s.distortion <= cfg.gamma,
    });
    let pruned = g_base.retain_edges(|_, _, _| keep.next().unwrap_or(false));
    if pruned.num_edges() == 0 && g_base.num_edges() > 0 {
        log::warn!("gamma = {} pruned every base-graph edge", cfg.gamma);
    }
    Ok(pruned)
}

/// The `q`-th percentile (0..=100, linear interpolation) of the scores.
pub fn score_percentile(scores: &[EdgeScore], q: f64) -> Result<f64> {
    if !(0.0..=100.0).contains(&q) {
        return Err(GarnetError::InvalidConfig(format!(
            "percentile must lie in [0, 100], got {q}"
        )));
    }
    if scores.is_empty() {
        return Err(GarnetError::EmptyGraph);
    }
    let mut vals: Vec<f64> = scores.iter().map(|s| s.distortion).collect();
    vals.sort_by(f64::total_cmp);
    let pos = q / 100.0 * (vals.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    if lo == hi || vals[hi].is_infinite() {
        return Ok(if frac > 0.0 { vals[hi] } else { vals[lo] });
    }
    Ok(vals[lo] + frac * (vals[hi] - vals[lo]))
}

/// Writes `i,j,score` rows sorted by score ascending.
pub fn write_scores_csv(scores: &[EdgeScore], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| {
        a.distortion
            .total_cmp(&b.distortion)
            .then((a.i, a.j).cmp(&(b.i, b.j)))
    });
    let write = || -> std::io::Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "i,j,score")?;
        for s in &sorted {
            writeln!(out, "{},{},{}", s.i, s.j, s.distortion)?;
        }
        out.flush()
    };
    write().map_err(|e| GarnetError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{normalized_operator, OperatorKind};
    use crate::spectral::{top_r_eigenpairs, weighted_embedding, EmbeddingSource};

    fn k3() -> SparseGraph {
        SparseGraph::from_unweighted(3, [(0, 1), (1, 2), (0, 2)])
    }

    fn emb(rows: &[f64], cols: usize) -> EmbeddingMatrix {
        EmbeddingMatrix::from_rows(rows.len() / cols, cols, rows.to_vec(), EmbeddingSource::AdversarialV)
    }

    #[test]
    fn identical_embeddings_score_one() {
        let g = SparseGraph::from_unweighted(4, [(0, 1), (1, 2), (2, 3), (0, 3)]);
        let v = emb(&[0.1, 0.5, -0.3, 0.2, 0.7, -0.1, 0.0, 0.4], 2);
        for s in score_with_embeddings(&g, &v, &v) {
            assert_eq!(s.distortion, 1.0);
        }
    }

    #[test]
    fn k3_full_mode_excludes_null_column() {
        // r_base = 1 on K3 only yields lambda_1 = 0, which is dropped for
        // infinite prior variance; every numerator is then 0 and the
        // constant V makes every denominator 0 as well.
        let g = k3();
        let op = normalized_operator(&g, OperatorKind::NormalizedLaplacian);
        let v = weighted_embedding(&top_r_eigenpairs(&op, 1, &EigenOptions::default()).unwrap());
        let scores = score_edges_full(&g, &v, &RefineConfig::full(1.0, 1)).unwrap();
        assert_eq!(scores.len(), 3);
        assert!(scores.iter().all(|s| s.distortion == f64::INFINITY));
        let kept = prune_edges(&g, &scores, &RefineConfig::full(1e300, 1)).unwrap();
        assert_eq!(kept, g);
    }

    #[test]
    fn simplified_scores() {
        let g = k3();
        let v = emb(&[0.5; 3], 1);
        let scores = score_edges_simplified(&g, &v).unwrap();
        assert!(scores.iter().all(|s| s.distortion == 0.0));

        let v = emb(&[0.0, 1.0, 3.0], 1);
        let d: Vec<f64> = score_edges_simplified(&g, &v)
            .unwrap()
            .iter()
            .map(|s| s.distortion)
            .collect();
        assert_eq!(d, vec![1.0, 9.0, 4.0]);
        assert!(score_edges_simplified(&g, &emb(&[0.0, 1.0], 1)).is_err());
    }

    #[test]
    fn scaling_is_homogeneous() {
        let g = SparseGraph::from_unweighted(5, [(0, 1), (1, 2), (2, 3), (3, 4), (0, 4), (1, 3)]);
        let v = emb(&[0.1, 0.9, 0.4, -0.2, 0.3, 0.3, -0.5, 0.8, 0.0, 0.05], 2);
        let c = 3.0;
        let base = score_edges_simplified(&g, &v).unwrap();
        let scaled = score_edges_simplified(&g, &v.scaled(c)).unwrap();
        for gamma in [0.05, 0.2, 0.5] {
            let a = prune_edges(&g, &base, &RefineConfig::simplified(gamma)).unwrap();
            let b = prune_edges(&g, &scaled, &RefineConfig::simplified(c * c * gamma)).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn pruning_extremes() {
        let g = SparseGraph::from_unweighted(4, [(0, 1), (1, 2), (2, 3)]);
        let v = emb(&[0.0, 1.0, 5.0, 5.5], 1);
        let s = score_edges_simplified(&g, &v).unwrap();
        assert_eq!(prune_edges(&g, &s, &RefineConfig::simplified(f64::INFINITY)).unwrap(), g);
        let kept = prune_edges(&g, &s, &RefineConfig::simplified(1.0)).unwrap();
        let edges: Vec<_> = kept.edges().map(|(i, j, _)| (i, j)).collect();
        assert_eq!(edges, vec![(0, 1), (2, 3)]);

        let u = emb(&[0.0, 2.0, 3.0, 9.0], 1);
        let full = score_with_embeddings(&g, &u, &v);
        assert_eq!(prune_edges(&g, &full, &RefineConfig::full(0.0, 1)).unwrap(), g);
        assert!(prune_edges(&g, &full[..2], &RefineConfig::full(0.0, 1)).is_err());
        assert!(prune_edges(&g, &full, &RefineConfig::full(-1.0, 1)).is_err());
    }

    #[test]
    fn percentile_interpolates() {
        let s: Vec<EdgeScore> = [4.0, 1.0, 3.0, 2.0, 5.0]
            .iter()
            .map(|&d| EdgeScore { i: 0, j: 1, distortion: d })
            .collect();
        assert_eq!(score_percentile(&s, 0.0).unwrap(), 1.0);
        assert_eq!(score_percentile(&s, 100.0).unwrap(), 5.0);
        assert_eq!(score_percentile(&s, 50.0).unwrap(), 3.0);
        assert!((score_percentile(&s, 90.0).unwrap() - 4.6).abs() < 1e-12);
        assert!(score_percentile(&s, 101.0).is_err());
    }
}
