//! Training-free structural attacks and a stochastic block model generator
//! for desk-scale experiments.
//!
//! `DiceGlobal` deletes intra-class edges and connects inter-class pairs
//! ("delete internally, connect externally"), `TargetedDice` does the same
//! around chosen nodes, and `RandomFlip` toggles uniformly random pairs.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::IndexedRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{GarnetError, Result};
use crate::graph::SparseGraph;
use crate::seed::{rng_from_seed, Rng};

/// Rejection-sampling attempts before falling back to enumeration.
const REJECTION_TRIES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    DiceGlobal,
    RandomFlip,
    TargetedDice,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    pub kind: AttackKind,
    pub ptb_ratio: f64,
    pub targets: Vec<usize>,
    pub perturbations_per_target: usize,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            kind: AttackKind::DiceGlobal,
            ptb_ratio: 0.0,
            targets: Vec::new(),
            perturbations_per_target: 5,
            seed: 0,
        }
    }
}

impl AttackConfig {
    pub fn dice(ptb_ratio: f64, seed: u64) -> Self {
        AttackConfig {
            ptb_ratio,
            seed,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MoveOp {
    Del,
    Ins,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Move {
    pub op: MoveOp,
    pub i: usize,
    pub j: usize,
}

#[derive(Debug, Clone)]
pub struct AttackOutcome {
    pub graph: SparseGraph,
    pub moves: Vec<Move>,
    pub budget: usize,
}

fn key(i: usize, j: usize) -> (usize, usize) {
    (i.min(j), i.max(j))
}

struct State<'a> {
    n: usize,
    labels: &'a [usize],
    edges: HashSet<(usize, usize)>,
    moves: Vec<Move>,
    rng: Rng,
}

impl State<'_> {
    fn delete(&mut self, i: usize, j: usize) {
        self.edges.remove(&key(i, j));
        self.moves.push(Move {
            op: MoveOp::Del,
            i: i.min(j),
            j: i.max(j),
        });
    }

    fn insert(&mut self, i: usize, j: usize) {
        self.edges.insert(key(i, j));
        self.moves.push(Move {
            op: MoveOp::Ins,
            i: i.min(j),
            j: i.max(j),
        });
    }

    /// Uniform pair satisfying `ok`, by rejection first and enumeration after.
    fn sample_pair<F>(&mut self, ok: F) -> Option<(usize, usize)>
    where
        F: Fn(usize, usize, &HashSet<(usize, usize)>) -> bool,
    {
        for _ in 0..REJECTION_TRIES {
            let i = self.rng.random_range(0..self.n);
            let j = self.rng.random_range(0..self.n);
            if i != j && ok(i.min(j), i.max(j), &self.edges) {
                return Some(key(i, j));
            }
        }
        let all: Vec<(usize, usize)> = (0..self.n)
            .flat_map(|i| ((i + 1)..self.n).map(move |j| (i, j)))
            .filter(|&(i, j)| ok(i, j, &self.edges))
            .collect();
        all.choose(&mut self.rng).copied()
    }
}

/// Perturbs `g_clean` according to `cfg`; the result only ever gains
/// unit-weight edges and loses existing ones.
pub fn attack(g_clean: &SparseGraph, labels: &[usize], cfg: &AttackConfig) -> Result<AttackOutcome> {
    let n = g_clean.n();
    if labels.len() != n {
        return Err(GarnetError::DimensionMismatch {
            expected: n,
            got: labels.len(),
        });
    }
    if !(0.0..=1.0).contains(&cfg.ptb_ratio) {
        return Err(GarnetError::InvalidConfig(format!(
            "ptb_ratio must lie in [0, 1], got {}",
            cfg.ptb_ratio
        )));
    }
    let mut st = State {
        n,
        labels,
        edges: g_clean.edges().map(|(i, j, _)| (i, j)).collect(),
        moves: Vec::new(),
        rng: rng_from_seed(cfg.seed),
    };
    let global_budget = (cfg.ptb_ratio * g_clean.num_edges() as f64).round() as usize;
    let budget = match cfg.kind {
        AttackKind::DiceGlobal => {
            dice_global(&mut st, g_clean, global_budget)?;
            global_budget
        }
        AttackKind::RandomFlip => {
            random_flip(&mut st, global_budget)?;
            global_budget
        }
        AttackKind::TargetedDice => {
            if cfg.targets.is_empty() {
                return Err(GarnetError::InvalidConfig(
                    "targeted attack needs at least one target".into(),
                ));
            }
            if let Some(&bad) = cfg.targets.iter().find(|&&t| t >= n) {
                return Err(GarnetError::IdOutOfRange { id: bad, n });
            }
            let budget = cfg.targets.len() * cfg.perturbations_per_target;
            targeted_dice(&mut st, &cfg.targets, cfg.perturbations_per_target, budget)?;
            budget
        }
    };
    let graph = rebuild(g_clean, &st.edges);
    Ok(AttackOutcome {
        graph,
        moves: st.moves,
        budget,
    })
}

fn rebuild(g_clean: &SparseGraph, edges: &HashSet<(usize, usize)>) -> SparseGraph {
    let mut list: Vec<(usize, usize, f64)> = edges
        .iter()
        .map(|&(i, j)| (i, j, g_clean.weight(i, j).unwrap_or(1.0)))
        .collect();
    list.sort_unstable_by_key(|&(i, j, _)| (i, j));
    SparseGraph::from_edges(g_clean.n(), list)
}

fn dice_global(st: &mut State<'_>, g: &SparseGraph, budget: usize) -> Result<()> {
    let labels = st.labels;
    let mut intra: Vec<(usize, usize)> = g
        .edges()
        .filter(|&(i, j, _)| labels[i] == labels[j])
        .map(|(i, j, _)| (i, j))
        .collect();
    let mut class_sizes = vec![0usize; labels.iter().max().map_or(0, |m| m + 1)];
    for &l in labels {
        class_sizes[l] += 1;
    }
    let same_pairs: usize = class_sizes.iter().map(|s| s * s.saturating_sub(1) / 2).sum();
    let inter_pairs = st.n * st.n.saturating_sub(1) / 2 - same_pairs;
    let mut inter_edges = g.edges().filter(|&(i, j, _)| labels[i] != labels[j]).count();

    for done in 0..budget {
        let want_delete = st.rng.random_bool(0.5);
        let can_delete = !intra.is_empty();
        let can_insert = inter_edges < inter_pairs;
        let delete = match (can_delete, can_insert) {
            (false, false) => {
                return Err(GarnetError::BudgetInfeasible {
                    completed: done,
                    budget,
                })
            }
            (true, false) => true,
            (false, true) => false,
            (true, true) => want_delete,
        };
        if delete {
            let idx = st.rng.random_range(0..intra.len());
            let (i, j) = intra.swap_remove(idx);
            st.delete(i, j);
        } else {
            let (i, j) = st
                .sample_pair(|i, j, edges| labels[i] != labels[j] && !edges.contains(&(i, j)))
                .expect("an absent inter-class pair exists");
            st.insert(i, j);
            inter_edges += 1;
        }
    }
    Ok(())
}

fn random_flip(st: &mut State<'_>, budget: usize) -> Result<()> {
    let mut touched: HashSet<(usize, usize)> = HashSet::new();
    let total_pairs = st.n * st.n.saturating_sub(1) / 2;
    for done in 0..budget {
        if touched.len() >= total_pairs {
            return Err(GarnetError::BudgetInfeasible {
                completed: done,
                budget,
            });
        }
        let (i, j) = st
            .sample_pair(|i, j, _| !touched.contains(&(i, j)))
            .expect("an untouched pair exists");
        touched.insert((i, j));
        if st.edges.contains(&(i, j)) {
            st.delete(i, j);
        } else {
            st.insert(i, j);
        }
    }
    Ok(())
}

fn targeted_dice(
    st: &mut State<'_>,
    targets: &[usize],
    per_target: usize,
    budget: usize,
) -> Result<()> {
    let labels = st.labels;
    for &t in targets {
        for _ in 0..per_target {
            let mut intra: Vec<usize> = st
                .edges
                .iter()
                .filter_map(|&(i, j)| match (i == t, j == t) {
                    (true, _) => Some(j),
                    (_, true) => Some(i),
                    _ => None,
                })
                .filter(|&o| labels[o] == labels[t])
                .collect();
            intra.sort_unstable();
            let mut absent: Vec<usize> = (0..st.n)
                .filter(|&o| labels[o] != labels[t] && !st.edges.contains(&key(o, t)))
                .collect();
            let want_delete = st.rng.random_bool(0.5);
            let delete = match (intra.is_empty(), absent.is_empty()) {
                (true, true) => {
                    return Err(GarnetError::BudgetInfeasible {
                        completed: st.moves.len(),
                        budget,
                    })
                }
                (false, true) => true,
                (true, false) => false,
                (false, false) => want_delete,
            };
            if delete {
                let o = intra[st.rng.random_range(0..intra.len())];
                st.delete(t, o);
            } else {
                let o = absent.swap_remove(st.rng.random_range(0..absent.len()));
                st.insert(t, o);
            }
        }
    }
    Ok(())
}

/// Writes the move log as `op,i,j` CSV.
pub fn write_move_log(moves: &[Move], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let write = || -> std::io::Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "op,i,j")?;
        for m in moves {
            let op = match m.op {
                MoveOp::Del => "del",
                MoveOp::Ins => "ins",
            };
            writeln!(out, "{op},{},{}", m.i, m.j)?;
        }
        out.flush()
    };
    write().map_err(|e| GarnetError::io(path, e))
}

/// Stochastic block model with `blocks` equal blocks; labels are block ids.
pub fn generate_sbm(
    n: usize,
    blocks: usize,
    p_in: f64,
    p_out: f64,
    seed: u64,
) -> Result<(SparseGraph, Vec<usize>)> {
    if !(0.0 <= p_out && p_out < p_in && p_in <= 1.0) {
        return Err(GarnetError::InvalidProbability(format!(
            "need 0 <= p_out < p_in <= 1, got p_in = {p_in}, p_out = {p_out}"
        )));
    }
    if blocks == 0 || !n.is_multiple_of(blocks) {
        return Err(GarnetError::InvalidConfig(format!(
            "{n} nodes cannot be split into {blocks} equal blocks"
        )));
    }
    let size = n / blocks;
    let labels: Vec<usize> = (0..n).map(|i| i / size).collect();
    let mut rng = rng_from_seed(seed);
    let mut edges = Vec::new();
    for a in 0..blocks {
        for b in a..blocks {
            let (oa, ob) = (a * size, b * size);
            if a == b {
                let pairs = size * size.saturating_sub(1) / 2;
                for idx in bernoulli_indices(pairs, p_in, &mut rng) {
                    let (i, j) = triangular_pair(idx);
                    edges.push((oa + i, oa + j));
                }
            } else {
                for idx in bernoulli_indices(size * size, p_out, &mut rng) {
                    edges.push((oa + idx / size, ob + idx % size));
                }
            }
        }
    }
    Ok((SparseGraph::from_unweighted(n, edges), labels))
}

/// Indices in `0..count` kept by independent Bernoulli(p) trials, drawn with
/// geometric skips so the cost is proportional to the output.
fn bernoulli_indices(count: usize, p: f64, rng: &mut Rng) -> Vec<usize> {
    if p <= 0.0 || count == 0 {
        return Vec::new();
    }
    if p >= 1.0 {
        return (0..count).collect();
    }
    let log_q = (1.0 - p).ln();
    let mut out = Vec::new();
    let mut idx: usize = 0;
    loop {
        let u: f64 = rng.random::<f64>();
        let skip = ((1.0 - u).ln() / log_q).floor();
        if !skip.is_finite() || skip >= (count - idx) as f64 {
            break;
        }
        idx += skip as usize;
        out.push(idx);
        idx += 1;
        if idx >= count {
            break;
        }
    }
    out
}

/// Gaussian features whose mean is shifted by `shift` along axis
/// `label % dim` for each class.
pub fn class_mean_features(
    labels: &[usize],
    dim: usize,
    shift: f64,
    noise_std: f64,
    seed: u64,
) -> Result<DMatrix<f64>> {
    if dim == 0 {
        return Err(GarnetError::InvalidConfig("feature dimension must be positive".into()));
    }
    let noise = Normal::new(0.0, noise_std)
        .map_err(|e| GarnetError::InvalidConfig(format!("feature noise: {e}")))?;
    let mut rng = rng_from_seed(seed);
    let mut x = DMatrix::zeros(labels.len(), dim);
    for (i, &l) in labels.iter().enumerate() {
        for j in 0..dim {
            x[(i, j)] = noise.sample(&mut rng);
        }
        x[(i, l % dim)] += shift;
    }
    Ok(x)
}

/// Maps a linear index to the pair (i, j), j < i, enumerated row by row.
fn triangular_pair(idx: usize) -> (usize, usize) {
    let mut i = ((((8 * idx + 1) as f64).sqrt() + 1.0) / 2.0).floor() as usize;
    while i * (i - 1) / 2 > idx {
        i -= 1;
    }
    while (i + 1) * i / 2 <= idx {
        i += 1;
    }
    (i, idx - i * (i - 1) / 2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::homophily_score;

    #[test]
    fn zero_ratio_is_identity() {
        let (g, labels) = generate_sbm(40, 2, 0.3, 0.05, 1).unwrap();
        for kind in [AttackKind::DiceGlobal, AttackKind::RandomFlip] {
            let cfg = AttackConfig {
                kind,
                ..AttackConfig::dice(0.0, 3)
            };
            let out = attack(&g, &labels, &cfg).unwrap();
            assert_eq!(out.graph, g);
            assert!(out.moves.is_empty());
        }
    }

    #[test]
    fn complete_bipartite_is_infeasible() {
        let labels = vec![0, 0, 0, 1, 1, 1];
        let g = SparseGraph::from_unweighted(
            6,
            (0..3).flat_map(|i| (3..6).map(move |j| (i, j))),
        );
        let err = attack(&g, &labels, &AttackConfig::dice(0.5, 0)).unwrap_err();
        assert!(matches!(err, GarnetError::BudgetInfeasible { completed: 0, budget: 5 }));
    }

    #[test]
    fn dice_lowers_homophily() {
        let (g, labels) = generate_sbm(200, 2, 0.1, 0.01, 4).unwrap();
        let out = attack(&g, &labels, &AttackConfig::dice(0.2, 9)).unwrap();
        assert!(homophily_score(&out.graph, &labels).unwrap() < homophily_score(&g, &labels).unwrap());
        for m in &out.moves {
            match m.op {
                MoveOp::Del => assert_eq!(labels[m.i], labels[m.j]),
                MoveOp::Ins => assert_ne!(labels[m.i], labels[m.j]),
            }
        }
    }

    #[test]
    fn targeted_moves_touch_targets() {
        let (g, labels) = generate_sbm(60, 3, 0.3, 0.02, 2).unwrap();
        let cfg = AttackConfig {
            kind: AttackKind::TargetedDice,
            targets: vec![0, 25, 59],
            perturbations_per_target: 5,
            ..AttackConfig::dice(0.0, 5)
        };
        let out = attack(&g, &labels, &cfg).unwrap();
        assert_eq!(out.moves.len(), 15);
        for (k, m) in out.moves.iter().enumerate() {
            let t = cfg.targets[k / 5];
            assert!(m.i == t || m.j == t);
        }
        let empty = AttackConfig {
            targets: vec![],
            ..cfg
        };
        assert!(attack(&g, &labels, &empty).is_err());
    }

    #[test]
    fn sbm_rules() {
        let (g, labels) = generate_sbm(90, 3, 0.2, 0.0, 7).unwrap();
        assert_eq!(homophily_score(&g, &labels).unwrap(), 1.0);
        assert_eq!(labels[29], 0);
        assert_eq!(labels[30], 1);
        assert!(generate_sbm(90, 3, 0.1, 0.1, 0).is_err());
        assert!(generate_sbm(90, 4, 0.2, 0.1, 0).is_err());
        let (a, _) = generate_sbm(100, 2, 0.2, 0.05, 11).unwrap();
        let (b, _) = generate_sbm(100, 2, 0.2, 0.05, 11).unwrap();
        assert_eq!(a, b);
        let (full, _) = generate_sbm(6, 2, 1.0, 0.0, 0).unwrap();
        assert_eq!(full.num_edges(), 6);
    }

    #[test]
    fn triangular_indexing() {
        let mut expected = Vec::new();
        for i in 1..20 {
            for j in 0..i {
                expected.push((i, j));
            }
        }
        let got: Vec<_> = (0..expected.len()).map(triangular_pair).collect();
        assert_eq!(got, expected);
    }
}
