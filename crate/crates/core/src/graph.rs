//! Undirected weighted graphs in CSR form, the normalized operators built on
//! them, and plain-text graph I/O.

use std::collections::{BTreeMap, VecDeque};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{GarnetError, Result};

/// Rows above this count are processed in parallel by the operators.
const PAR_ROWS: usize = 4096;

/// Symmetric adjacency in compressed sparse row form.
///
/// Both directions of every undirected edge are stored. Column indices are
/// strictly increasing within a row, there are no self-loops, and all weights
/// are strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseGraph {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    weights: Vec<f64>,
}

impl SparseGraph {
    pub fn empty(n: usize) -> Self {
        SparseGraph {
            n,
            row_ptr: vec![0; n + 1],
            col_idx: Vec::new(),
            weights: Vec::new(),
        }
    }

    /// Builds a graph from undirected edge triples. Duplicates (in either
    /// orientation) have their weights summed and self-loops are dropped.
    ///
    /// Panics if an endpoint is out of range or a weight is not strictly
    /// positive; use [`load_edge_list`] for untrusted input.
    pub fn from_edges<I>(n: usize, edges: I) -> Self
    where
        I: IntoIterator<Item = (usize, usize, f64)>,
    {
        let mut merged: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for (u, v, w) in edges {
            assert!(u < n && v < n, "edge ({u}, {v}) out of range for n = {n}");
            assert!(w > 0.0 && w.is_finite(), "edge weight must be positive, got {w}");
            if u == v {
                continue;
            }
            let key = (u.min(v), u.max(v));
            *merged.entry(key).or_insert(0.0) += w;
        }
        Self::from_sorted_unique(n, merged.into_iter().map(|((u, v), w)| (u, v, w)))
    }

    /// Builds from unit-weight undirected pairs.
    pub fn from_unweighted<I>(n: usize, pairs: I) -> Self
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        Self::from_edges(n, pairs.into_iter().map(|(u, v)| (u, v, 1.0)))
    }

    // `edges` must yield (u, v, w) with u < v, no repeats.
    fn from_sorted_unique<I>(n: usize, edges: I) -> Self
    where
        I: IntoIterator<Item = (usize, usize, f64)>,
    {
        let edges: Vec<(usize, usize, f64)> = edges.into_iter().collect();
        let mut counts = vec![0usize; n];
        for &(u, v, _) in &edges {
            counts[u] += 1;
            counts[v] += 1;
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        row_ptr.push(0);
        for c in &counts {
            row_ptr.push(row_ptr.last().unwrap() + c);
        }
        let nnz = *row_ptr.last().unwrap();
        let mut col_idx = vec![0usize; nnz];
        let mut weights = vec![0.0; nnz];
        let mut fill: Vec<usize> = row_ptr[..n].to_vec();
        for &(u, v, w) in &edges {
            col_idx[fill[u]] = v;
            weights[fill[u]] = w;
            fill[u] += 1;
            col_idx[fill[v]] = u;
            weights[fill[v]] = w;
            fill[v] += 1;
        }
        for i in 0..n {
            let (s, e) = (row_ptr[i], row_ptr[i + 1]);
            let mut row: Vec<(usize, f64)> = col_idx[s..e]
                .iter()
                .copied()
                .zip(weights[s..e].iter().copied())
                .collect();
            row.sort_unstable_by_key(|&(j, _)| j);
            for (off, (j, w)) in row.into_iter().enumerate() {
                col_idx[s + off] = j;
                weights[s + off] = w;
            }
        }
        let g = SparseGraph {
            n,
            row_ptr,
            col_idx,
            weights,
        };
        debug_assert!(g.check_invariants().is_ok());
        g
    }

    /// Verifies symmetry, loop-freedom, positivity and sorted rows.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        if self.row_ptr.len() != self.n + 1 {
            return Err("row_ptr length".into());
        }
        for i in 0..self.n {
            let (cols, ws) = self.row(i);
            for (t, (&j, &w)) in cols.iter().zip(ws).enumerate() {
                if j == i {
                    return Err(format!("self-loop at {i}"));
                }
                if !(w > 0.0 && w.is_finite()) {
                    return Err(format!("weight {w} at ({i}, {j})"));
                }
                if t > 0 && cols[t - 1] >= j {
                    return Err(format!("row {i} not strictly increasing"));
                }
                if self.weight(j, i) != Some(w) {
                    return Err(format!("asymmetric entry ({i}, {j})"));
                }
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of undirected edges.
    pub fn num_edges(&self) -> usize {
        self.col_idx.len() / 2
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (s, e) = (self.row_ptr[i], self.row_ptr[i + 1]);
        (&self.col_idx[s..e], &self.weights[s..e])
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (cols, ws) = self.row(i);
        cols.iter().copied().zip(ws.iter().copied())
    }

    pub fn out_degree(&self, i: usize) -> usize {
        self.row_ptr[i + 1] - self.row_ptr[i]
    }

    /// Weighted degree d_i.
    pub fn degree(&self, i: usize) -> f64 {
        self.row(i).1.iter().sum()
    }

    pub fn weight(&self, i: usize, j: usize) -> Option<f64> {
        let (cols, ws) = self.row(i);
        cols.binary_search(&j).ok().map(|t| ws[t])
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        i < self.n && j < self.n && self.weight(i, j).is_some()
    }

    /// Undirected edges as (i, j, w) with i < j, in (i, j) order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |i| {
            self.neighbors(i)
                .filter(move |&(j, _)| j > i)
                .map(move |(j, w)| (i, j, w))
        })
    }

    /// Keeps the undirected edges for which `keep(i, j, w)` holds (i < j).
    pub fn retain_edges<F>(&self, mut keep: F) -> SparseGraph
    where
        F: FnMut(usize, usize, f64) -> bool,
    {
        let kept: Vec<_> = self.edges().filter(|&(i, j, w)| keep(i, j, w)).collect();
        Self::from_sorted_unique(self.n, kept)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, w) in self.neighbors(i) {
                a[(i, j)] = w;
            }
        }
        a
    }

    /// Component id per node plus the number of components.
    pub fn connected_components(&self) -> (Vec<usize>, usize) {
        let mut comp = vec![usize::MAX; self.n];
        let mut count = 0;
        let mut queue = VecDeque::new();
        for s in 0..self.n {
            if comp[s] != usize::MAX {
                continue;
            }
            comp[s] = count;
            queue.push_back(s);
            while let Some(u) = queue.pop_front() {
                for (v, _) in self.neighbors(u) {
                    if comp[v] == usize::MAX {
                        comp[v] = count;
                        queue.push_back(v);
                    }
                }
            }
            count += 1;
        }
        (comp, count)
    }

    /// Nodes reachable from `source` in at most `hops` steps, excluding `source`.
    pub fn k_hop_neighborhood(&self, source: usize, hops: usize) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.n];
        dist[source] = 0;
        let mut queue = VecDeque::from([source]);
        let mut out = Vec::new();
        while let Some(u) = queue.pop_front() {
            if dist[u] == hops {
                continue;
            }
            for (v, _) in self.neighbors(u) {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    out.push(v);
                    queue.push_back(v);
                }
            }
        }
        out.sort_unstable();
        out
    }
}

/// A symmetric linear operator on R^n, applied matrix-free.
pub trait SymmetricOperator: Sync {
    fn dim(&self) -> usize;

    fn apply(&self, x: &[f64], y: &mut [f64]);

    /// Eigenpairs known in closed form (for instance the null space spanned by
    /// connected components). Eigensolvers deflate these and solve only on
    /// their orthogonal complement. Vectors must be orthonormal.
    fn known_eigenpairs(&self) -> Vec<(f64, Vec<f64>)> {
        Vec::new()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorKind {
    NormalizedAdjacency,
    NormalizedLaplacian,
}

/// `D^{-1/2} A D^{-1/2}` or `I - D^{-1/2} A D^{-1/2}` without forming either.
///
/// Isolated nodes get `d^{-1/2} = 0`, so they have zero rows in the
/// normalized adjacency and act as the identity under the Laplacian.
#[derive(Debug, Clone)]
pub struct NormalizedOperator<'g> {
    graph: &'g SparseGraph,
    inv_sqrt_deg: Vec<f64>,
    kind: OperatorKind,
}

pub fn normalized_operator(g: &SparseGraph, kind: OperatorKind) -> NormalizedOperator<'_> {
    let inv_sqrt_deg = (0..g.n())
        .map(|i| {
            let d = g.degree(i);
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    NormalizedOperator {
        graph: g,
        inv_sqrt_deg,
        kind,
    }
}

impl<'g> NormalizedOperator<'g> {
    pub fn kind(&self) -> OperatorKind {
        self.kind
    }

    pub fn graph(&self) -> &'g SparseGraph {
        self.graph
    }

    pub fn inv_sqrt_deg(&self) -> &[f64] {
        &self.inv_sqrt_deg
    }

    fn row_value(&self, i: usize, x: &[f64]) -> f64 {
        let s = &self.inv_sqrt_deg;
        let mut acc = 0.0;
        for (j, w) in self.graph.neighbors(i) {
            acc += w * s[j] * x[j];
        }
        let adj = s[i] * acc;
        match self.kind {
            OperatorKind::NormalizedAdjacency => adj,
            OperatorKind::NormalizedLaplacian => x[i] - adj,
        }
    }

    /// Dense copy, for oracles and small problems.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.graph.n();
        let s = &self.inv_sqrt_deg;
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for (j, w) in self.graph.neighbors(i) {
                m[(i, j)] = s[i] * w * s[j];
            }
        }
        if self.kind == OperatorKind::NormalizedLaplacian {
            m = DMatrix::identity(n, n) - m;
        }
        m
    }
}

impl SymmetricOperator for NormalizedOperator<'_> {
    fn dim(&self) -> usize {
        self.graph.n()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        if y.len() >= PAR_ROWS {
            y.par_iter_mut()
                .enumerate()
                .for_each(|(i, yi)| *yi = self.row_value(i, x));
        } else {
            for (i, yi) in y.iter_mut().enumerate() {
                *yi = self.row_value(i, x);
            }
        }
    }

    fn known_eigenpairs(&self) -> Vec<(f64, Vec<f64>)> {
        // Each component with an edge contributes D^{1/2} 1_C to the null space of
        // L_norm (eigenvalue 1 of A_norm); isolated nodes are e_i with L_norm
        // eigenvalue 1 (A_norm eigenvalue 0).
        let g = self.graph;
        let (comp, count) = g.connected_components();
        let mut vecs = vec![vec![0.0; g.n()]; count];
        let mut isolated = vec![true; count];
        for i in 0..g.n() {
            let d = g.degree(i);
            if d > 0.0 {
                isolated[comp[i]] = false;
            }
            vecs[comp[i]][i] = if d > 0.0 { d.sqrt() } else { 1.0 };
        }
        let (on_zero, on_one) = match self.kind {
            OperatorKind::NormalizedLaplacian => (0.0, 1.0),
            OperatorKind::NormalizedAdjacency => (1.0, 0.0),
        };
        vecs.into_iter()
            .zip(isolated)
            .map(|(mut v, iso)| {
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.iter_mut().for_each(|x| *x /= norm);
                (if iso { on_one } else { on_zero }, v)
            })
            .collect()
    }
}

/// Combinatorial Laplacian `L = D - A`, applied matrix-free.
#[derive(Debug, Clone)]
pub struct LaplacianOperator<'g> {
    graph: &'g SparseGraph,
    degree: Vec<f64>,
}

impl<'g> LaplacianOperator<'g> {
    pub fn new(graph: &'g SparseGraph) -> Self {
        let degree = (0..graph.n()).map(|i| graph.degree(i)).collect();
        LaplacianOperator { graph, degree }
    }

    fn row_value(&self, i: usize, x: &[f64]) -> f64 {
        let mut acc = self.degree[i] * x[i];
        for (j, w) in self.graph.neighbors(i) {
            acc -= w * x[j];
        }
        acc
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = -self.graph.to_dense();
        for i in 0..self.graph.n() {
            m[(i, i)] = self.degree[i];
        }
        m
    }
}

impl SymmetricOperator for LaplacianOperator<'_> {
    fn dim(&self) -> usize {
        self.graph.n()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        if y.len() >= PAR_ROWS {
            y.par_iter_mut()
                .enumerate()
                .for_each(|(i, yi)| *yi = self.row_value(i, x));
        } else {
            for (i, yi) in y.iter_mut().enumerate() {
                *yi = self.row_value(i, x);
            }
        }
    }

    fn known_eigenpairs(&self) -> Vec<(f64, Vec<f64>)> {
        let (comp, count) = self.graph.connected_components();
        let mut sizes = vec![0usize; count];
        for &c in &comp {
            sizes[c] += 1;
        }
        (0..count)
            .map(|c| {
                let val = 1.0 / (sizes[c] as f64).sqrt();
                let v = comp.iter().map(|&ci| if ci == c { val } else { 0.0 }).collect();
                (0.0, v)
            })
            .collect()
    }
}

/// Fraction of undirected edges whose endpoints carry the same label.
pub fn homophily_score(g: &SparseGraph, labels: &[usize]) -> Result<f64> {
    if labels.len() != g.n() {
        return Err(GarnetError::DimensionMismatch {
            expected: g.n(),
            got: labels.len(),
        });
    }
    let total = g.num_edges();
    if total == 0 {
        return Err(GarnetError::EmptyGraph);
    }
    let same = g.edges().filter(|&(i, j, _)| labels[i] == labels[j]).count();
    Ok(same as f64 / total as f64)
}

/// Parses an edge list: one `u v` or `u v w` per line, `#` comments allowed.
pub fn parse_edge_list<R: BufRead>(reader: R, n_hint: Option<usize>) -> Result<SparseGraph> {
    let mut triples = Vec::new();
    let mut max_id: Option<usize> = None;
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| GarnetError::MalformedLine {
            line: lineno,
            reason: e.to_string(),
        })?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 2 && fields.len() != 3 {
            return Err(GarnetError::MalformedLine {
                line: lineno,
                reason: format!("expected 2 or 3 fields, found {}", fields.len()),
            });
        }
        let parse_id = |s: &str| {
            s.parse::<usize>().map_err(|_| GarnetError::MalformedLine {
                line: lineno,
                reason: format!("invalid node id `{s}`"),
            })
        };
        let u = parse_id(fields[0])?;
        let v = parse_id(fields[1])?;
        let w = match fields.get(2) {
            Some(s) => s.parse::<f64>().map_err(|_| GarnetError::MalformedLine {
                line: lineno,
                reason: format!("invalid weight `{s}`"),
            })?,
            None => 1.0,
        };
        if !(w > 0.0 && w.is_finite()) {
            return Err(GarnetError::NegativeWeight {
                line: lineno,
                weight: w,
            });
        }
        if let Some(n) = n_hint {
            for id in [u, v] {
                if id >= n {
                    return Err(GarnetError::IdOutOfRange { id, n });
                }
            }
        }
        max_id = Some(max_id.map_or(u.max(v), |m| m.max(u).max(v)));
        triples.push((u, v, w));
    }
    let n = n_hint
        .unwrap_or(0)
        .max(max_id.map_or(0, |m| m + 1));
    Ok(SparseGraph::from_edges(n, triples))
}

pub fn load_edge_list(path: impl AsRef<Path>, n_hint: Option<usize>) -> Result<SparseGraph> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| GarnetError::io(path, e))?;
    parse_edge_list(BufReader::new(file), n_hint)
}

/// Writes each undirected edge once as `i j w`, sorted by (i, j).
pub fn write_edge_list_to<W: Write>(g: &SparseGraph, mut out: W) -> std::io::Result<()> {
    for (i, j, w) in g.edges() {
        writeln!(out, "{i} {j} {w}")?;
    }
    out.flush()
}

pub fn write_edge_list(g: &SparseGraph, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| GarnetError::io(path, e))?;
    write_edge_list_to(g, BufWriter::new(file)).map_err(|e| GarnetError::io(path, e))
}

/// One integer label per line; line i is the label of node i.
pub fn load_labels(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| GarnetError::io(path, e))?;
    let mut labels = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| GarnetError::io(path, e))?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        labels.push(t.parse::<usize>().map_err(|_| GarnetError::MalformedLine {
            line: idx + 1,
            reason: format!("invalid label `{t}`"),
        })?);
    }
    Ok(labels)
}

pub fn write_labels(labels: &[usize], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let write = || -> std::io::Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        for l in labels {
            writeln!(out, "{l}")?;
        }
        out.flush()
    };
    write().map_err(|e| GarnetError::io(path, e))
}
