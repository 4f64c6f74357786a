//! Hierarchical navigable small world index over embedding rows.
//!
//! Built by sequential insertion so the graph depends only on the seed;
//! queries are read-only and may run in parallel.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use rand::Rng as _;

use crate::seed::rng_from_seed;
use crate::spectral::{sq_dist, EmbeddingMatrix};

/// (distance, id) with a total order; ties go to the smaller id.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Candidate {
    pub dist: f64,
    pub id: u32,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then(self.id.cmp(&other.id))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Epoch-stamped visited marks, reusable across searches.
pub(crate) struct Visited {
    marks: Vec<u32>,
    epoch: u32,
}

impl Visited {
    pub fn new(n: usize) -> Self {
        Visited {
            marks: vec![0; n],
            epoch: 0,
        }
    }

    fn reset(&mut self) {
        self.epoch = self.epoch.wrapping_add(1);
        if self.epoch == 0 {
            self.marks.iter_mut().for_each(|m| *m = 0);
            self.epoch = 1;
        }
    }

    /// Marks `id`; returns false if it was already marked.
    fn insert(&mut self, id: u32) -> bool {
        let slot = &mut self.marks[id as usize];
        if *slot == self.epoch {
            false
        } else {
            *slot = self.epoch;
            true
        }
    }
}

pub(crate) struct Hnsw<'a> {
    data: &'a EmbeddingMatrix,
    /// links[node][layer]
    links: Vec<Vec<Vec<u32>>>,
    entry: u32,
    top_layer: usize,
    m: usize,
    m0: usize,
}

impl<'a> Hnsw<'a> {
    pub fn build(data: &'a EmbeddingMatrix, m: usize, ef_construction: usize, seed: u64) -> Self {
        let n = data.n();
        let mut rng = rng_from_seed(seed);
        let ml = 1.0 / (m as f64).ln();
        let mut index = Hnsw {
            data,
            links: Vec::with_capacity(n),
            entry: 0,
            top_layer: 0,
            m,
            m0: 2 * m,
        };
        let mut visited = Visited::new(n);
        for id in 0..n {
            let u: f64 = 1.0 - rng.random::<f64>();
            let level = ((-u.ln()) * ml).floor() as usize;
            index.insert(id as u32, level, ef_construction, &mut visited);
        }
        index
    }

    fn dist(&self, a: u32, b: u32) -> f64 {
        sq_dist(self.data.row(a as usize), self.data.row(b as usize))
    }

    fn insert(&mut self, id: u32, level: usize, ef: usize, visited: &mut Visited) {
        self.links.push(vec![Vec::new(); level + 1]);
        if id == 0 {
            self.entry = 0;
            self.top_layer = level;
            return;
        }
        let query = self.data.row(id as usize);
        let mut ep = Candidate {
            dist: sq_dist(query, self.data.row(self.entry as usize)),
            id: self.entry,
        };
        for layer in (level + 1..=self.top_layer).rev() {
            ep = self.greedy(query, ep, layer);
        }
        let mut entries = vec![ep];
        for layer in (0..=level.min(self.top_layer)).rev() {
            let found = self.search_layer(query, &entries, ef, layer, visited);
            let cap = if layer == 0 { self.m0 } else { self.m };
            let chosen = self.select_neighbors(&found, self.m);
            self.links[id as usize][layer] = chosen.iter().map(|c| c.id).collect();
            for c in &chosen {
                let other = c.id as usize;
                self.links[other][layer].push(id);
                if self.links[other][layer].len() > cap {
                    let mut cands: Vec<Candidate> = self.links[other][layer]
                        .iter()
                        .map(|&x| Candidate {
                            dist: self.dist(other as u32, x),
                            id: x,
                        })
                        .collect();
                    cands.sort_unstable();
                    let kept = self.select_neighbors(&cands, cap);
                    self.links[other][layer] = kept.iter().map(|c| c.id).collect();
                }
            }
            entries = found;
        }
        if level > self.top_layer {
            self.top_layer = level;
            self.entry = id;
        }
    }

    fn greedy(&self, query: &[f64], mut ep: Candidate, layer: usize) -> Candidate {
        loop {
            let mut improved = false;
            for &nb in &self.links[ep.id as usize][layer] {
                let c = Candidate {
                    dist: sq_dist(query, self.data.row(nb as usize)),
                    id: nb,
                };
                if c < ep {
                    ep = c;
                    improved = true;
                }
            }
            if !improved {
                return ep;
            }
        }
    }

    /// Best-first search on one layer; returns up to `ef` candidates, nearest first.
    fn search_layer(
        &self,
        query: &[f64],
        entries: &[Candidate],
        ef: usize,
        layer: usize,
        visited: &mut Visited,
    ) -> Vec<Candidate> {
        visited.reset();
        let mut frontier: BinaryHeap<Reverse<Candidate>> = BinaryHeap::new();
        let mut best: BinaryHeap<Candidate> = BinaryHeap::new();
        for &e in entries {
            if visited.insert(e.id) {
                frontier.push(Reverse(e));
                best.push(e);
            }
        }
        while best.len() > ef {
            best.pop();
        }
        while let Some(Reverse(cur)) = frontier.pop() {
            if let Some(worst) = best.peek() {
                if best.len() >= ef && cur > *worst {
                    break;
                }
            }
            for &nb in &self.links[cur.id as usize][layer] {
                if !visited.insert(nb) {
                    continue;
                }
                let c = Candidate {
                    dist: sq_dist(query, self.data.row(nb as usize)),
                    id: nb,
                };
                if best.len() < ef || c < *best.peek().unwrap() {
                    frontier.push(Reverse(c));
                    best.push(c);
                    if best.len() > ef {
                        best.pop();
                    }
                }
            }
        }
        best.into_sorted_vec()
    }

    /// Diversity heuristic: keep a candidate only if it is closer to the
    /// query than to every neighbor already kept, then top up with the
    /// nearest discarded ones.
    fn select_neighbors(&self, sorted: &[Candidate], m: usize) -> Vec<Candidate> {
        let mut kept: Vec<Candidate> = Vec::with_capacity(m);
        let mut skipped = Vec::new();
        for &c in sorted {
            if kept.len() >= m {
                break;
            }
            if kept.iter().all(|k| self.dist(c.id, k.id) > c.dist) {
                kept.push(c);
            } else {
                skipped.push(c);
            }
        }
        for c in skipped {
            if kept.len() >= m {
                break;
            }
            kept.push(c);
        }
        kept
    }

    /// Up to `k` nearest stored rows to row `id`, excluding `id` itself.
    pub fn neighbors_of(&self, id: usize, k: usize, ef: usize, visited: &mut Visited) -> Vec<usize> {
        let query = self.data.row(id);
        let mut ep = Candidate {
            dist: sq_dist(query, self.data.row(self.entry as usize)),
            id: self.entry,
        };
        for layer in (1..=self.top_layer).rev() {
            ep = self.greedy(query, ep, layer);
        }
        let found = self.search_layer(query, &[ep], ef.max(k + 1), 0, visited);
        found
            .into_iter()
            .filter(|c| c.id as usize != id)
            .take(k)
            .map(|c| c.id as usize)
            .collect()
    }
}
