mod common;

use common::*;
use garnet_core::knn::{build_knn_graph, knn_lists, knn_recall, KnnConfig};
use garnet_core::spectral::{EmbeddingMatrix, EmbeddingSource};

fn points(n: usize, dim: usize, seed: u64) -> EmbeddingMatrix {
    EmbeddingMatrix::from_rows(n, dim, random_points(n, dim, seed), EmbeddingSource::AdversarialV)
}

#[test]
fn exact_lists_match_brute_force() {
    for (case, (n, dim, k)) in [(50, 2, 3), (200, 5, 10), (400, 16, 25)].into_iter().enumerate() {
        let pts = random_points(n, dim, case as u64);
        let emb = EmbeddingMatrix::from_rows(n, dim, pts.clone(), EmbeddingSource::AdversarialV);
        assert_eq!(knn_lists(&emb, &KnnConfig::exact(k)).unwrap(), brute_force_knn(&pts, dim, k));
    }
}

#[test]
fn lists_have_k_distinct_foreign_entries() {
    let emb = points(300, 6, 1);
    for cfg in [KnnConfig::exact(12), KnnConfig::approximate(12, 24, 1)] {
        let lists = knn_lists(&emb, &cfg).unwrap();
        for (i, list) in lists.iter().enumerate() {
            assert_eq!(list.len(), 12);
            assert!(!list.contains(&i));
            let mut sorted = list.clone();
            sorted.sort_unstable();
            sorted.dedup();
            assert_eq!(sorted.len(), 12);
        }
    }
}

#[test]
fn graph_is_symmetric_union_of_lists() {
    let emb = points(250, 4, 2);
    let cfg = KnnConfig::exact(8);
    let lists = knn_lists(&emb, &cfg).unwrap();
    let g = build_knn_graph(&emb, &cfg).unwrap();
    g.check_invariants().unwrap();
    for (i, list) in lists.iter().enumerate() {
        assert!(g.out_degree(i) >= 8);
        for &j in list {
            assert!(g.has_edge(i, j) && g.has_edge(j, i));
        }
    }
    for (i, j, w) in g.edges() {
        assert_eq!(w, 1.0);
        assert!(lists[i].contains(&j) || lists[j].contains(&i));
    }
}

#[test]
fn approximate_search_is_accurate_and_deterministic() {
    let emb = points(5000, 10, 3);
    let exact = build_knn_graph(&emb, &KnnConfig::exact(20)).unwrap();
    let a = build_knn_graph(&emb, &KnnConfig::approximate(20, 40, 7)).unwrap();
    let b = build_knn_graph(&emb, &KnnConfig::approximate(20, 40, 7)).unwrap();
    assert_eq!(a, b);
    let recall = knn_recall(&a, &exact).unwrap();
    assert!(recall >= 0.95, "recall {recall}");
}
