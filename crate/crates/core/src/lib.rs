//! Graph purification by reduced-rank topology learning.
//!
//! The pipeline embeds a (possibly adversarially perturbed) graph with the
//! weighted eigenvectors of its normalized Laplacian, builds a kNN base graph
//! over the embedding rows, and prunes base-graph edges whose endpoints the
//! embedding sees as far apart. A small GCN and a label-aware attack
//! simulator are included to measure the effect end to end.

pub mod attack;
pub mod error;
pub mod gcn;
pub mod graph;
pub mod seed;
pub mod knn;
pub mod pipeline;
pub mod refine;
pub mod spectral;

pub use error::{ErrorFamily, GarnetError, Result};
pub use graph::{SparseGraph, SymmetricOperator};
