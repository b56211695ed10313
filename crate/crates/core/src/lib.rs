//! Graph neural network training with a two-stage curriculum.
//!
//! Stage one trains a GNN conventionally. Stage two keeps training it on
//! sparsified copies of the input graph (edges dropped at random), so head
//! nodes act as synthetic tail nodes; for node classification the supervision
//! in stage two is extended with pseudo-labels predicted by the stage-one
//! model on the full graph.
//!
//! The crate is self-contained: a dense/sparse matrix layer, a small
//! reverse-mode autodiff tape, five encoder variants with three task heads,
//! split protocols for transductive / inductive / cold-start evaluation,
//! full-ranking recall, and a numerical harness for the tail-node
//! generalization bound.

pub mod autodiff;
pub mod data;
pub mod eval;
pub mod graph;
pub mod losses;
pub mod matrix;
pub mod models;
pub mod rng;
pub mod theory;
pub mod training;

pub use graph::{Bipartite, Graph, LabelSet};
pub use matrix::Matrix;
