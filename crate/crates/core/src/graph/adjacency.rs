use serde::{Deserialize, Serialize};

use super::Graph;
use crate::matrix::SparseMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormalizationMode {
    /// `D̃^{-1/2}(A+I)D̃^{-1/2}` with `d̃ = degree + 1`.
    Renormalized,
    /// Mean over neighbors; an isolated node gets a self-only row.
    RowMean,
    /// Raw adjacency, no self-loops.
    None,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedAdjacency {
    pub mode: NormalizationMode,
    pub matrix: SparseMatrix,
}

pub fn normalize_adjacency(graph: &Graph, mode: NormalizationMode) -> NormalizedAdjacency {
    let n = graph.num_nodes();
    let deg = graph.degrees();
    let rows = (0..n)
        .map(|i| {
            let nbrs = graph.neighbors(i);
            match mode {
                NormalizationMode::Renormalized => {
                    let di = (deg[i] + 1) as f64;
                    let mut row: Vec<(usize, f64)> = nbrs
                        .iter()
                        .map(|&j| (j, 1.0 / (di * (deg[j] + 1) as f64).sqrt()))
                        .collect();
                    row.push((i, 1.0 / di));
                    row
                }
                NormalizationMode::RowMean => {
                    if nbrs.is_empty() {
                        vec![(i, 1.0)]
                    } else {
                        let w = 1.0 / nbrs.len() as f64;
                        nbrs.iter().map(|&j| (j, w)).collect()
                    }
                }
                NormalizationMode::None => nbrs.iter().map(|&j| (j, 1.0)).collect(),
            }
        })
        .collect();
    NormalizedAdjacency {
        mode,
        matrix: SparseMatrix::from_row_entries(n, rows),
    }
}
