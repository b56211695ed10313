//! Immutable undirected graphs in CSR form.
//!
//! A [`Graph`] is built once from an edge list, canonicalized (each undirected
//! edge stored as `(min, max)`, deduplicated and sorted) and never mutated;
//! operations such as [`Graph::drop_edges`] return new graphs.

mod adjacency;
mod generate;
pub mod io;

pub use adjacency::{normalize_adjacency, NormalizationMode, NormalizedAdjacency};
pub use generate::{
    generate_bipartite, generate_bipartite_with_latents, generate_scale_free, BipartiteConfig, PlantedLatents,
    ScaleFreeConfig,
};

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::matrix::Matrix;
use crate::rng::{rng_from, stream};

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("edge ({u}, {v}) has an endpoint outside 0..{num_nodes}")]
    EndpointOutOfRange { u: usize, v: usize, num_nodes: usize },
    #[error("self-loop on node {0}")]
    SelfLoop(usize),
    #[error("edge ({u}, {v}) does not cross the user/item partition")]
    BipartiteViolation { u: usize, v: usize },
    #[error("partition sizes {num_users} + {num_items} do not sum to {num_nodes} nodes")]
    PartitionSize {
        num_users: usize,
        num_items: usize,
        num_nodes: usize,
    },
    #[error("feature matrix has {rows} rows for {num_nodes} nodes")]
    FeatureRows { rows: usize, num_nodes: usize },
    #[error("node {node} out of range for {num_nodes} nodes")]
    NodeOutOfRange { node: usize, num_nodes: usize },
    #[error("fraction {0} outside [0, 1]")]
    InvalidFraction(f64),
    #[error("invalid generator parameters: {0}")]
    InvalidParameters(String),
}

/// User/item partition: users are `0..num_users`, items the rest.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bipartite {
    pub num_users: usize,
    pub num_items: usize,
}

impl Bipartite {
    pub fn is_user(&self, node: usize) -> bool {
        node < self.num_users
    }

    pub fn items(&self) -> std::ops::Range<usize> {
        self.num_users..self.num_users + self.num_items
    }
}

/// Ground-truth class labels, one per node.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet {
    pub classes: Vec<usize>,
    pub num_classes: usize,
}

impl LabelSet {
    pub fn new(classes: Vec<usize>, num_classes: usize) -> Self {
        debug_assert!(classes.iter().all(|&c| c < num_classes));
        Self { classes, num_classes }
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn permuted(&self, order: &[usize]) -> LabelSet {
        LabelSet {
            classes: order.iter().map(|&o| self.classes[o]).collect(),
            num_classes: self.num_classes,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    offsets: Vec<usize>,
    targets: Vec<usize>,
    features: Option<Matrix>,
    bipartite: Option<Bipartite>,
}

/// `⌊fraction · count⌋`, tolerant of representation error such as `0.3 * 10`.
pub(crate) fn floor_fraction(fraction: f64, count: usize) -> usize {
    ((fraction * count as f64) + 1e-9).floor().min(count as f64) as usize
}

/// `⌈fraction · count⌉`, tolerant of representation error.
pub(crate) fn ceil_fraction(fraction: f64, count: usize) -> usize {
    ((fraction * count as f64) - 1e-9).ceil().clamp(0.0, count as f64) as usize
}

impl Graph {
    /// Canonicalizes `edge_list` and builds the CSR adjacency.
    pub fn build(
        edge_list: &[(usize, usize)],
        num_nodes: usize,
        features: Option<Matrix>,
        bipartite: Option<Bipartite>,
    ) -> Result<Graph, GraphError> {
        if let Some(p) = bipartite {
            if p.num_users + p.num_items != num_nodes {
                return Err(GraphError::PartitionSize {
                    num_users: p.num_users,
                    num_items: p.num_items,
                    num_nodes,
                });
            }
        }
        if let Some(f) = &features {
            if f.rows() != num_nodes {
                return Err(GraphError::FeatureRows {
                    rows: f.rows(),
                    num_nodes,
                });
            }
        }
        let mut edges = Vec::with_capacity(edge_list.len());
        for &(u, v) in edge_list {
            if u >= num_nodes || v >= num_nodes {
                return Err(GraphError::EndpointOutOfRange { u, v, num_nodes });
            }
            if u == v {
                return Err(GraphError::SelfLoop(u));
            }
            if let Some(p) = bipartite {
                if p.is_user(u) == p.is_user(v) {
                    return Err(GraphError::BipartiteViolation { u, v });
                }
            }
            edges.push((u.min(v), u.max(v)));
        }
        edges.sort_unstable();
        edges.dedup();
        Ok(Self::from_canonical(edges, num_nodes, features, bipartite))
    }

    /// `edges` must already be canonical, sorted and deduplicated.
    fn from_canonical(
        edges: Vec<(usize, usize)>,
        num_nodes: usize,
        features: Option<Matrix>,
        bipartite: Option<Bipartite>,
    ) -> Graph {
        let mut counts = vec![0usize; num_nodes + 1];
        for &(u, v) in &edges {
            counts[u + 1] += 1;
            counts[v + 1] += 1;
        }
        for i in 0..num_nodes {
            counts[i + 1] += counts[i];
        }
        let offsets = counts;
        let mut cursor = offsets.clone();
        let mut targets = vec![0usize; 2 * edges.len()];
        // Sorted (u, v) order yields sorted neighbor lists: every node receives
        // its smaller neighbors (as v) before its larger ones (as u).
        for &(u, v) in &edges {
            targets[cursor[u]] = v;
            cursor[u] += 1;
            targets[cursor[v]] = u;
            cursor[v] += 1;
        }
        Graph {
            num_nodes,
            edges,
            offsets,
            targets,
            features,
            bipartite,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Canonical undirected edges `(u, v)` with `u < v`, sorted.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn csr_offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn csr_targets(&self) -> &[usize] {
        &self.targets
    }

    pub fn features(&self) -> Option<&Matrix> {
        self.features.as_ref()
    }

    pub fn bipartite(&self) -> Option<Bipartite> {
        self.bipartite
    }

    /// Sorted neighbors of `node`. Panics if `node` is out of range.
    #[inline]
    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.targets[self.offsets[node]..self.offsets[node + 1]]
    }

    pub fn degree(&self, node: usize) -> Result<usize, GraphError> {
        if node >= self.num_nodes {
            return Err(GraphError::NodeOutOfRange {
                node,
                num_nodes: self.num_nodes,
            });
        }
        Ok(self.offsets[node + 1] - self.offsets[node])
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.offsets.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        u < self.num_nodes && self.neighbors(u).binary_search(&v).is_ok()
    }

    /// Same node set, features and partition; only `edges` kept.
    pub fn with_edges(&self, edge_list: &[(usize, usize)]) -> Result<Graph, GraphError> {
        Graph::build(edge_list, self.num_nodes, self.features.clone(), self.bipartite)
    }

    pub fn with_features(mut self, features: Option<Matrix>) -> Result<Graph, GraphError> {
        if let Some(f) = &features {
            if f.rows() != self.num_nodes {
                return Err(GraphError::FeatureRows {
                    rows: f.rows(),
                    num_nodes: self.num_nodes,
                });
            }
        }
        self.features = features;
        Ok(self)
    }

    /// Removes exactly `⌊alpha · |E|⌋` undirected edges chosen uniformly
    /// without replacement. Deterministic in `(self, alpha, seed)`.
    pub fn drop_edges(&self, alpha: f64, seed: u64) -> Result<Graph, GraphError> {
        if !(0.0..=1.0).contains(&alpha) || alpha.is_nan() {
            return Err(GraphError::InvalidFraction(alpha));
        }
        let m = self.edges.len();
        let n_drop = floor_fraction(alpha, m);
        let mut rng = rng_from(seed, &[stream::DROP_EDGE]);
        let mut dropped = vec![false; m];
        for i in sample(&mut rng, m, n_drop).into_iter() {
            dropped[i] = true;
        }
        let kept = self
            .edges
            .iter()
            .zip(&dropped)
            .filter(|(_, &d)| !d)
            .map(|(&e, _)| e)
            .collect();
        Ok(Graph::from_canonical(
            kept,
            self.num_nodes,
            self.features.clone(),
            self.bipartite,
        ))
    }

    /// Hex SHA-256 over node count, partition and canonical edges. Features
    /// are not included.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.num_nodes as u64).to_le_bytes());
        if let Some(p) = self.bipartite {
            h.update((p.num_users as u64).to_le_bytes());
            h.update((p.num_items as u64).to_le_bytes());
        }
        for &(u, v) in &self.edges {
            h.update((u as u64).to_le_bytes());
            h.update((v as u64).to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Free-function form of [`Graph::build`].
pub fn build_graph(
    edge_list: &[(usize, usize)],
    num_nodes: usize,
    features: Option<Matrix>,
    bipartite: Option<Bipartite>,
) -> Result<Graph, GraphError> {
    Graph::build(edge_list, num_nodes, features, bipartite)
}

pub fn drop_edges(graph: &Graph, alpha: f64, seed: u64) -> Result<Graph, GraphError> {
    graph.drop_edges(alpha, seed)
}
