use crate::autodiff::Segments;
use crate::graph::{normalize_adjacency, Graph, NormalizationMode};
use crate::matrix::SparseMatrix;

use super::EncoderVariant;

/// Graph-dependent constants an encoder reads during a forward pass. Built
/// once per input graph and borrowed by the tape.
#[derive(Clone, Debug)]
pub struct GraphContext {
    variant: EncoderVariant,
    num_nodes: usize,
    adjacency: Option<SparseMatrix>,
    segments: Option<Segments>,
    owners: Vec<usize>,
}

impl GraphContext {
    pub fn new(graph: &Graph, variant: EncoderVariant) -> Self {
        let n = graph.num_nodes();
        let mut ctx = Self {
            variant,
            num_nodes: n,
            adjacency: None,
            segments: None,
            owners: Vec::new(),
        };
        match variant {
            EncoderVariant::Gcn => {
                ctx.adjacency = Some(normalize_adjacency(graph, NormalizationMode::Renormalized).matrix)
            }
            EncoderVariant::SageMean => {
                ctx.adjacency = Some(normalize_adjacency(graph, NormalizationMode::RowMean).matrix)
            }
            // Max over an empty neighborhood falls back to the node itself.
            EncoderVariant::SageMax => {
                let groups: Vec<Vec<usize>> = (0..n)
                    .map(|i| match graph.neighbors(i) {
                        [] => vec![i],
                        nb => nb.to_vec(),
                    })
                    .collect();
                ctx.segments = Some(Segments::from_groups(&groups));
            }
            EncoderVariant::SageSum => {
                let groups: Vec<Vec<usize>> = (0..n).map(|i| graph.neighbors(i).to_vec()).collect();
                ctx.segments = Some(Segments::from_groups(&groups));
            }
            EncoderVariant::Gat => {
                let groups: Vec<Vec<usize>> = (0..n)
                    .map(|i| {
                        let mut g = graph.neighbors(i).to_vec();
                        g.push(i);
                        g
                    })
                    .collect();
                let seg = Segments::from_groups(&groups);
                ctx.owners = seg.owners();
                ctx.segments = Some(seg);
            }
        }
        ctx
    }

    pub fn variant(&self) -> EncoderVariant {
        self.variant
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn adjacency(&self) -> Option<&SparseMatrix> {
        self.adjacency.as_ref()
    }

    pub fn segments(&self) -> Option<&Segments> {
        self.segments.as_ref()
    }

    /// Segment id of each segment position (`gat` only).
    pub fn owners(&self) -> &[usize] {
        &self.owners
    }
}
