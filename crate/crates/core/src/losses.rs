//! Supervision sets, task losses and negative sampling.

use std::ops::Range;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{softplus, AutodiffError, Tape, Var};
use crate::graph::Graph;
use crate::matrix::Matrix;
use crate::rng::{rng_from, stream};

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("class {class} of node {node} is out of range for {num_classes} classes")]
    ClassOutOfRange {
        node: usize,
        class: usize,
        num_classes: usize,
    },
    #[error("node {node} has no prediction row ({rows} rows)")]
    MissingRow { node: usize, rows: usize },
    #[error("node {0} is supervised twice")]
    Duplicate(usize),
    #[error("score vectors differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("negative regularization weight {0}")]
    NegativeWeight(f64),
    #[error("source {0} is linked to every candidate")]
    Saturated(usize),
    #[error("empty supervision")]
    Empty,
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    NodeClassification,
    LinkPrediction,
    Recsys,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledNode {
    pub node: usize,
    pub class: usize,
    pub is_pseudo: bool,
}

/// Training targets for one task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SupervisionSet {
    Classification {
        num_classes: usize,
        labels: Vec<LabeledNode>,
    },
    /// Positive `(source, target)` pairs sorted by source, then target.
    Ranking { positives: Vec<(usize, usize)> },
}

impl SupervisionSet {
    /// True labels for `nodes`, taken from `classes[node]`.
    pub fn classification(num_classes: usize, nodes: &[usize], classes: &[usize]) -> Result<Self, LossError> {
        let mut sup = SupervisionSet::Classification {
            num_classes,
            labels: Vec::with_capacity(nodes.len()),
        };
        for &n in nodes {
            sup.push_label(n, classes[n], false)?;
        }
        Ok(sup)
    }

    pub fn ranking(mut positives: Vec<(usize, usize)>) -> Self {
        positives.sort_unstable();
        positives.dedup();
        SupervisionSet::Ranking { positives }
    }

    pub fn push_label(&mut self, node: usize, class: usize, is_pseudo: bool) -> Result<(), LossError> {
        let SupervisionSet::Classification { num_classes, labels } = self else {
            panic!("push_label on a ranking supervision set");
        };
        if class >= *num_classes {
            return Err(LossError::ClassOutOfRange {
                node,
                class,
                num_classes: *num_classes,
            });
        }
        if labels.iter().any(|l| l.node == node) {
            return Err(LossError::Duplicate(node));
        }
        labels.push(LabeledNode { node, class, is_pseudo });
        Ok(())
    }

    pub fn len(&self) -> usize {
        match self {
            SupervisionSet::Classification { labels, .. } => labels.len(),
            SupervisionSet::Ranking { positives } => positives.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn labels(&self) -> &[LabeledNode] {
        match self {
            SupervisionSet::Classification { labels, .. } => labels,
            SupervisionSet::Ranking { .. } => &[],
        }
    }

    pub fn positives(&self) -> &[(usize, usize)] {
        match self {
            SupervisionSet::Ranking { positives } => positives,
            SupervisionSet::Classification { .. } => &[],
        }
    }

    pub fn num_pseudo(&self) -> usize {
        self.labels().iter().filter(|l| l.is_pseudo).count()
    }
}

fn label_entries(rows: usize, cols: usize, labels: &[LabeledNode]) -> Result<Vec<(usize, usize)>, LossError> {
    if labels.is_empty() {
        return Err(LossError::Empty);
    }
    labels
        .iter()
        .map(|l| {
            if l.class >= cols {
                Err(LossError::ClassOutOfRange {
                    node: l.node,
                    class: l.class,
                    num_classes: cols,
                })
            } else if l.node >= rows {
                Err(LossError::MissingRow { node: l.node, rows })
            } else {
                Ok((l.node, l.class))
            }
        })
        .collect()
}

/// Mean negative log-likelihood over `labels`.
pub fn cross_entropy(tape: &mut Tape<'_>, log_probs: Var, labels: &[LabeledNode]) -> Result<Var, LossError> {
    let (r, c) = tape.shape(log_probs);
    let entries = label_entries(r, c, labels)?;
    let picked = tape.pick(log_probs, &entries)?;
    let mean = tape.mean(picked)?;
    Ok(tape.scale(mean, -1.0)?)
}

pub fn cross_entropy_value(log_probs: &Matrix, labels: &[LabeledNode]) -> Result<f64, LossError> {
    let entries = label_entries(log_probs.rows(), log_probs.cols(), labels)?;
    Ok(-entries.iter().map(|&(n, c)| log_probs.get(n, c)).sum::<f64>() / entries.len() as f64)
}

/// Mean `softplus(neg − pos)`, i.e. `−ln σ(pos − neg)`.
pub fn bpr_loss(tape: &mut Tape<'_>, pos: Var, neg: Var) -> Result<Var, LossError> {
    let (a, b) = (tape.shape(pos), tape.shape(neg));
    if a != b {
        return Err(LossError::LengthMismatch(a.0 * a.1, b.0 * b.1));
    }
    let diff = tape.sub(neg, pos)?;
    let sp = tape.softplus(diff)?;
    Ok(tape.mean(sp)?)
}

pub fn bpr_value(pos: &[f64], neg: &[f64]) -> Result<f64, LossError> {
    if pos.len() != neg.len() {
        return Err(LossError::LengthMismatch(pos.len(), neg.len()));
    }
    if pos.is_empty() {
        return Err(LossError::Empty);
    }
    Ok(pos.iter().zip(neg).map(|(p, n)| softplus(n - p)).sum::<f64>() / pos.len() as f64)
}

/// `weight ·` mean over rows of the squared row norm.
pub fn l2_regularize(tape: &mut Tape<'_>, embeddings: Var, weight: f64) -> Result<Var, LossError> {
    if weight < 0.0 || weight.is_nan() {
        return Err(LossError::NegativeWeight(weight));
    }
    let rows = tape.shape(embeddings).0.max(1);
    let sq = tape.hadamard(embeddings, embeddings)?;
    let total = tape.sum(sq)?;
    Ok(tape.scale(total, weight / rows as f64)?)
}

/// One negative per positive, uniform over `candidates` minus the source
/// and its neighbors in `supervision_graph`. Deterministic in `seed`.
pub fn sample_negatives(
    supervision_graph: &Graph,
    positives: &[(usize, usize)],
    candidates: Range<usize>,
    seed: u64,
) -> Result<Vec<usize>, LossError> {
    let mut rng = rng_from(seed, &[stream::NEGATIVES]);
    let pool = candidates.len();
    let blocked = |s: usize, c: usize| c == s || supervision_graph.has_edge(s, c);
    let mut out = Vec::with_capacity(positives.len());
    for &(s, _) in positives {
        let excluded = supervision_graph
            .neighbors(s)
            .iter()
            .chain(std::iter::once(&s))
            .filter(|c| candidates.contains(c))
            .count();
        let free = pool - excluded;
        if free == 0 {
            return Err(LossError::Saturated(s));
        }
        let pick = if free * 4 >= pool {
            loop {
                let c = rng.random_range(candidates.clone());
                if !blocked(s, c) {
                    break c;
                }
            }
        } else {
            let k = rng.random_range(0..free);
            candidates.clone().filter(|&c| !blocked(s, c)).nth(k).expect("k < free")
        };
        out.push(pick);
    }
    Ok(out)
}
