//! Split protocols and the serializable [`SplitBundle`].
//!
//! Node-level splits relabel the graph so the transductive node set `V`
//! occupies ids `0..|V|` and new nodes follow; `SplitBundle::node_order`
//! maps relabeled ids back to dataset ids. All index and edge lists in a
//! bundle use relabeled ids and are sorted.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{floor_fraction, Graph, GraphError, LabelSet};
use crate::losses::Task;
use crate::matrix::Matrix;
use crate::rng::{derive_seed, rng_from, stream};

pub use crate::graph::io::load_dataset;

#[derive(Debug, Error, PartialEq)]
pub enum DataError {
    #[error("node split needs at least 20 nodes, graph has {0}")]
    TooFewNodes(usize),
    #[error("fraction {0} must lie strictly between 0 and 1")]
    InvalidFraction(f64),
    #[error("ratios {0:?} must be nonnegative and sum to 1")]
    InvalidRatios(Vec<f64>),
    #[error("inductive splits need node features")]
    MissingFeatures,
    #[error("recsys split needs a bipartite graph")]
    NotBipartite,
    #[error("labels cover {labels} nodes, graph has {nodes}")]
    LabelCount { labels: usize, nodes: usize },
    #[error("setting {0} is not available for this bundle")]
    SettingUnavailable(Setting),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Evaluation setting.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Setting {
    Transductive,
    Inductive,
    /// Inductive with a fraction of every new node's input edges removed.
    InductiveCold(f64),
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Setting::Transductive => f.write_str("transductive"),
            Setting::Inductive => f.write_str("inductive"),
            Setting::InductiveCold(r) => write!(f, "inductive-cold-{r}"),
        }
    }
}

impl FromStr for Setting {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "transductive" => Ok(Setting::Transductive),
            "inductive" => Ok(Setting::Inductive),
            _ => s
                .strip_prefix("inductive-cold-")
                .and_then(|r| r.parse::<f64>().ok())
                .filter(|r| (0.0..=1.0).contains(r))
                .map(Setting::InductiveCold)
                .ok_or_else(|| format!("unknown setting `{s}`")),
        }
    }
}

impl Serialize for Setting {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Setting {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn check_fraction(f: f64) -> Result<(), DataError> {
    if f > 0.0 && f < 1.0 {
        Ok(())
    } else {
        Err(DataError::InvalidFraction(f))
    }
}

fn check_ratios(r: &[f64]) -> Result<(), DataError> {
    if r.iter().any(|&x| !(0.0..=1.0).contains(&x)) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(DataError::InvalidRatios(r.to_vec()));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct NodeSplit {
    /// Relabeled id → original id; `V` first, then `V_new`, each ascending.
    pub node_order: Vec<usize>,
    pub num_train_nodes: usize,
    /// Induced subgraph on `V` (relabeled), with features.
    pub train_graph: Graph,
    /// `V–V_new` edges as `(v, new)`, relabeled.
    pub cross_edges: Vec<(usize, usize)>,
    /// `V_new–V_new` edges, relabeled.
    pub new_new_edges: Vec<(usize, usize)>,
}

/// Keeps `⌊(1 − new_fraction)·n⌋` random nodes as `V`.
pub fn node_split(graph: &Graph, new_fraction: f64, seed: u64) -> Result<NodeSplit, DataError> {
    check_fraction(new_fraction)?;
    let n = graph.num_nodes();
    if n < 20 {
        return Err(DataError::TooFewNodes(n));
    }
    let keep = floor_fraction(1.0 - new_fraction, n);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng_from(seed, &[stream::NODE_SPLIT]));
    let (v, vnew) = perm.split_at_mut(keep);
    v.sort_unstable();
    vnew.sort_unstable();
    let node_order = perm;
    let mut new_id = vec![0; n];
    for (new, &old) in node_order.iter().enumerate() {
        new_id[old] = new;
    }
    let (mut induced, mut cross, mut new_new) = (Vec::new(), Vec::new(), Vec::new());
    for &(a, b) in graph.edges() {
        let (x, y) = (new_id[a], new_id[b]);
        let (x, y) = (x.min(y), x.max(y));
        match (x < keep, y < keep) {
            (true, true) => induced.push((x, y)),
            (true, false) => cross.push((x, y)),
            _ => new_new.push((x, y)),
        }
    }
    cross.sort_unstable();
    new_new.sort_unstable();
    let features = graph.features().map(|f| f.select_rows(&node_order[..keep]));
    let train_graph = Graph::build(&induced, keep, features, None)?;
    Ok(NodeSplit {
        node_order,
        num_train_nodes: keep,
        train_graph,
        cross_edges: cross,
        new_new_edges: new_new,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSplit {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub unlabeled: Vec<usize>,
}

/// `⌊fraction·|V|⌋` labeled nodes, halved into train and validation (the
/// odd node goes to train). `V = 0..num_nodes`.
pub fn label_split(num_nodes: usize, labeled_fraction: f64, seed: u64) -> Result<LabelSplit, DataError> {
    check_fraction(labeled_fraction)?;
    let labeled = floor_fraction(labeled_fraction, num_nodes);
    let mut perm: Vec<usize> = (0..num_nodes).collect();
    perm.shuffle(&mut rng_from(seed, &[stream::LABEL_SPLIT]));
    let n_train = labeled.div_ceil(2);
    let sorted = |s: &[usize]| {
        let mut v = s.to_vec();
        v.sort_unstable();
        v
    };
    Ok(LabelSplit {
        train: sorted(&perm[..n_train]),
        valid: sorted(&perm[n_train..labeled]),
        unlabeled: sorted(&perm[labeled..]),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EdgeSplit {
    /// Model input graph: training edges only, same nodes and features.
    pub train_graph: Graph,
    pub val: Vec<(usize, usize)>,
    pub test: Vec<(usize, usize)>,
}

/// Partitions undirected edges by count: `⌊r₀|E|⌋` train, `⌊r₁|E|⌋` val,
/// remainder test.
pub fn edge_split(graph: &Graph, ratios: [f64; 3], seed: u64) -> Result<EdgeSplit, DataError> {
    check_ratios(&ratios)?;
    let m = graph.num_edges();
    let mut edges = graph.edges().to_vec();
    edges.shuffle(&mut rng_from(seed, &[stream::EDGE_SPLIT]));
    let n_train = floor_fraction(ratios[0], m);
    let n_val = floor_fraction(ratios[1], m).min(m - n_train);
    let part = |r: std::ops::Range<usize>| {
        let mut v = edges[r].to_vec();
        v.sort_unstable();
        v
    };
    let train = part(0..n_train);
    let val = part(n_train..n_train + n_val);
    let test = part(n_train + n_val..m);
    Ok(EdgeSplit {
        train_graph: graph.with_edges(&train)?,
        val,
        test,
    })
}

pub fn edge_split_transductive(graph: &Graph, ratios: [f64; 3], seed: u64) -> Result<EdgeSplit, DataError> {
    edge_split(graph, ratios, seed)
}

pub fn recsys_split(graph: &Graph, ratios: [f64; 3], seed: u64) -> Result<EdgeSplit, DataError> {
    if graph.bipartite().is_none() {
        return Err(DataError::NotBipartite);
    }
    edge_split(graph, ratios, seed)
}

/// Groups new-node edges by owner: a `V–V_new` edge belongs to its new
/// endpoint, a `V_new–V_new` edge to its lower id. Owners are `≥ first_new`.
pub fn owned_edges(edges: &[(usize, usize)], first_new: usize, num_nodes: usize) -> Vec<Vec<(usize, usize)>> {
    let mut out = vec![Vec::new(); num_nodes - first_new];
    for &(a, b) in edges {
        let (u, v) = (a.min(b), a.max(b));
        let owner = if u >= first_new { u } else { v };
        debug_assert!(owner >= first_new);
        out[owner - first_new].push((u, v));
    }
    out
}

type EdgeList = Vec<(usize, usize)>;

/// Per new node, `⌊ratio·k⌋` of its `k` owned edges become input, the rest
/// test positives. Returns `(input, test)`, each sorted.
pub fn edge_split_inductive(owned: &[EdgeList], ratio: f64, seed: u64) -> Result<(EdgeList, EdgeList), DataError> {
    check_fraction(ratio)?;
    let (mut input, mut test) = (Vec::new(), Vec::new());
    for (i, edges) in owned.iter().enumerate() {
        let mut e = edges.clone();
        e.sort_unstable();
        e.shuffle(&mut rng_from(seed, &[stream::INDUCTIVE_SPLIT, i as u64]));
        let k = floor_fraction(ratio, e.len());
        input.extend_from_slice(&e[..k]);
        test.extend_from_slice(&e[k..]);
    }
    input.sort_unstable();
    test.sort_unstable();
    Ok((input, test))
}

/// Per new node, removes `⌈ratio·k⌉` of its `k` owned input edges (keeps
/// `⌊(1−ratio)·k⌋`). The per-node shuffle ignores `ratio`, so a larger ratio
/// keeps a prefix of what a smaller one keeps.
pub fn cold_start_remove(
    owned: &[Vec<(usize, usize)>],
    removal_ratio: f64,
    seed: u64,
) -> Result<Vec<(usize, usize)>, DataError> {
    if !(0.0..=1.0).contains(&removal_ratio) {
        return Err(DataError::InvalidFraction(removal_ratio));
    }
    let mut out = Vec::new();
    for (i, edges) in owned.iter().enumerate() {
        let mut e = edges.clone();
        e.sort_unstable();
        e.shuffle(&mut rng_from(seed, &[stream::COLD_START, i as u64]));
        let keep = e.len() - crate::graph::ceil_fraction(removal_ratio, e.len());
        out.extend_from_slice(&e[..keep]);
    }
    out.sort_unstable();
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub new_fraction: f64,
    pub labeled_fraction: f64,
    pub transductive_ratios: [f64; 3],
    pub inductive_ratio: f64,
    pub recsys_ratios: [f64; 3],
    pub cold_ratios: Vec<f64>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            new_fraction: 0.05,
            labeled_fraction: 0.10,
            transductive_ratios: [0.5, 0.2, 0.3],
            inductive_ratio: 0.5,
            recsys_ratios: [0.10, 0.05, 0.85],
            cold_ratios: vec![0.3, 0.6, 0.9],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColdStartVariant {
    pub ratio: f64,
    /// New-node input edges that survive removal.
    pub input_edges: Vec<(usize, usize)>,
}

/// Every partition one experiment needs, in relabeled ids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitBundle {
    pub task: Task,
    pub seed: u64,
    pub num_nodes: usize,
    pub node_order: Vec<usize>,
    /// `|V|`; new nodes are `num_train_nodes..num_nodes`.
    pub num_train_nodes: usize,
    pub labels: Option<LabelSplit>,
    /// Input edges of the transductive training graph (on `V`).
    pub train_edges: Vec<(usize, usize)>,
    pub val_edges: Vec<(usize, usize)>,
    pub test_edges: Vec<(usize, usize)>,
    /// New-node input edges at inductive inference.
    pub inductive_input: Vec<(usize, usize)>,
    /// Inductive test positives (link prediction).
    pub inductive_test: Vec<(usize, usize)>,
    pub cold_start: Vec<ColdStartVariant>,
}

fn relabel_graph(graph: &Graph, order: &[usize]) -> Result<Graph, DataError> {
    let n = order.len();
    let mut new_id = vec![0; n];
    for (new, &old) in order.iter().enumerate() {
        new_id[old] = new;
    }
    let edges: Vec<(usize, usize)> = graph.edges().iter().map(|&(u, v)| (new_id[u], new_id[v])).collect();
    let features = graph.features().map(|f| f.select_rows(order));
    Ok(Graph::build(&edges, n, features, graph.bipartite())?)
}

impl SplitBundle {
    pub fn node_classification(graph: &Graph, cfg: &SplitConfig, seed: u64) -> Result<Self, DataError> {
        if graph.features().is_none() {
            return Err(DataError::MissingFeatures);
        }
        let ns = node_split(graph, cfg.new_fraction, seed)?;
        let labels = label_split(ns.num_train_nodes, cfg.labeled_fraction, derive_seed(seed, &[1]))?;
        let n = graph.num_nodes();
        let mut new_edges = ns.cross_edges.clone();
        new_edges.extend_from_slice(&ns.new_new_edges);
        new_edges.sort_unstable();
        let owned = owned_edges(&new_edges, ns.num_train_nodes, n);
        let cold_start = cfg
            .cold_ratios
            .iter()
            .map(|&ratio| {
                Ok(ColdStartVariant {
                    ratio,
                    input_edges: cold_start_remove(&owned, ratio, seed)?,
                })
            })
            .collect::<Result<_, DataError>>()?;
        Ok(SplitBundle {
            task: Task::NodeClassification,
            seed,
            num_nodes: n,
            node_order: ns.node_order,
            num_train_nodes: ns.num_train_nodes,
            labels: Some(labels),
            train_edges: ns.train_graph.edges().to_vec(),
            val_edges: Vec::new(),
            test_edges: Vec::new(),
            inductive_input: new_edges,
            inductive_test: Vec::new(),
            cold_start,
        })
    }

    pub fn link_prediction(graph: &Graph, cfg: &SplitConfig, seed: u64) -> Result<Self, DataError> {
        if graph.features().is_none() {
            return Err(DataError::MissingFeatures);
        }
        let ns = node_split(graph, cfg.new_fraction, seed)?;
        let es = edge_split_transductive(&ns.train_graph, cfg.transductive_ratios, derive_seed(seed, &[2]))?;
        let n = graph.num_nodes();
        let mut new_edges = ns.cross_edges.clone();
        new_edges.extend_from_slice(&ns.new_new_edges);
        let owned = owned_edges(&new_edges, ns.num_train_nodes, n);
        let (input, test) = edge_split_inductive(&owned, cfg.inductive_ratio, seed)?;
        let owned_input = owned_edges(&input, ns.num_train_nodes, n);
        let cold_start = cfg
            .cold_ratios
            .iter()
            .map(|&ratio| {
                Ok(ColdStartVariant {
                    ratio,
                    input_edges: cold_start_remove(&owned_input, ratio, seed)?,
                })
            })
            .collect::<Result<_, DataError>>()?;
        Ok(SplitBundle {
            task: Task::LinkPrediction,
            seed,
            num_nodes: n,
            node_order: ns.node_order,
            num_train_nodes: ns.num_train_nodes,
            labels: None,
            train_edges: es.train_graph.edges().to_vec(),
            val_edges: es.val,
            test_edges: es.test,
            inductive_input: input,
            inductive_test: test,
            cold_start,
        })
    }

    /// Transductive only: featureless recsys graphs have no inductive setting.
    pub fn recsys(graph: &Graph, cfg: &SplitConfig, seed: u64) -> Result<Self, DataError> {
        let es = recsys_split(graph, cfg.recsys_ratios, seed)?;
        let n = graph.num_nodes();
        Ok(SplitBundle {
            task: Task::Recsys,
            seed,
            num_nodes: n,
            node_order: (0..n).collect(),
            num_train_nodes: n,
            labels: None,
            train_edges: es.train_graph.edges().to_vec(),
            val_edges: es.val,
            test_edges: es.test,
            inductive_input: Vec::new(),
            inductive_test: Vec::new(),
            cold_start: Vec::new(),
        })
    }

    pub fn build(task: Task, graph: &Graph, cfg: &SplitConfig, seed: u64) -> Result<Self, DataError> {
        match task {
            Task::NodeClassification => Self::node_classification(graph, cfg, seed),
            Task::LinkPrediction => Self::link_prediction(graph, cfg, seed),
            Task::Recsys => Self::recsys(graph, cfg, seed),
        }
    }

    pub fn new_nodes(&self) -> std::ops::Range<usize> {
        self.num_train_nodes..self.num_nodes
    }

    /// The dataset graph in relabeled ids.
    pub fn relabel(&self, graph: &Graph) -> Result<Graph, DataError> {
        relabel_graph(graph, &self.node_order)
    }

    pub fn relabel_labels(&self, labels: &LabelSet) -> Result<LabelSet, DataError> {
        if labels.len() != self.num_nodes {
            return Err(DataError::LabelCount {
                labels: labels.len(),
                nodes: self.num_nodes,
            });
        }
        Ok(labels.permuted(&self.node_order))
    }

    fn features_prefix(&self, relabeled: &Graph, rows: usize) -> Option<Matrix> {
        relabeled
            .features()
            .map(|f| f.select_rows(&(0..rows).collect::<Vec<_>>()))
    }

    /// Transductive model input graph on `V`.
    pub fn train_graph(&self, relabeled: &Graph) -> Result<Graph, DataError> {
        let partition = relabeled.bipartite().filter(|_| self.num_train_nodes == self.num_nodes);
        Ok(Graph::build(
            &self.train_edges,
            self.num_train_nodes,
            self.features_prefix(relabeled, self.num_train_nodes),
            partition,
        )?)
    }

    pub fn settings(&self) -> Vec<Setting> {
        let mut out = vec![Setting::Transductive];
        if self.task != Task::Recsys {
            out.push(Setting::Inductive);
            out.extend(self.cold_start.iter().map(|c| Setting::InductiveCold(c.ratio)));
        }
        out
    }

    /// Input graph the frozen model sees in `setting`.
    pub fn inference_graph(&self, relabeled: &Graph, setting: Setting) -> Result<Graph, DataError> {
        let extra = match setting {
            Setting::Transductive => return self.train_graph(relabeled),
            _ if self.task == Task::Recsys => return Err(DataError::SettingUnavailable(setting)),
            Setting::Inductive => &self.inductive_input,
            Setting::InductiveCold(r) => {
                &self
                    .cold_start
                    .iter()
                    .find(|c| (c.ratio - r).abs() < 1e-12)
                    .ok_or(DataError::SettingUnavailable(setting))?
                    .input_edges
            }
        };
        let mut edges = self.train_edges.clone();
        edges.extend_from_slice(extra);
        Ok(Graph::build(
            &edges,
            self.num_nodes,
            relabeled.features().cloned(),
            None,
        )?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("bundle serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}
