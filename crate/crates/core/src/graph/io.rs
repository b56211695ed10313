//! Text formats for graphs, features and labels.
//!
//! Edge list: one edge per line as two whitespace-separated base-10 node ids.
//! Lines starting with `#` are comments. The first non-comment line may be
//! `%bipartite <num_users> <num_items>`; a `%nodes <n>` line may pin the node
//! count so trailing isolated nodes survive a round trip.
//!
//! Features: CSV, row `i` is node `i`, no header.
//!
//! Labels: one `node_id class_id` pair per line, `#` comments allowed.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::{Bipartite, Graph, GraphError, LabelSet};
use crate::matrix::Matrix;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("reading {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("writing {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("feature file has {rows} rows but the graph has {num_nodes} nodes")]
    FeatureRowCount { rows: usize, num_nodes: usize },
    #[error("label file covers {covered} of {num_nodes} nodes")]
    MissingLabels { covered: usize, num_nodes: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

fn read(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|source| IoError::Read {
        path: path.to_path_buf(),
        source,
    })
}

fn write(path: &Path, contents: &str) -> Result<(), IoError> {
    fs::write(path, contents).map_err(|source| IoError::Write {
        path: path.to_path_buf(),
        source,
    })
}

fn malformed(path: &Path, line: usize, message: impl Into<String>) -> IoError {
    IoError::Malformed {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Raw contents of an edge-list file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EdgeList {
    pub edges: Vec<(usize, usize)>,
    pub bipartite: Option<Bipartite>,
    pub num_nodes: Option<usize>,
}

impl EdgeList {
    /// Node count implied by the directives and the largest id.
    pub fn implied_nodes(&self) -> usize {
        let by_edges = self.edges.iter().map(|&(u, v)| u.max(v) + 1).max().unwrap_or(0);
        let by_partition = self.bipartite.map_or(0, |p| p.num_users + p.num_items);
        by_edges.max(by_partition).max(self.num_nodes.unwrap_or(0))
    }
}

pub fn parse_edge_list(path: &Path, text: &str) -> Result<EdgeList, IoError> {
    let mut out = EdgeList::default();
    let mut seen_content = false;
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let head = parts.next().unwrap_or_default();
        if head == "%bipartite" {
            if seen_content {
                return Err(malformed(path, lineno, "%bipartite must be the first non-comment line"));
            }
            let nums: Vec<usize> = parts
                .map(|p| p.parse::<usize>())
                .collect::<Result<_, _>>()
                .map_err(|e| malformed(path, lineno, e.to_string()))?;
            if nums.len() != 2 {
                return Err(malformed(path, lineno, "expected %bipartite <users> <items>"));
            }
            out.bipartite = Some(Bipartite {
                num_users: nums[0],
                num_items: nums[1],
            });
            seen_content = true;
            continue;
        }
        if head == "%nodes" {
            let n = parts
                .next()
                .ok_or_else(|| malformed(path, lineno, "expected %nodes <n>"))?
                .parse::<usize>()
                .map_err(|e| malformed(path, lineno, e.to_string()))?;
            out.num_nodes = Some(n);
            seen_content = true;
            continue;
        }
        seen_content = true;
        let u = head
            .parse::<usize>()
            .map_err(|e| malformed(path, lineno, format!("bad node id {head:?}: {e}")))?;
        let v_str = parts
            .next()
            .ok_or_else(|| malformed(path, lineno, "expected two node ids"))?;
        let v = v_str
            .parse::<usize>()
            .map_err(|e| malformed(path, lineno, format!("bad node id {v_str:?}: {e}")))?;
        if parts.next().is_some() {
            return Err(malformed(path, lineno, "trailing tokens after edge"));
        }
        out.edges.push((u, v));
    }
    Ok(out)
}

pub fn read_edge_list(path: &Path) -> Result<EdgeList, IoError> {
    parse_edge_list(path, &read(path)?)
}

pub fn format_edge_list(graph: &Graph) -> String {
    let mut s = String::new();
    if let Some(p) = graph.bipartite() {
        let _ = writeln!(s, "%bipartite {} {}", p.num_users, p.num_items);
    }
    let _ = writeln!(s, "%nodes {}", graph.num_nodes());
    for &(u, v) in graph.edges() {
        let _ = writeln!(s, "{u} {v}");
    }
    s
}

pub fn write_edge_list(path: &Path, graph: &Graph) -> Result<(), IoError> {
    write(path, &format_edge_list(graph))
}

pub fn read_features(path: &Path) -> Result<Matrix, IoError> {
    let text = read(path)?;
    let mut rows = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| malformed(path, i + 1, e.to_string()))?;
        if let Some(first) = rows.first() {
            let first: &Vec<f64> = first;
            if first.len() != row.len() {
                return Err(malformed(
                    path,
                    i + 1,
                    format!("expected {} columns, found {}", first.len(), row.len()),
                ));
            }
        }
        rows.push(row);
    }
    Ok(Matrix::from_rows(&rows))
}

pub fn write_features(path: &Path, features: &Matrix) -> Result<(), IoError> {
    let mut s = String::new();
    for r in 0..features.rows() {
        let row: Vec<String> = features.row(r).iter().map(|x| format!("{x:?}")).collect();
        let _ = writeln!(s, "{}", row.join(","));
    }
    write(path, &s)
}

pub fn read_labels(path: &Path, num_nodes: usize) -> Result<LabelSet, IoError> {
    let text = read(path)?;
    let mut classes: Vec<Option<usize>> = vec![None; num_nodes];
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let nums: Vec<usize> = line
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|e| malformed(path, i + 1, e.to_string()))?;
        if nums.len() != 2 {
            return Err(malformed(path, i + 1, "expected `node_id class_id`"));
        }
        if nums[0] >= num_nodes {
            return Err(malformed(
                path,
                i + 1,
                format!("node {} outside graph of {num_nodes} nodes", nums[0]),
            ));
        }
        classes[nums[0]] = Some(nums[1]);
    }
    let covered = classes.iter().filter(|c| c.is_some()).count();
    if covered != num_nodes {
        return Err(IoError::MissingLabels { covered, num_nodes });
    }
    let classes: Vec<usize> = classes.into_iter().map(|c| c.unwrap_or(0)).collect();
    let num_classes = classes.iter().max().map_or(0, |&m| m + 1);
    Ok(LabelSet::new(classes, num_classes))
}

pub fn write_labels(path: &Path, labels: &LabelSet) -> Result<(), IoError> {
    let mut s = String::new();
    for (v, c) in labels.classes.iter().enumerate() {
        let _ = writeln!(s, "{v} {c}");
    }
    write(path, &s)
}

/// Reads an edge list plus optional feature and label files.
pub fn load_dataset(
    edges: &Path,
    features: Option<&Path>,
    labels: Option<&Path>,
) -> Result<(Graph, Option<LabelSet>), IoError> {
    let list = read_edge_list(edges)?;
    let features = features.map(read_features).transpose()?;
    let mut num_nodes = list.implied_nodes();
    if let Some(f) = &features {
        if list.num_nodes.is_some() || list.bipartite.is_some() {
            if f.rows() != num_nodes {
                return Err(IoError::FeatureRowCount {
                    rows: f.rows(),
                    num_nodes,
                });
            }
        } else if f.rows() < num_nodes {
            return Err(IoError::FeatureRowCount {
                rows: f.rows(),
                num_nodes,
            });
        } else {
            num_nodes = f.rows();
        }
    }
    let graph = Graph::build(&list.edges, num_nodes, features, list.bipartite)?;
    let labels = labels.map(|p| read_labels(p, num_nodes)).transpose()?;
    Ok((graph, labels))
}
