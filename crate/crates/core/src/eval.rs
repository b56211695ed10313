//! Accuracy, full-ranking recall@K, degree buckets and per-setting reports.

use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, Setting, SplitBundle};
use crate::graph::{Graph, LabelSet};
use crate::losses::Task;
use crate::models::{Model, ModelError};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("empty evaluation population")]
    EmptyPopulation,
    #[error("source {0} has no candidates left after exclusion")]
    EmptyPool(usize),
    #[error("source {0} has no positives")]
    NoPositives(usize),
    #[error("node classification needs labels")]
    MissingLabels,
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Fraction of `nodes` whose prediction equals the label.
pub fn accuracy(predictions: &[usize], labels: &[usize], nodes: &[usize]) -> Result<f64, EvalError> {
    if nodes.is_empty() {
        return Err(EvalError::EmptyPopulation);
    }
    let hits = nodes.iter().filter(|&&n| predictions[n] == labels[n]).count();
    Ok(hits as f64 / nodes.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RankingQuery {
    pub source: usize,
    /// Sorted, deduplicated.
    pub positives: Vec<usize>,
}

/// Groups `pairs` by source. With `both_directions`, `(s, t)` also makes
/// `s` a positive of `t`.
pub fn ranking_queries(pairs: &[(usize, usize)], both_directions: bool) -> Vec<RankingQuery> {
    let mut directed: Vec<(usize, usize)> = pairs.to_vec();
    if both_directions {
        directed.extend(pairs.iter().map(|&(s, t)| (t, s)));
    }
    directed.sort_unstable();
    directed.dedup();
    let mut out: Vec<RankingQuery> = Vec::new();
    for (s, t) in directed {
        match out.last_mut() {
            Some(q) if q.source == s => q.positives.push(t),
            _ => out.push(RankingQuery {
                source: s,
                positives: vec![t],
            }),
        }
    }
    out
}

/// Candidates for `source`: `pool` minus the source and its neighbors in
/// the model input graph.
fn candidates(source: usize, pool: &Range<usize>, input_graph: &Graph) -> Vec<usize> {
    pool.clone()
        .filter(|&c| c != source && !input_graph.has_edge(source, c))
        .collect()
}

/// Per-query recall@k. Candidates are ranked by descending score, ties by
/// ascending id. Queries run in parallel; results keep query order.
pub fn recall_per_source<F>(
    score: F,
    queries: &[RankingQuery],
    pool: Range<usize>,
    input_graph: &Graph,
    k: usize,
) -> Result<Vec<f64>, EvalError>
where
    F: Fn(usize, usize) -> f64 + Sync,
{
    queries
        .par_iter()
        .map(|q| {
            if q.positives.is_empty() {
                return Err(EvalError::NoPositives(q.source));
            }
            let cands = candidates(q.source, &pool, input_graph);
            if cands.is_empty() {
                return Err(EvalError::EmptyPool(q.source));
            }
            let mut scored: Vec<(f64, usize)> = cands.iter().map(|&c| (score(q.source, c), c)).collect();
            let order = |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
            let top = k.min(scored.len());
            if top < scored.len() && top > 0 {
                scored.select_nth_unstable_by(top - 1, order);
            }
            let hits = scored[..top]
                .iter()
                .filter(|(_, c)| q.positives.binary_search(c).is_ok())
                .count();
            Ok(hits as f64 / q.positives.len() as f64)
        })
        .collect()
}

pub fn recall_at_k<F>(
    score: F,
    queries: &[RankingQuery],
    pool: Range<usize>,
    input_graph: &Graph,
    k: usize,
) -> Result<f64, EvalError>
where
    F: Fn(usize, usize) -> f64 + Sync,
{
    if queries.is_empty() {
        return Err(EvalError::EmptyPopulation);
    }
    let per = recall_per_source(score, queries, pool, input_graph, k)?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

pub const BUCKET_LABELS: [&str; 10] = ["0", "1", "2", "3", "4", "5", "6-10", "11-20", "21-50", "51+"];

/// Largest degree of each bucket in [`BUCKET_LABELS`]; the last is open.
const BUCKET_UPPER: [usize; 9] = [0, 1, 2, 3, 4, 5, 10, 20, 50];

/// Buckets `0..=2` form the tail.
pub const TAIL_BUCKETS: usize = 3;

pub fn bucket_of(degree: usize) -> usize {
    BUCKET_UPPER
        .iter()
        .position(|&u| degree <= u)
        .unwrap_or(BUCKET_UPPER.len())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketRow {
    pub bucket: String,
    pub count: usize,
    /// `None` for an empty bucket.
    pub mean: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketTable {
    pub rows: Vec<BucketRow>,
    /// Fingerprint of the graph whose degrees were bucketed.
    pub graph: String,
}

impl BucketTable {
    /// Node-weighted mean over the tail buckets.
    pub fn tail(&self) -> Option<f64> {
        let (mut sum, mut count) = (0.0, 0);
        for r in &self.rows[..TAIL_BUCKETS] {
            if let Some(m) = r.mean {
                sum += m * r.count as f64;
                count += r.count;
            }
        }
        (count > 0).then(|| sum / count as f64)
    }

    pub fn tail_count(&self) -> usize {
        self.rows[..TAIL_BUCKETS].iter().map(|r| r.count).sum()
    }
}

/// Groups `nodes` by their degree in `graph` (`metric` is parallel to
/// `nodes`) and averages within each bucket.
pub fn degree_buckets(graph: &Graph, nodes: &[usize], metric: &[f64]) -> BucketTable {
    assert_eq!(nodes.len(), metric.len());
    let mut sums = [0.0; BUCKET_LABELS.len()];
    let mut counts = [0usize; BUCKET_LABELS.len()];
    for (&n, &m) in nodes.iter().zip(metric) {
        let b = bucket_of(graph.neighbors(n).len());
        sums[b] += m;
        counts[b] += 1;
    }
    BucketTable {
        rows: BUCKET_LABELS
            .iter()
            .enumerate()
            .map(|(b, label)| BucketRow {
                bucket: label.to_string(),
                count: counts[b],
                mean: (counts[b] > 0).then(|| sums[b] / counts[b] as f64),
            })
            .collect(),
        graph: graph.fingerprint(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub setting: Setting,
    pub metric: String,
    pub value: f64,
    pub population: usize,
    pub buckets: BucketTable,
    pub tail: Option<f64>,
    pub tail_count: usize,
    pub num_seeds: usize,
    pub mean: f64,
    pub std: f64,
}

impl MetricReport {
    fn single(setting: Setting, metric: String, nodes: &[usize], per_node: &[f64], graph: &Graph) -> Self {
        let value = per_node.iter().sum::<f64>() / per_node.len() as f64;
        let buckets = degree_buckets(graph, nodes, per_node);
        MetricReport {
            setting,
            metric,
            value,
            population: nodes.len(),
            tail: buckets.tail(),
            tail_count: buckets.tail_count(),
            buckets,
            num_seeds: 1,
            mean: value,
            std: 0.0,
        }
    }

    /// `degree_bucket,metric,count` rows; empty buckets have an empty metric.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("degree_bucket,metric,count\n");
        for r in &self.buckets.rows {
            let m = r.mean.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{}\n", r.bucket, m, r.count));
        }
        out
    }
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Ranking queries for a test evaluation: sources with at least one
/// validation positive and at least one test positive.
fn filtered_queries(test: &[(usize, usize)], val: &[(usize, usize)], both: bool) -> Vec<RankingQuery> {
    let with_val: Vec<usize> = ranking_queries(val, both).into_iter().map(|q| q.source).collect();
    ranking_queries(test, both)
        .into_iter()
        .filter(|q| with_val.binary_search(&q.source).is_ok())
        .collect()
}

/// Runs the frozen `model` on the input graph of `setting` and scores it.
///
/// `relabeled` is the dataset graph in bundle ids; `labels` (classification)
/// are in bundle ids too.
pub fn evaluate_setting(
    model: &Model,
    bundle: &SplitBundle,
    relabeled: &Graph,
    labels: Option<&LabelSet>,
    setting: Setting,
    k: usize,
) -> Result<MetricReport, EvalError> {
    let input = bundle.inference_graph(relabeled, setting)?;
    match bundle.task {
        Task::NodeClassification => {
            let labels = labels.ok_or(EvalError::MissingLabels)?;
            let nodes: Vec<usize> = match setting {
                Setting::Transductive => bundle.labels.as_ref().map(|l| l.unlabeled.clone()).unwrap_or_default(),
                _ => bundle.new_nodes().collect(),
            };
            if nodes.is_empty() {
                return Err(EvalError::EmptyPopulation);
            }
            let pred = model.classify(&input)?.argmax_rows();
            let per: Vec<f64> = nodes
                .iter()
                .map(|&n| f64::from(u8::from(pred[n] == labels.classes[n])))
                .collect();
            Ok(MetricReport::single(setting, "accuracy".into(), &nodes, &per, &input))
        }
        Task::LinkPrediction | Task::Recsys => {
            let (queries, pool) = match (bundle.task, setting) {
                (Task::Recsys, _) => {
                    let p = relabeled.bipartite().expect("recsys bundle on bipartite graph");
                    (
                        filtered_queries(&bundle.test_edges, &bundle.val_edges, false),
                        p.items(),
                    )
                }
                (_, Setting::Transductive) => (
                    filtered_queries(&bundle.test_edges, &bundle.val_edges, true),
                    0..bundle.num_train_nodes,
                ),
                _ => {
                    // Inductive positives are owned by their new endpoint.
                    let owned: Vec<(usize, usize)> = bundle
                        .inductive_test
                        .iter()
                        .map(|&(u, v)| if u >= bundle.num_train_nodes { (u, v) } else { (v, u) })
                        .collect();
                    (ranking_queries(&owned, false), 0..bundle.num_nodes)
                }
            };
            if queries.is_empty() {
                return Err(EvalError::EmptyPopulation);
            }
            let z = model.encode(&input)?;
            let per = recall_per_source(|s, t| model.pair_score(&z, s, t), &queries, pool, &input, k)?;
            let nodes: Vec<usize> = queries.iter().map(|q| q.source).collect();
            Ok(MetricReport::single(
                setting,
                format!("recall@{k}"),
                &nodes,
                &per,
                &input,
            ))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use proptest::prelude::*;
    use rand::Rng as _;

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[0, 1, 2], &[0, 1, 2], &[0, 1, 2]).unwrap(), 1.0);
        assert!((accuracy(&[0, 1, 0], &[0, 1, 2], &[0, 1, 2]).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(accuracy(&[0], &[0], &[]), Err(EvalError::EmptyPopulation));
    }

    #[test]
    fn accuracy_matches_counting() {
        for seed in 0..20 {
            let mut rng = rng_from(seed, &[]);
            let pred: Vec<usize> = (0..100).map(|_| rng.random_range(0..3)).collect();
            let lab: Vec<usize> = (0..100).map(|_| rng.random_range(0..3)).collect();
            let nodes: Vec<usize> = (0..100).filter(|_| rng.random_bool(0.5)).collect();
            let mut hits = 0;
            for &n in &nodes {
                if pred[n] == lab[n] {
                    hits += 1;
                }
            }
            assert_eq!(accuracy(&pred, &lab, &nodes).unwrap(), hits as f64 / nodes.len() as f64);
        }
    }

    fn empty(n: usize) -> Graph {
        Graph::build(&[], n, None, None).unwrap()
    }

    #[test]
    fn recall_examples() {
        let g = empty(10);
        let q = vec![RankingQuery {
            source: 0,
            positives: vec![1, 2, 3, 4],
        }];
        // Node id as score: top-2 = {9, 8}.
        let r = recall_at_k(|_, t| t as f64, &q, 0..10, &g, 2).unwrap();
        assert_eq!(r, 0.0);
        let r = recall_at_k(|_, t| -(t as f64), &q, 0..10, &g, 2).unwrap();
        assert_eq!(r, 0.5);
        let r = recall_at_k(|_, t| -(t as f64), &q, 0..10, &g, 4).unwrap();
        assert_eq!(r, 1.0);
    }

    #[test]
    fn ties_break_toward_lower_ids_and_neighbors_are_excluded() {
        let g = Graph::build(&[(0, 1)], 6, None, None).unwrap();
        let q = vec![RankingQuery {
            source: 0,
            positives: vec![2],
        }];
        assert_eq!(recall_at_k(|_, _| 0.0, &q, 0..6, &g, 1).unwrap(), 1.0);
        let q3 = vec![RankingQuery {
            source: 0,
            positives: vec![3],
        }];
        assert_eq!(recall_at_k(|_, _| 0.0, &q3, 0..6, &g, 1).unwrap(), 0.0);
        let full = Graph::build(&[(0, 1), (0, 2)], 3, None, None).unwrap();
        assert_eq!(
            recall_at_k(|_, _| 0.0, &q, 0..3, &full, 1),
            Err(EvalError::EmptyPool(0))
        );
    }

    #[test]
    fn queries_group_by_source() {
        let q = ranking_queries(&[(3, 1), (0, 2), (3, 0)], false);
        assert_eq!(q.len(), 2);
        assert_eq!(q[1].positives, vec![0, 1]);
        let b = ranking_queries(&[(0, 1)], true);
        assert_eq!(b.iter().map(|q| q.source).collect::<Vec<_>>(), vec![0, 1]);
    }

    #[test]
    fn buckets_examples() {
        let g = empty(4);
        let t = degree_buckets(&g, &[0, 1, 2, 3], &[1.0, 0.0, 1.0, 1.0]);
        assert_eq!(t.rows.iter().filter(|r| r.count > 0).count(), 1);
        assert_eq!(t.rows[0].mean, Some(0.75));

        // Star on 0 with 7 leaves: degree 7 and seven degree-1 nodes.
        let edges: Vec<(usize, usize)> = (1..8).map(|v| (0, v)).collect();
        let g = Graph::build(&edges, 8, None, None).unwrap();
        let metric = [0.2, 1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0];
        let nodes: Vec<usize> = (0..8).collect();
        let t = degree_buckets(&g, &nodes, &metric);
        assert_eq!(t.rows[1].count, 7);
        assert!((t.rows[1].mean.unwrap() - 4.0 / 7.0).abs() < 1e-15);
        assert_eq!(t.rows[6].count, 1);
        assert_eq!(t.rows[6].mean, Some(0.2));
        assert_eq!(t.rows.iter().map(|r| r.count).sum::<usize>(), 8);
        assert_eq!(t.graph, g.fingerprint());
        assert_eq!(t.tail_count(), 7);
    }

    #[test]
    fn bucket_edges() {
        let b: Vec<usize> = [0, 5, 6, 10, 11, 20, 21, 50, 51, 1000]
            .iter()
            .map(|&d| bucket_of(d))
            .collect();
        assert_eq!(b, vec![0, 5, 6, 6, 7, 7, 8, 8, 9, 9]);
    }

    #[test]
    fn mean_std_values() {
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
    }

    /// Full sort of every candidate; the production path uses selection.
    fn brute_recall(scores: &[Vec<f64>], queries: &[RankingQuery], g: &Graph, k: usize) -> f64 {
        let mut total = 0.0;
        for q in queries {
            let mut c: Vec<usize> = (0..g.num_nodes())
                .filter(|&t| t != q.source && !g.has_edge(q.source, t))
                .collect();
            c.sort_by(|&a, &b| {
                scores[q.source][b]
                    .partial_cmp(&scores[q.source][a])
                    .unwrap()
                    .then(a.cmp(&b))
            });
            let hit = c.iter().take(k).filter(|t| q.positives.contains(t)).count();
            total += hit as f64 / q.positives.len() as f64;
        }
        total / queries.len() as f64
    }

    proptest! {
        #[test]
        fn recall_matches_brute_force(seed in 0u64..100_000, n in 3usize..50, k in 1usize..60) {
            let mut rng = rng_from(seed, &[9]);
            let mut edges = Vec::new();
            for u in 0..n {
                for v in u + 1..n {
                    if rng.random_bool(0.1) {
                        edges.push((u, v));
                    }
                }
            }
            let g = Graph::build(&edges, n, None, None).unwrap();
            // Coarse scores force ties.
            let scores: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.random_range(0..4) as f64).collect()).collect();
            let mut queries = Vec::new();
            for s in 0..n {
                let pos: Vec<usize> = (0..n).filter(|&t| t != s && !g.has_edge(s, t) && rng.random_bool(0.2)).collect();
                if !pos.is_empty() {
                    queries.push(RankingQuery { source: s, positives: pos });
                }
            }
            prop_assume!(!queries.is_empty());
            let fast = recall_at_k(|s, t| scores[s][t], &queries, 0..n, &g, k).unwrap();
            prop_assert_eq!(fast, brute_recall(&scores, &queries, &g, k));
            let warped = recall_at_k(|s, t| (scores[s][t] * 0.3).exp() + 7.0, &queries, 0..n, &g, k).unwrap();
            prop_assert_eq!(warped, fast);
        }
    }
}
