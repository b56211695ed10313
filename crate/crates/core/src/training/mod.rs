//! Full-batch training: conventional training, the two-stage curriculum and
//! its ablations.
//!
//! Every stage runs Adam from a fresh optimizer state, evaluates the
//! validation metric every `eval_interval` epochs on the clean training
//! graph, keeps the best snapshot (strict improvement) and stops after
//! `patience` evaluations without improvement. Randomness per update (edge
//! drops, negatives) comes from `derive_seed(seed, [stage, epoch, stream])`,
//! so a `(config, seed)` pair fixes the whole trajectory.

mod config;

pub use config::{Method, StageConfig, TrainConfig};

use std::collections::HashSet;
use std::ops::Range;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{adam_step, AdamConfig, AdamState, AutodiffError, Tape, Var};
use crate::data::SplitBundle;
use crate::eval::{accuracy, ranking_queries, recall_at_k, EvalError, RankingQuery};
use crate::graph::{Graph, GraphError, LabelSet};
use crate::losses::{bpr_loss, cross_entropy, l2_regularize, sample_negatives, LossError, SupervisionSet, Task};
use crate::models::{ForwardPass, GraphContext, Model, ModelError};
use crate::rng::derive_seed;

#[derive(Debug, Error, PartialEq)]
pub enum TrainError {
    #[error("empty supervision")]
    EmptySupervision,
    #[error("pseudo-labels only exist for node classification")]
    PseudoForRanking,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("{0} needs labels")]
    MissingLabels(&'static str),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Validation metric evaluated on the clean training graph.
#[derive(Clone, Debug, PartialEq)]
pub enum Validation {
    /// `classes` is indexed by node id.
    Accuracy { nodes: Vec<usize>, classes: Vec<usize> },
    Recall {
        queries: Vec<RankingQuery>,
        pool: Range<usize>,
        k: usize,
    },
}

impl Validation {
    pub fn score(&self, model: &Model, graph: &Graph) -> Result<f64, TrainError> {
        match self {
            Validation::Accuracy { nodes, classes } => {
                let pred = model.classify(graph)?.argmax_rows();
                Ok(accuracy(&pred, classes, nodes)?)
            }
            Validation::Recall { queries, pool, k } => {
                let z = model.encode(graph)?;
                Ok(recall_at_k(
                    |s, t| model.pair_score(&z, s, t),
                    queries,
                    pool.clone(),
                    graph,
                    *k,
                )?)
            }
        }
    }
}

/// Everything a training run reads.
#[derive(Clone, Debug)]
pub struct TrainData {
    pub task: Task,
    /// Clean model input graph.
    pub graph: Graph,
    pub supervision: SupervisionSet,
    pub validation: Validation,
    /// Pseudo-label candidates (classification).
    pub unlabeled: Vec<usize>,
    /// Negative candidates (ranking).
    pub negative_pool: Range<usize>,
}

impl TrainData {
    /// Transductive training inputs for `bundle`. `relabeled` and `labels`
    /// are in bundle ids.
    pub fn from_bundle(
        bundle: &SplitBundle,
        relabeled: &Graph,
        labels: Option<&LabelSet>,
        k: usize,
    ) -> Result<Self, TrainError> {
        let graph = bundle
            .train_graph(relabeled)
            .map_err(|e| TrainError::InvalidConfig(e.to_string()))?;
        match bundle.task {
            Task::NodeClassification => {
                let labels = labels.ok_or(TrainError::MissingLabels("node classification"))?;
                let split = bundle
                    .labels
                    .as_ref()
                    .ok_or(TrainError::MissingLabels("classification bundle"))?;
                Ok(TrainData {
                    task: bundle.task,
                    supervision: SupervisionSet::classification(labels.num_classes, &split.train, &labels.classes)?,
                    validation: Validation::Accuracy {
                        nodes: split.valid.clone(),
                        classes: labels.classes.clone(),
                    },
                    unlabeled: split.unlabeled.clone(),
                    negative_pool: 0..0,
                    graph,
                })
            }
            Task::LinkPrediction => {
                let both: Vec<(usize, usize)> =
                    bundle.train_edges.iter().flat_map(|&(u, v)| [(u, v), (v, u)]).collect();
                Ok(TrainData {
                    task: bundle.task,
                    supervision: SupervisionSet::ranking(both),
                    validation: Validation::Recall {
                        queries: ranking_queries(&bundle.val_edges, true),
                        pool: 0..bundle.num_train_nodes,
                        k,
                    },
                    unlabeled: Vec::new(),
                    negative_pool: 0..bundle.num_train_nodes,
                    graph,
                })
            }
            Task::Recsys => {
                let items = relabeled
                    .bipartite()
                    .ok_or_else(|| TrainError::InvalidConfig("recsys graph is not bipartite".into()))?
                    .items();
                Ok(TrainData {
                    task: bundle.task,
                    supervision: SupervisionSet::ranking(bundle.train_edges.clone()),
                    validation: Validation::Recall {
                        queries: ranking_queries(&bundle.val_edges, false),
                        pool: items.clone(),
                        k,
                    },
                    unlabeled: Vec::new(),
                    negative_pool: items,
                    graph,
                })
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputMode {
    Clean,
    DropEdge,
    /// Sum of the clean-graph loss and the dropped-graph loss per update.
    CleanPlusDropEdge,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValPoint {
    pub epoch: usize,
    pub metric: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub name: String,
    pub input: InputMode,
    pub alpha: f64,
    pub lr: f64,
    pub epochs_configured: usize,
    pub epochs_run: usize,
    pub supervision_size: usize,
    pub pseudo_labels: usize,
    pub loss_trace: Vec<f64>,
    pub val_trace: Vec<ValPoint>,
    pub best_epoch: Option<usize>,
    pub best_metric: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub method: Method,
    pub task: Task,
    pub seed: u64,
    pub config: TrainConfig,
    pub stages: Vec<StageReport>,
    pub model_fingerprint: String,
    /// Not serialized so that reruns produce identical JSON.
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

impl TrainReport {
    /// Best validation metric of the final stage.
    pub fn best_metric(&self) -> Option<f64> {
        self.stages.last().and_then(|s| s.best_metric)
    }
}

struct StageSpec<'a> {
    name: &'static str,
    tag: u64,
    cfg: StageConfig,
    input: InputMode,
    /// Targets for the (possibly dropped) prediction.
    sup: &'a SupervisionSet,
    /// Targets for the clean term of [`InputMode::CleanPlusDropEdge`].
    clean_sup: &'a SupervisionSet,
}

fn head_loss(
    model: &Model,
    tape: &mut Tape<'_>,
    graph: &Graph,
    fwd: &ForwardPass,
    sup: &SupervisionSet,
    negatives: &[usize],
    l2_weight: f64,
) -> Result<Var, TrainError> {
    match sup {
        SupervisionSet::Classification { labels, .. } => {
            let lp = model.classify_head(tape, fwd)?;
            Ok(cross_entropy(tape, lp, labels)?)
        }
        SupervisionSet::Ranking { positives } => {
            let neg_pairs: Vec<(usize, usize)> = positives.iter().zip(negatives).map(|(&(s, _), &n)| (s, n)).collect();
            let (pos, neg) = if graph.bipartite().is_some() {
                (
                    model.inner_product_head(tape, graph, fwd, positives)?,
                    model.inner_product_head(tape, graph, fwd, &neg_pairs)?,
                )
            } else {
                (
                    model.link_head(tape, fwd, positives)?,
                    model.link_head(tape, fwd, &neg_pairs)?,
                )
            };
            let loss = bpr_loss(tape, pos, neg)?;
            if l2_weight > 0.0 {
                let reg = l2_regularize(tape, fwd.embeddings, l2_weight)?;
                Ok(tape.add(loss, reg)?)
            } else {
                Ok(loss)
            }
        }
    }
}

fn run_stage(
    model: &mut Model,
    data: &TrainData,
    cfg: &TrainConfig,
    spec: &StageSpec<'_>,
    seed: u64,
) -> Result<StageReport, TrainError> {
    if spec.sup.is_empty() || spec.clean_sup.is_empty() {
        return Err(TrainError::EmptySupervision);
    }
    let adam = AdamConfig {
        lr: spec.cfg.lr,
        ..AdamConfig::default()
    };
    let mut state = AdamState::new(model.params());
    let variant = model.config().encoder.variant;
    let clean_ctx = GraphContext::new(&data.graph, variant);
    let alpha = match spec.input {
        InputMode::Clean => 0.0,
        _ => cfg.alpha,
    };
    let mut report = StageReport {
        name: spec.name.into(),
        input: spec.input,
        alpha,
        lr: spec.cfg.lr,
        epochs_configured: spec.cfg.epochs,
        epochs_run: 0,
        supervision_size: spec.sup.len(),
        pseudo_labels: spec.sup.num_pseudo(),
        loss_trace: Vec::with_capacity(spec.cfg.epochs),
        val_trace: Vec::new(),
        best_epoch: None,
        best_metric: None,
    };
    let mut snapshot = None;
    let mut stale = 0;
    for epoch in 0..spec.cfg.epochs {
        let negatives = match spec.sup {
            SupervisionSet::Ranking { positives } => sample_negatives(
                &data.graph,
                positives,
                data.negative_pool.clone(),
                derive_seed(seed, &[spec.tag, epoch as u64, 1]),
            )?,
            SupervisionSet::Classification { .. } => Vec::new(),
        };
        let dropped = match spec.input {
            InputMode::Clean => None,
            _ => {
                let g = data
                    .graph
                    .drop_edges(alpha, derive_seed(seed, &[spec.tag, epoch as u64, 0]))?;
                let ctx = GraphContext::new(&g, variant);
                Some((g, ctx))
            }
        };
        let mut tape = Tape::new();
        let params = model.record_params(&mut tape, true);
        let mut terms = Vec::with_capacity(2);
        if matches!(spec.input, InputMode::Clean | InputMode::CleanPlusDropEdge) {
            let target = if spec.input == InputMode::Clean {
                spec.sup
            } else {
                spec.clean_sup
            };
            let fwd = model.forward_with(&mut tape, &data.graph, &clean_ctx, params.clone())?;
            terms.push(head_loss(
                model,
                &mut tape,
                &data.graph,
                &fwd,
                target,
                &negatives,
                cfg.l2_weight,
            )?);
        }
        if let Some((g, ctx)) = &dropped {
            let fwd = model.forward_with(&mut tape, g, ctx, params.clone())?;
            terms.push(head_loss(
                model,
                &mut tape,
                g,
                &fwd,
                spec.sup,
                &negatives,
                cfg.l2_weight,
            )?);
        }
        let mut loss = terms[0];
        for &t in &terms[1..] {
            loss = tape.add(loss, t)?;
        }
        tape.backward(loss)?;
        report.loss_trace.push(tape.value(loss).item());
        let grads: Vec<_> = params.iter().map(|&p| tape.grad(p)).collect();
        drop(tape);
        adam_step(model.params_mut(), &grads, &mut state, &adam)?;
        report.epochs_run = epoch + 1;

        if (epoch + 1) % cfg.eval_interval == 0 || epoch + 1 == spec.cfg.epochs {
            let metric = data.validation.score(model, &data.graph)?;
            report.val_trace.push(ValPoint {
                epoch: epoch + 1,
                metric,
            });
            if report.best_metric.is_none_or(|b| metric > b) {
                report.best_metric = Some(metric);
                report.best_epoch = Some(epoch + 1);
                snapshot = Some(model.params().to_vec());
                stale = 0;
            } else {
                stale += 1;
                if stale >= cfg.patience {
                    break;
                }
            }
        }
    }
    if let Some(best) = snapshot {
        model.params_mut().clone_from_slice(&best);
    }
    Ok(report)
}

fn finish(
    method: Method,
    data: &TrainData,
    cfg: &TrainConfig,
    seed: u64,
    model: Model,
    stages: Vec<StageReport>,
    start: Instant,
) -> (Model, TrainReport) {
    let report = TrainReport {
        method,
        task: data.task,
        seed,
        config: cfg.clone(),
        stages,
        model_fingerprint: model.fingerprint(),
        wall_clock_secs: start.elapsed().as_secs_f64(),
    };
    (model, report)
}

fn stage1<'a>(cfg: &TrainConfig, input: InputMode, sup: &'a SupervisionSet, name: &'static str) -> StageSpec<'a> {
    StageSpec {
        name,
        tag: 1,
        cfg: cfg.stage1,
        input,
        sup,
        clean_sup: sup,
    }
}

fn stage2<'a>(cfg: &TrainConfig, input: InputMode, sup: &'a SupervisionSet) -> StageSpec<'a> {
    StageSpec {
        name: "stage2",
        tag: 2,
        cfg: cfg.stage2,
        input,
        sup,
        clean_sup: sup,
    }
}

/// Conventional training on the clean graph.
pub fn train_base(
    mut model: Model,
    data: &TrainData,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(Model, TrainReport), TrainError> {
    cfg.validate()?;
    let start = Instant::now();
    let s = run_stage(
        &mut model,
        data,
        cfg,
        &stage1(cfg, InputMode::Clean, &data.supervision, "stage1"),
        seed,
    )?;
    Ok(finish(Method::Base, data, cfg, seed, model, vec![s], start))
}

/// Adds the argmax prediction on `graph` for every node of `unlabeled` with
/// at least one edge. Existing labels are kept as they are.
pub fn pseudo_label(
    model: &Model,
    graph: &Graph,
    supervision: &SupervisionSet,
    unlabeled: &[usize],
) -> Result<SupervisionSet, TrainError> {
    if !matches!(supervision, SupervisionSet::Classification { .. }) {
        return Err(TrainError::PseudoForRanking);
    }
    let pred = model.classify(graph)?.argmax_rows();
    let labeled: HashSet<usize> = supervision.labels().iter().map(|l| l.node).collect();
    let mut out = supervision.clone();
    for &n in unlabeled {
        if graph.degree(n)? > 0 && !labeled.contains(&n) {
            out.push_label(n, pred[n], true)?;
        }
    }
    Ok(out)
}

fn augmented(model: &Model, data: &TrainData) -> Result<SupervisionSet, TrainError> {
    match data.task {
        Task::NodeClassification => pseudo_label(model, &data.graph, &data.supervision, &data.unlabeled),
        _ => Ok(data.supervision.clone()),
    }
}

/// Stage 1 on the clean graph, then stage 2 on freshly dropped graphs
/// every update, supervised by true plus pseudo-labels (classification) or
/// the original training edges (ranking).
pub fn tuneup(
    model: Model,
    data: &TrainData,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(Model, TrainReport), TrainError> {
    run_ablation(Method::Tuneup, model, data, cfg, seed)
}

/// Runs `method` from the initial `model`.
pub fn run_ablation(
    method: Method,
    mut model: Model,
    data: &TrainData,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(Model, TrainReport), TrainError> {
    cfg.validate()?;
    let start = Instant::now();
    let sup = &data.supervision;
    let stages = match method {
        Method::Base => return train_base(model, data, cfg, seed),
        Method::Dropedge => {
            vec![run_stage(
                &mut model,
                data,
                cfg,
                &stage1(cfg, InputMode::DropEdge, sup, "single"),
                seed,
            )?]
        }
        Method::Tuneup | Method::NoPseudo | Method::NoSyntails => {
            let s1 = run_stage(
                &mut model,
                data,
                cfg,
                &stage1(cfg, InputMode::Clean, sup, "stage1"),
                seed,
            )?;
            let target = match method {
                Method::NoPseudo => sup.clone(),
                _ => augmented(&model, data)?,
            };
            let input = match method {
                Method::NoSyntails => InputMode::Clean,
                _ => InputMode::DropEdge,
            };
            let s2 = run_stage(&mut model, data, cfg, &stage2(cfg, input, &target), seed)?;
            vec![s1, s2]
        }
        Method::NoCurriculum => {
            // Pseudo-labels come from a separately trained base model; the
            // interleaved run starts again from the same initialization.
            let (base, _) = train_base(model.clone(), data, cfg, seed)?;
            let target = augmented(&base, data)?;
            let spec = StageSpec {
                name: "single",
                tag: 3,
                cfg: StageConfig {
                    epochs: cfg.stage1.epochs + cfg.stage2.epochs,
                    lr: cfg.stage1.lr,
                },
                input: InputMode::CleanPlusDropEdge,
                sup: &target,
                clean_sup: sup,
            };
            vec![run_stage(&mut model, data, cfg, &spec, seed)?]
        }
    };
    Ok(finish(method, data, cfg, seed, model, stages, start))
}

/// Runs `train` for every α of `grid` and keeps the run with the highest
/// final validation metric (earlier α wins ties).
pub fn select_alpha<F>(grid: &[f64], mut train: F) -> Result<(f64, Model, TrainReport), TrainError>
where
    F: FnMut(f64) -> Result<(Model, TrainReport), TrainError>,
{
    let mut best: Option<(f64, Model, TrainReport)> = None;
    for &alpha in grid {
        let (m, r) = train(alpha)?;
        let score = r.best_metric().unwrap_or(f64::NEG_INFINITY);
        if best
            .as_ref()
            .is_none_or(|(_, _, br)| score > br.best_metric().unwrap_or(f64::NEG_INFINITY))
        {
            best = Some((alpha, m, r));
        }
    }
    best.ok_or_else(|| TrainError::InvalidConfig("empty alpha grid".into()))
}
