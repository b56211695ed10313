use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tuneup::data::{load_dataset, Setting, SplitBundle};
use tuneup::eval::{evaluate_setting, MetricReport};
use tuneup::graph::io::{write_edge_list, write_features, write_labels};
use tuneup::graph::{generate_bipartite, generate_scale_free, Graph, LabelSet};
use tuneup::losses::Task;
use tuneup::models::{checkpoint, HeadConfig, Model, ModelConfig};
use tuneup::theory::{monte_carlo_validate, MonteCarloSummary, TrialRecord};
use tuneup::training::{run_ablation, Method, TrainData, TrainReport};

use crate::config::{DatasetSource, ExperimentConfig};
use crate::{run_err, CliError};

/// Flag overrides applied on top of the config file.
#[derive(Clone, Debug, Default)]
pub struct Options {
    pub seeds: Option<Vec<u64>>,
    pub out: Option<PathBuf>,
    pub csv: bool,
}

#[derive(Clone, Debug)]
pub struct RunContext {
    pub config: ExperimentConfig,
    pub hash: String,
    /// `<out>/<hash>`.
    pub root: PathBuf,
    pub csv: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GenerateOutput {
    pub config_hash: String,
    pub seed: u64,
    pub num_nodes: usize,
    pub num_edges: usize,
    pub graph_fingerprint: String,
    pub features: bool,
    pub labels: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SplitOutput {
    pub config_hash: String,
    pub seed: u64,
    pub bundle: SplitBundle,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TrainOutput {
    pub config_hash: String,
    pub seed: u64,
    pub method: Method,
    pub report: TrainReport,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EvalOutput {
    pub config_hash: String,
    pub seed: u64,
    pub method: Method,
    pub reports: Vec<MetricReport>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TheoryOutput {
    pub config_hash: String,
    pub seed: u64,
    pub summary: MonteCarloSummary,
}

const EDGES: &str = "dataset.edges";
const FEATURES: &str = "dataset.features";
const LABELS: &str = "dataset.labels";

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(run_err)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| run_err(format!("{}: {e}", path.display())))
}

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|_| CliError::MissingInput(path.to_path_buf()))?;
    serde_json::from_str(&text).map_err(|e| run_err(format!("{}: {e}", path.display())))
}

fn check_hash(path: &Path, found: &str, expected: &str) -> Result<(), CliError> {
    if found != expected {
        return Err(CliError::Config(format!(
            "{} was produced by config {found}, expected {expected}",
            path.display()
        )));
    }
    Ok(())
}

impl RunContext {
    pub fn new(mut config: ExperimentConfig, opts: &Options) -> Result<Self, CliError> {
        if let Some(s) = &opts.seeds {
            config.seeds = s.clone();
        }
        if let Some(o) = &opts.out {
            config.out = o.clone();
        }
        config.validate()?;
        let hash = config.hash();
        let root = config.out.join(&hash);
        Ok(Self {
            config,
            hash,
            root,
            csv: opts.csv,
        })
    }

    pub fn seed_dir(&self, seed: u64) -> PathBuf {
        self.root.join(seed.to_string())
    }

    fn ensure_seed_dir(&self, seed: u64) -> Result<PathBuf, CliError> {
        let dir = self.seed_dir(seed);
        fs::create_dir_all(&dir).map_err(|e| run_err(format!("{}: {e}", dir.display())))?;
        // The hashed config sits next to the seed directories for reference.
        write_json(&self.root.join("config.json"), &self.config.canonical())?;
        Ok(dir)
    }

    pub fn generate(&self) -> Result<(), CliError> {
        self.config
            .seeds
            .par_iter()
            .try_for_each(|&seed| self.generate_seed(seed))
    }

    fn generate_seed(&self, seed: u64) -> Result<(), CliError> {
        let dir = self.ensure_seed_dir(seed)?;
        let (graph, labels) = match &self.config.dataset {
            DatasetSource::ScaleFree(c) => {
                let (g, l) = generate_scale_free(c, seed).map_err(|e| CliError::Config(e.to_string()))?;
                (g, Some(l))
            }
            DatasetSource::Bipartite(c) => (
                generate_bipartite(c, seed).map_err(|e| CliError::Config(e.to_string()))?,
                None,
            ),
            DatasetSource::Files {
                edges,
                features,
                labels,
            } => {
                for p in std::iter::once(edges).chain(features).chain(labels) {
                    if !p.exists() {
                        return Err(CliError::MissingInput(p.clone()));
                    }
                }
                load_dataset(edges, features.as_deref(), labels.as_deref())
                    .map_err(|e| CliError::Config(e.to_string()))?
            }
        };
        write_edge_list(&dir.join(EDGES), &graph).map_err(run_err)?;
        if let Some(f) = graph.features() {
            write_features(&dir.join(FEATURES), f).map_err(run_err)?;
        }
        if let Some(l) = &labels {
            write_labels(&dir.join(LABELS), l).map_err(run_err)?;
        }
        write_json(
            &dir.join("generate.json"),
            &GenerateOutput {
                config_hash: self.hash.clone(),
                seed,
                num_nodes: graph.num_nodes(),
                num_edges: graph.num_edges(),
                graph_fingerprint: graph.fingerprint(),
                features: graph.features().is_some(),
                labels: labels.is_some(),
            },
        )
    }

    /// Dataset written by `generate` for `seed`.
    pub fn dataset(&self, seed: u64) -> Result<(Graph, Option<LabelSet>), CliError> {
        let dir = self.seed_dir(seed);
        let manifest_path = dir.join("generate.json");
        let manifest: GenerateOutput = read_json(&manifest_path)?;
        check_hash(&manifest_path, &manifest.config_hash, &self.hash)?;
        let features = manifest.features.then(|| dir.join(FEATURES));
        let labels = manifest.labels.then(|| dir.join(LABELS));
        let (graph, labels) =
            load_dataset(&dir.join(EDGES), features.as_deref(), labels.as_deref()).map_err(run_err)?;
        if graph.fingerprint() != manifest.graph_fingerprint {
            return Err(run_err(format!(
                "{} does not match its manifest",
                dir.join(EDGES).display()
            )));
        }
        Ok((graph, labels))
    }

    pub fn split(&self) -> Result<(), CliError> {
        self.config.seeds.par_iter().try_for_each(|&seed| {
            let (graph, _) = self.dataset(seed)?;
            let bundle = SplitBundle::build(self.config.task, &graph, &self.config.split, seed)
                .map_err(|e| CliError::Config(e.to_string()))?;
            write_json(
                &self.seed_dir(seed).join("split.json"),
                &SplitOutput {
                    config_hash: self.hash.clone(),
                    seed,
                    bundle,
                },
            )
        })
    }

    /// Relabeled graph, relabeled labels and the split for `seed`.
    pub fn prepared(&self, seed: u64) -> Result<(SplitBundle, Graph, Option<LabelSet>), CliError> {
        let (graph, labels) = self.dataset(seed)?;
        let path = self.seed_dir(seed).join("split.json");
        let split: SplitOutput = read_json(&path)?;
        check_hash(&path, &split.config_hash, &self.hash)?;
        let bundle = split.bundle;
        let rg = bundle.relabel(&graph).map_err(run_err)?;
        let rl = labels.map(|l| bundle.relabel_labels(&l)).transpose().map_err(run_err)?;
        Ok((bundle, rg, rl))
    }

    pub fn model_config(&self, graph: &Graph, labels: Option<&LabelSet>) -> Result<ModelConfig, CliError> {
        let m = &self.config.model;
        let head = match self.config.task {
            Task::NodeClassification => HeadConfig::Classifier {
                num_classes: labels
                    .ok_or_else(|| CliError::Config("classification needs labels".into()))?
                    .num_classes,
            },
            Task::LinkPrediction => HeadConfig::LinkMlp,
            Task::Recsys => HeadConfig::InnerProduct,
        };
        let mut cfg = ModelConfig::for_graph(graph, m.encoder, m.hidden_dim, m.output_dim, m.shallow_dim, head);
        cfg.encoder.num_layers = m.num_layers;
        cfg.encoder.gat_heads = m.gat_heads;
        cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    fn jobs(&self) -> Vec<(u64, Method)> {
        self.config
            .seeds
            .iter()
            .flat_map(|&s| self.config.methods.iter().map(move |&m| (s, m)))
            .collect()
    }

    /// Trains every (seed, method) pair. Pairs whose report already exists
    /// under this config hash are skipped, so interrupted runs resume.
    pub fn train(&self) -> Result<(), CliError> {
        self.jobs().par_iter().try_for_each(|&(seed, method)| {
            let dir = self.seed_dir(seed);
            let report_path = dir.join(format!("train-{method}.json"));
            let ckpt_path = dir.join(format!("model-{method}.json"));
            if ckpt_path.exists() {
                if let Ok(prev) = read_json::<TrainOutput>(&report_path) {
                    if prev.config_hash == self.hash {
                        return Ok(());
                    }
                }
            }
            let (bundle, rg, rl) = self.prepared(seed)?;
            let cfg = self.config.train_config();
            let data = TrainData::from_bundle(&bundle, &rg, rl.as_ref(), cfg.recall_k).map_err(run_err)?;
            let model = Model::new(self.model_config(&rg, rl.as_ref())?, seed).map_err(run_err)?;
            let (model, report) = run_ablation(method, model, &data, &cfg, seed).map_err(run_err)?;
            checkpoint::save(&model, &ckpt_path).map_err(run_err)?;
            write_json(
                &report_path,
                &TrainOutput {
                    config_hash: self.hash.clone(),
                    seed,
                    method,
                    report,
                },
            )
        })
    }

    pub fn settings(&self, bundle: &SplitBundle) -> Vec<Setting> {
        self.config.settings.clone().unwrap_or_else(|| bundle.settings())
    }

    pub fn eval(&self) -> Result<(), CliError> {
        self.jobs().par_iter().try_for_each(|&(seed, method)| {
            let dir = self.seed_dir(seed);
            let train_path = dir.join(format!("train-{method}.json"));
            let trained: TrainOutput = read_json(&train_path)?;
            check_hash(&train_path, &trained.config_hash, &self.hash)?;
            let ckpt = dir.join(format!("model-{method}.json"));
            if !ckpt.exists() {
                return Err(CliError::MissingInput(ckpt));
            }
            let model = checkpoint::load(&ckpt).map_err(run_err)?;
            let (bundle, rg, rl) = self.prepared(seed)?;
            let k = self.config.train_config().recall_k;
            let reports = self
                .settings(&bundle)
                .into_iter()
                .map(|s| evaluate_setting(&model, &bundle, &rg, rl.as_ref(), s, k).map_err(run_err))
                .collect::<Result<Vec<_>, _>>()?;
            if self.csv {
                for r in &reports {
                    fs::write(dir.join(format!("eval-{method}-{}.csv", r.setting)), r.to_csv()).map_err(run_err)?;
                }
            }
            write_json(
                &dir.join(format!("eval-{method}.json")),
                &EvalOutput {
                    config_hash: self.hash.clone(),
                    seed,
                    method,
                    reports,
                },
            )
        })
    }

    pub fn theory(&self) -> Result<(), CliError> {
        let t = &self.config.theory;
        for &seed in &self.config.seeds {
            let dir = self.ensure_seed_dir(seed)?;
            let (records, summary) =
                monte_carlo_validate(&t.world, t.trials, seed).map_err(|e| CliError::Config(e.to_string()))?;
            fs::write(dir.join("theory.csv"), trial_csv(&records)).map_err(run_err)?;
            write_json(
                &dir.join("theory.json"),
                &TheoryOutput {
                    config_hash: self.hash.clone(),
                    seed,
                    summary,
                },
            )?;
        }
        Ok(())
    }
}

pub fn trial_csv(records: &[TrialRecord]) -> String {
    let mut out =
        String::from("trial,q,q_surrogate,g,gap_m1,gap_m2,gap_m3,bound_m1,bound_m2,bound_m3,tau_m1,tau_m2,tau_m3\n");
    for r in records {
        let cols: Vec<String> = [r.q, r.q_surrogate, r.g]
            .into_iter()
            .chain(r.gap)
            .chain(r.bound)
            .chain(r.tau)
            .map(|v| v.to_string())
            .collect();
        out.push_str(&format!("{},{}\n", r.trial, cols.join(",")));
    }
    out
}
