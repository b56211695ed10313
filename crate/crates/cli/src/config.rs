//! Experiment configuration: one JSON document per experiment.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tuneup::data::{Setting, SplitConfig};
use tuneup::graph::{BipartiteConfig, ScaleFreeConfig};
use tuneup::losses::Task;
use tuneup::models::EncoderVariant;
use tuneup::theory::TheoryConfig;
use tuneup::training::{Method, TrainConfig};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetSource {
    ScaleFree(ScaleFreeConfig),
    Bipartite(BipartiteConfig),
    /// Paths are resolved relative to the config file.
    Files {
        edges: PathBuf,
        #[serde(default)]
        features: Option<PathBuf>,
        #[serde(default)]
        labels: Option<PathBuf>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub encoder: EncoderVariant,
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    pub gat_heads: usize,
    /// Width of the learned embedding table for featureless graphs.
    pub shallow_dim: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            encoder: EncoderVariant::SageMean,
            num_layers: 3,
            hidden_dim: 32,
            output_dim: 32,
            gat_heads: 1,
            shallow_dim: 32,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheorySection {
    pub world: TheoryConfig,
    pub trials: usize,
}

impl Default for TheorySection {
    fn default() -> Self {
        Self {
            world: TheoryConfig::default(),
            trials: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    pub dataset: DatasetSource,
    #[serde(default)]
    pub model: ModelSection,
    /// Defaults to the task's training defaults.
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    /// Defaults to every setting the split supports.
    #[serde(default)]
    pub settings: Option<Vec<Setting>>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub theory: TheorySection,
}

fn default_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_out() -> PathBuf {
    PathBuf::from("runs")
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            CliError::Config(format!("at `{path}`: {}", e.into_inner()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path` and resolves dataset file paths against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|_| CliError::MissingInput(path.to_path_buf()))?;
        let mut cfg = Self::from_json(&text)?;
        if let DatasetSource::Files {
            edges,
            features,
            labels,
        } = &mut cfg.dataset
        {
            let base = path.parent().unwrap_or(Path::new(""));
            *edges = base.join(&*edges);
            for p in [features, labels].into_iter().flatten() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn train_config(&self) -> TrainConfig {
        self.train.clone().unwrap_or_else(|| TrainConfig::for_task(self.task))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Config(m.to_string()));
        if self.methods.is_empty() {
            return bad("methods must be nonempty");
        }
        if self.seeds.is_empty() {
            return bad("seeds must be nonempty");
        }
        match (&self.dataset, self.task) {
            (DatasetSource::Bipartite(_), Task::Recsys)
            | (DatasetSource::ScaleFree(_), Task::NodeClassification | Task::LinkPrediction) => {}
            (DatasetSource::Files { labels, .. }, Task::NodeClassification) if labels.is_none() => {
                return bad("node classification from files needs `labels`");
            }
            (DatasetSource::Files { .. }, _) => {}
            _ => return bad("dataset kind does not fit the task"),
        }
        self.train_config()
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))
    }

    /// The config with `seeds` and `out` cleared: what a run hash names.
    pub fn canonical(&self) -> ExperimentConfig {
        let mut c = self.clone();
        c.seeds.clear();
        c.out = PathBuf::new();
        c
    }

    /// First 16 hex digits of SHA-256 over the canonical config, so runs over
    /// different seeds or output roots aggregate under one hash.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(&self.canonical()).expect("config serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))[..16].to_string()
    }
}
