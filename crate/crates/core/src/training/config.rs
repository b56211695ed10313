use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::losses::Task;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    #[serde(alias = "base-only")]
    Base,
    #[serde(alias = "dropedge-only")]
    Dropedge,
    #[serde(alias = "none")]
    Tuneup,
    NoCurriculum,
    NoPseudo,
    NoSyntails,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Base,
        Method::Dropedge,
        Method::Tuneup,
        Method::NoCurriculum,
        Method::NoPseudo,
        Method::NoSyntails,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Base => "base",
            Method::Dropedge => "dropedge",
            Method::Tuneup => "tuneup",
            Method::NoCurriculum => "no-curriculum",
            Method::NoPseudo => "no-pseudo",
            Method::NoSyntails => "no-syntails",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| format!("unknown method `{s}`"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub epochs: usize,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub stage1: StageConfig,
    pub stage2: StageConfig,
    /// Fraction of edges dropped per update.
    pub alpha: f64,
    pub l2_weight: f64,
    pub eval_interval: usize,
    /// Evaluations without improvement before a stage stops.
    pub patience: usize,
    pub recall_k: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stage1: StageConfig { epochs: 300, lr: 0.01 },
            stage2: StageConfig { epochs: 200, lr: 0.01 },
            alpha: 0.5,
            l2_weight: 0.0,
            eval_interval: 10,
            patience: 10,
            recall_k: 50,
        }
    }
}

impl TrainConfig {
    pub const ALPHA_GRID: [f64; 3] = [0.25, 0.5, 0.75];

    pub fn for_task(task: Task) -> Self {
        match task {
            Task::Recsys => Self {
                stage2: StageConfig { epochs: 200, lr: 1e-4 },
                l2_weight: 1e-4,
                ..Self::default()
            },
            _ => Self::default(),
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if !(0.0..1.0).contains(&self.alpha) {
            return bad(format!("alpha {} outside [0, 1)", self.alpha));
        }
        for (name, s) in [("stage1", self.stage1), ("stage2", self.stage2)] {
            if !(s.lr > 0.0 && s.lr.is_finite()) {
                return bad(format!("{name}.lr must be positive"));
            }
        }
        if self.l2_weight < 0.0 {
            return bad("l2_weight must be nonnegative".into());
        }
        if self.eval_interval == 0 || self.patience == 0 || self.recall_k == 0 {
            return bad("eval_interval, patience and recall_k must be positive".into());
        }
        Ok(())
    }
}
