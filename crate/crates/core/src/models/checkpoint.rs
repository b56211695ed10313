//! JSON checkpoint container.
//!
//! ```text
//! { "format": "tuneup-model", "version": 1,
//!   "config": <ModelConfig>,
//!   "params": [ { "name": "layer0.weight", "rows": r, "cols": c, "data": [..] }, .. ] }
//! ```
//!
//! `data` is row-major. Floats are written with shortest round-trip
//! formatting, so save → load reproduces every `f64` bit for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Model, ModelConfig, ModelError};
use crate::matrix::Matrix;

pub const FORMAT: &str = "tuneup-model";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported checkpoint {format} v{version}")]
    Unsupported { format: String, version: u32 },
    #[error("checkpoint parameter {0} does not match the model layout")]
    Layout(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Serialize, Deserialize)]
struct StoredParam {
    name: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Stored {
    format: String,
    version: u32,
    config: ModelConfig,
    params: Vec<StoredParam>,
}

pub fn to_json(model: &Model) -> String {
    let stored = Stored {
        format: FORMAT.into(),
        version: VERSION,
        config: model.config().clone(),
        params: model
            .param_names()
            .into_iter()
            .zip(model.params())
            .map(|(name, p)| StoredParam {
                name,
                rows: p.rows(),
                cols: p.cols(),
                data: p.data().to_vec(),
            })
            .collect(),
    };
    serde_json::to_string(&stored).expect("checkpoint serializes")
}

pub fn from_json(text: &str) -> Result<Model, CheckpointError> {
    let stored: Stored = serde_json::from_str(text)?;
    if stored.format != FORMAT || stored.version != VERSION {
        return Err(CheckpointError::Unsupported {
            format: stored.format,
            version: stored.version,
        });
    }
    let layout = stored.config.layout();
    if layout.len() != stored.params.len() {
        return Err(CheckpointError::Layout(format!(
            "expected {} tensors, found {}",
            layout.len(),
            stored.params.len()
        )));
    }
    let mut params = Vec::with_capacity(layout.len());
    for ((name, r, c, _), p) in layout.into_iter().zip(stored.params) {
        if p.name != name || p.rows != r || p.cols != c || p.data.len() != r * c {
            return Err(CheckpointError::Layout(p.name));
        }
        params.push(Matrix::from_vec(r, c, p.data));
    }
    Ok(Model::from_params(stored.config, params)?)
}

pub fn save(model: &Model, path: &Path) -> Result<(), CheckpointError> {
    std::fs::write(path, to_json(model))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Model, CheckpointError> {
    from_json(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{EncoderConfig, EncoderVariant, HeadConfig};

    #[test]
    fn round_trip_is_bit_exact() {
        let cfg = ModelConfig {
            encoder: EncoderConfig::new(EncoderVariant::Gat, 3, 5, 4),
            head: HeadConfig::LinkMlp,
            shallow_nodes: None,
        };
        let mut model = Model::new(cfg, 9).unwrap();
        model.params_mut()[0].data_mut()[0] = 0.1 + 0.2;
        model.params_mut()[1].data_mut()[0] = f64::MIN_POSITIVE / 3.0;
        let back = from_json(&to_json(&model)).unwrap();
        for (a, b) in model.params().iter().zip(back.params()) {
            let bits = |m: &Matrix| m.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
        assert_eq!(model, back);
    }

    #[test]
    fn rejects_other_format_and_bad_layout() {
        let cfg = ModelConfig {
            encoder: EncoderConfig::new(EncoderVariant::Gcn, 2, 2, 2),
            head: HeadConfig::Classifier { num_classes: 2 },
            shallow_nodes: None,
        };
        let json = to_json(&Model::new(cfg, 1).unwrap());
        let other = json.replace(FORMAT, "something-else");
        assert!(matches!(from_json(&other), Err(CheckpointError::Unsupported { .. })));
        let bad = json.replace("\"rows\":2", "\"rows\":3");
        assert!(matches!(from_json(&bad), Err(CheckpointError::Layout(_))));
    }
}
