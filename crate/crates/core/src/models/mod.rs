//! Encoders (GCN, GraphSAGE mean/max/sum, GAT) and task heads.
//!
//! Parameters live in a flat `Vec<Matrix>` whose order is fixed by
//! [`ModelConfig`]: optional shallow embedding table, then per-layer encoder
//! parameters, then head parameters. The same forward code serves training
//! (parameters as tape leaves) and inference (parameters as constants).

pub mod checkpoint;
mod context;

pub use context::GraphContext;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Var};
use crate::graph::Graph;
use crate::matrix::{dot, Matrix};
use crate::rng::{rng_from, stream};

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("input has {found} feature columns, model expects {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("graph has {found} nodes, shallow embedding table has {expected}")]
    TableSize { expected: usize, found: usize },
    #[error("graph has no features and the model has no embedding table")]
    MissingInput,
    #[error("graph has features but the model was built with an embedding table")]
    UnexpectedTable,
    #[error("node {node} out of range for {num_nodes} nodes")]
    NodeOutOfRange { node: usize, num_nodes: usize },
    #[error("pair ({0}, {1}) does not go from a user to an item")]
    NotCrossing(usize, usize),
    #[error("model head is {actual}, operation needs {wanted}")]
    WrongHead { wanted: &'static str, actual: &'static str },
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderVariant {
    Gcn,
    SageMean,
    SageMax,
    SageSum,
    Gat,
}

impl EncoderVariant {
    pub const ALL: [EncoderVariant; 5] = [
        EncoderVariant::Gcn,
        EncoderVariant::SageMean,
        EncoderVariant::SageMax,
        EncoderVariant::SageSum,
        EncoderVariant::Gat,
    ];
}

fn default_layers() -> usize {
    3
}

fn default_heads() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub variant: EncoderVariant,
    #[serde(default = "default_layers")]
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub input_dim: usize,
    pub output_dim: usize,
    #[serde(default = "default_heads")]
    pub gat_heads: usize,
}

impl EncoderConfig {
    pub fn new(variant: EncoderVariant, input_dim: usize, hidden_dim: usize, output_dim: usize) -> Self {
        Self {
            variant,
            num_layers: 3,
            hidden_dim,
            input_dim,
            output_dim,
            gat_heads: 1,
        }
    }

    fn layer_dims(&self) -> Vec<(usize, usize)> {
        (0..self.num_layers)
            .map(|l| {
                let i = if l == 0 { self.input_dim } else { self.hidden_dim };
                let o = if l + 1 == self.num_layers {
                    self.output_dim
                } else {
                    self.hidden_dim
                };
                (i, o)
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum HeadConfig {
    Classifier {
        num_classes: usize,
    },
    /// Two-layer MLP on `z_s ⊙ z_t` with hidden width = embedding dim.
    LinkMlp,
    InnerProduct,
}

impl HeadConfig {
    fn name(&self) -> &'static str {
        match self {
            HeadConfig::Classifier { .. } => "classifier",
            HeadConfig::LinkMlp => "link-mlp",
            HeadConfig::InnerProduct => "inner-product",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub head: HeadConfig,
    /// Rows of the shallow input embedding table (featureless graphs only);
    /// its width is `encoder.input_dim`.
    #[serde(default)]
    pub shallow_nodes: Option<usize>,
}

impl ModelConfig {
    /// Sizes the input layer from `graph`: feature width, or a shallow table
    /// of width `shallow_dim` when the graph is featureless.
    pub fn for_graph(
        graph: &Graph,
        variant: EncoderVariant,
        hidden_dim: usize,
        output_dim: usize,
        shallow_dim: usize,
        head: HeadConfig,
    ) -> Self {
        let (input_dim, shallow_nodes) = match graph.features() {
            Some(f) => (f.cols(), None),
            None => (shallow_dim, Some(graph.num_nodes())),
        };
        Self {
            encoder: EncoderConfig::new(variant, input_dim, hidden_dim, output_dim),
            head,
            shallow_nodes,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let e = &self.encoder;
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_string()));
        if e.num_layers == 0 {
            return bad("num_layers must be at least 1");
        }
        if e.input_dim == 0 || e.hidden_dim == 0 || e.output_dim == 0 {
            return bad("dimensions must be positive");
        }
        if e.gat_heads != 1 {
            return bad("only single-head attention is supported");
        }
        if let HeadConfig::Classifier { num_classes } = self.head {
            if num_classes < 2 {
                return bad("classifier needs at least 2 classes");
            }
        }
        if self.shallow_nodes == Some(0) {
            return bad("shallow embedding table needs at least one row");
        }
        Ok(())
    }

    /// `(name, rows, cols, is_bias)` for every parameter in storage order.
    pub fn layout(&self) -> Vec<(String, usize, usize, bool)> {
        let mut out = Vec::new();
        if let Some(n) = self.shallow_nodes {
            out.push(("embedding".to_string(), n, self.encoder.input_dim, false));
        }
        for (l, (i, o)) in self.encoder.layer_dims().into_iter().enumerate() {
            let fan_in = match self.encoder.variant {
                EncoderVariant::SageMean | EncoderVariant::SageMax | EncoderVariant::SageSum => 2 * i,
                _ => i,
            };
            out.push((format!("layer{l}.weight"), fan_in, o, false));
            if self.encoder.variant == EncoderVariant::Gat {
                out.push((format!("layer{l}.att_src"), o, 1, false));
                out.push((format!("layer{l}.att_dst"), o, 1, false));
            }
            out.push((format!("layer{l}.bias"), 1, o, true));
        }
        let d = self.encoder.output_dim;
        match self.head {
            HeadConfig::Classifier { num_classes } => {
                out.push(("head.weight".into(), d, num_classes, false));
                out.push(("head.bias".into(), 1, num_classes, true));
            }
            HeadConfig::LinkMlp => {
                out.push(("head.hidden.weight".into(), d, d, false));
                out.push(("head.hidden.bias".into(), 1, d, true));
                out.push(("head.out.weight".into(), d, 1, false));
                out.push(("head.out.bias".into(), 1, 1, true));
            }
            HeadConfig::InnerProduct => {}
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    config: ModelConfig,
    params: Vec<Matrix>,
}

/// Tape handles produced by [`Model::forward`].
pub struct ForwardPass {
    pub params: Vec<Var>,
    pub embeddings: Var,
    /// Per-layer attention coefficients (`gat` only), one entry per position
    /// of the context's segments.
    pub attention: Vec<Var>,
}

fn glorot(rng: &mut crate::rng::Rng, rows: usize, cols: usize) -> Matrix {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-a..=a)).collect())
}

impl Model {
    /// Glorot-uniform weights and zero biases. The embedding table uses the
    /// Glorot range of a square `input_dim` matrix so its scale does not
    /// depend on the node count.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = rng_from(seed, &[stream::INIT]);
        let params = config
            .layout()
            .into_iter()
            .map(|(name, r, c, bias)| {
                if bias {
                    Matrix::zeros(r, c)
                } else if name == "embedding" {
                    let a = (3.0 / c as f64).sqrt();
                    Matrix::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-a..=a)).collect())
                } else {
                    glorot(&mut rng, r, c)
                }
            })
            .collect();
        Ok(Self { config, params })
    }

    /// Replaces all parameters; shapes must match the layout.
    pub fn from_params(config: ModelConfig, params: Vec<Matrix>) -> Result<Self, ModelError> {
        config.validate()?;
        let layout = config.layout();
        if layout.len() != params.len()
            || layout
                .iter()
                .zip(&params)
                .any(|((_, r, c, _), p)| p.shape() != (*r, *c))
        {
            return Err(ModelError::InvalidConfig("parameter shapes do not match layout".into()));
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[Matrix] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Matrix] {
        &mut self.params
    }

    pub fn param_names(&self) -> Vec<String> {
        self.config.layout().into_iter().map(|(n, ..)| n).collect()
    }

    /// Hex SHA-256 over the bit patterns of every parameter.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for p in &self.params {
            for v in p.data() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn zero_params(&mut self) {
        for p in &mut self.params {
            p.fill(0.0);
        }
    }

    fn head_start(&self) -> usize {
        let per_layer = if self.config.encoder.variant == EncoderVariant::Gat {
            4
        } else {
            2
        };
        usize::from(self.config.shallow_nodes.is_some()) + per_layer * self.config.encoder.num_layers
    }

    fn check_input(&self, graph: &Graph) -> Result<(), ModelError> {
        match (graph.features(), self.config.shallow_nodes) {
            (Some(f), None) if f.cols() != self.config.encoder.input_dim => Err(ModelError::Dimension {
                expected: self.config.encoder.input_dim,
                found: f.cols(),
            }),
            (Some(_), None) => Ok(()),
            (Some(_), Some(_)) => Err(ModelError::UnexpectedTable),
            (None, None) => Err(ModelError::MissingInput),
            (None, Some(n)) if n != graph.num_nodes() => Err(ModelError::TableSize {
                expected: n,
                found: graph.num_nodes(),
            }),
            (None, Some(_)) => Ok(()),
        }
    }

    /// Records the encoder on `tape`. With `trainable`, parameters are leaves
    /// that receive gradients; otherwise they are constants.
    pub fn forward<'g>(
        &self,
        tape: &mut Tape<'g>,
        graph: &Graph,
        ctx: &'g GraphContext,
        trainable: bool,
    ) -> Result<ForwardPass, ModelError> {
        let params = self.record_params(tape, trainable);
        self.forward_with(tape, graph, ctx, params)
    }

    /// Puts every parameter on `tape`, as leaves or as constants.
    pub fn record_params(&self, tape: &mut Tape<'_>, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| {
                if trainable {
                    tape.param(p.clone())
                } else {
                    tape.constant(p.clone())
                }
            })
            .collect()
    }

    /// [`Model::forward`] over parameters already on the tape, so several
    /// passes (e.g. on different graphs) can share gradient accumulators.
    pub fn forward_with<'g>(
        &self,
        tape: &mut Tape<'g>,
        graph: &Graph,
        ctx: &'g GraphContext,
        params: Vec<Var>,
    ) -> Result<ForwardPass, ModelError> {
        self.check_input(graph)?;
        if ctx.variant() != self.config.encoder.variant || ctx.num_nodes() != graph.num_nodes() {
            return Err(ModelError::InvalidConfig(
                "graph context built for another graph or variant".into(),
            ));
        }
        assert_eq!(params.len(), self.params.len(), "one tape handle per parameter");
        let mut cursor = 0;
        let mut h = match graph.features() {
            Some(f) => tape.constant(f.clone()),
            None => {
                cursor = 1;
                params[0]
            }
        };
        let mut attention = Vec::new();
        let layers = self.config.encoder.num_layers;
        for l in 0..layers {
            h = match self.config.encoder.variant {
                EncoderVariant::Gcn => {
                    let (w, b) = (params[cursor], params[cursor + 1]);
                    cursor += 2;
                    let adj = ctx.adjacency().expect("gcn context has adjacency");
                    let hw = tape.matmul(h, w)?;
                    let agg = tape.spmm(adj, hw)?;
                    tape.add_bias(agg, b)?
                }
                EncoderVariant::SageMean | EncoderVariant::SageMax | EncoderVariant::SageSum => {
                    let (w, b) = (params[cursor], params[cursor + 1]);
                    cursor += 2;
                    let agg = match self.config.encoder.variant {
                        EncoderVariant::SageMean => tape.spmm(ctx.adjacency().expect("mean adjacency"), h)?,
                        EncoderVariant::SageMax => tape.row_max_pool(ctx.segments().expect("segments"), h)?,
                        _ => tape.row_sum_pool(ctx.segments().expect("segments"), h)?,
                    };
                    let cat = tape.concat_cols(h, agg)?;
                    let out = tape.matmul(cat, w)?;
                    tape.add_bias(out, b)?
                }
                EncoderVariant::Gat => {
                    let (w, a_src, a_dst, b) = (
                        params[cursor],
                        params[cursor + 1],
                        params[cursor + 2],
                        params[cursor + 3],
                    );
                    cursor += 4;
                    let seg = ctx.segments().expect("gat context has segments");
                    let hw = tape.matmul(h, w)?;
                    let s = tape.matmul(hw, a_src)?;
                    let t = tape.matmul(hw, a_dst)?;
                    let s_e = tape.gather_rows(s, &seg.members)?;
                    let t_e = tape.gather_rows(t, ctx.owners())?;
                    let logits = tape.add(s_e, t_e)?;
                    let logits = tape.leaky_relu(logits, 0.2)?;
                    let att = tape.segment_softmax(seg, logits)?;
                    attention.push(att);
                    let agg = tape.edge_aggregate(seg, att, hw)?;
                    tape.add_bias(agg, b)?
                }
            };
            if l + 1 < layers {
                h = tape.relu(h)?;
            }
        }
        debug_assert_eq!(cursor, self.head_start());
        Ok(ForwardPass {
            params,
            embeddings: h,
            attention,
        })
    }

    fn head_params<'a>(&self, fwd: &'a ForwardPass) -> &'a [Var] {
        &fwd.params[self.head_start()..]
    }

    pub fn classify_head(&self, tape: &mut Tape<'_>, fwd: &ForwardPass) -> Result<Var, ModelError> {
        if !matches!(self.config.head, HeadConfig::Classifier { .. }) {
            return Err(ModelError::WrongHead {
                wanted: "classifier",
                actual: self.config.head.name(),
            });
        }
        let hp = self.head_params(fwd);
        let logits = tape.matmul(fwd.embeddings, hp[0])?;
        let logits = tape.add_bias(logits, hp[1])?;
        Ok(tape.log_softmax(logits)?)
    }

    fn check_pairs(&self, num_nodes: usize, pairs: &[(usize, usize)]) -> Result<(), ModelError> {
        for &(s, t) in pairs {
            for node in [s, t] {
                if node >= num_nodes {
                    return Err(ModelError::NodeOutOfRange { node, num_nodes });
                }
            }
        }
        Ok(())
    }

    /// `k x 1` link scores for `pairs`.
    pub fn link_head(
        &self,
        tape: &mut Tape<'_>,
        fwd: &ForwardPass,
        pairs: &[(usize, usize)],
    ) -> Result<Var, ModelError> {
        if self.config.head != HeadConfig::LinkMlp {
            return Err(ModelError::WrongHead {
                wanted: "link-mlp",
                actual: self.config.head.name(),
            });
        }
        self.check_pairs(tape.shape(fwd.embeddings).0, pairs)?;
        let hp = self.head_params(fwd);
        let (src, dst): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
        let zs = tape.gather_rows(fwd.embeddings, &src)?;
        let zt = tape.gather_rows(fwd.embeddings, &dst)?;
        let x = tape.hadamard(zs, zt)?;
        let x = tape.matmul(x, hp[0])?;
        let x = tape.add_bias(x, hp[1])?;
        let x = tape.relu(x)?;
        let x = tape.matmul(x, hp[2])?;
        Ok(tape.add_bias(x, hp[3])?)
    }

    /// `k x 1` inner-product scores for user→item `pairs`.
    pub fn inner_product_head(
        &self,
        tape: &mut Tape<'_>,
        graph: &Graph,
        fwd: &ForwardPass,
        pairs: &[(usize, usize)],
    ) -> Result<Var, ModelError> {
        if self.config.head != HeadConfig::InnerProduct {
            return Err(ModelError::WrongHead {
                wanted: "inner-product",
                actual: self.config.head.name(),
            });
        }
        self.check_pairs(graph.num_nodes(), pairs)?;
        check_crossing(graph, pairs)?;
        let (src, dst): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
        let zu = tape.gather_rows(fwd.embeddings, &src)?;
        let zv = tape.gather_rows(fwd.embeddings, &dst)?;
        let x = tape.hadamard(zu, zv)?;
        Ok(tape.row_sum(x)?)
    }

    /// Final node embeddings.
    pub fn encode(&self, graph: &Graph) -> Result<Matrix, ModelError> {
        let ctx = GraphContext::new(graph, self.config.encoder.variant);
        let mut tape = Tape::new();
        let fwd = self.forward(&mut tape, graph, &ctx, false)?;
        Ok(tape.value(fwd.embeddings).clone())
    }

    /// Per-layer attention coefficients with the segments they belong to.
    pub fn attention(&self, graph: &Graph) -> Result<(GraphContext, Vec<Matrix>), ModelError> {
        let ctx = GraphContext::new(graph, self.config.encoder.variant);
        let att = {
            let mut tape = Tape::new();
            let fwd = self.forward(&mut tape, graph, &ctx, false)?;
            fwd.attention.iter().map(|&a| tape.value(a).clone()).collect()
        };
        Ok((ctx, att))
    }

    /// Class log-probabilities, one row per node.
    pub fn classify(&self, graph: &Graph) -> Result<Matrix, ModelError> {
        let ctx = GraphContext::new(graph, self.config.encoder.variant);
        let mut tape = Tape::new();
        let fwd = self.forward(&mut tape, graph, &ctx, false)?;
        let out = self.classify_head(&mut tape, &fwd)?;
        Ok(tape.value(out).clone())
    }

    pub fn link_score(&self, graph: &Graph, pairs: &[(usize, usize)]) -> Result<Vec<f64>, ModelError> {
        let ctx = GraphContext::new(graph, self.config.encoder.variant);
        let mut tape = Tape::new();
        let fwd = self.forward(&mut tape, graph, &ctx, false)?;
        let out = self.link_head(&mut tape, &fwd, pairs)?;
        Ok(tape.value(out).data().to_vec())
    }

    pub fn recsys_score(&self, graph: &Graph, pairs: &[(usize, usize)]) -> Result<Vec<f64>, ModelError> {
        let ctx = GraphContext::new(graph, self.config.encoder.variant);
        let mut tape = Tape::new();
        let fwd = self.forward(&mut tape, graph, &ctx, false)?;
        let out = self.inner_product_head(&mut tape, graph, &fwd, pairs)?;
        Ok(tape.value(out).data().to_vec())
    }

    /// Scores one pair from precomputed embeddings without a tape. Agrees
    /// with [`Model::link_score`] / [`Model::recsys_score`].
    pub fn pair_score(&self, z: &Matrix, s: usize, t: usize) -> f64 {
        match self.config.head {
            HeadConfig::InnerProduct => dot(z.row(s), z.row(t)),
            HeadConfig::LinkMlp => {
                let hs = self.head_start();
                let (w1, b1, w2, b2) = (
                    &self.params[hs],
                    &self.params[hs + 1],
                    &self.params[hs + 2],
                    &self.params[hs + 3],
                );
                let x: Vec<f64> = z.row(s).iter().zip(z.row(t)).map(|(a, b)| a * b).collect();
                let d = w1.cols();
                let mut out = b2.item();
                for j in 0..d {
                    let mut acc = b1.get(0, j);
                    for (k, xk) in x.iter().enumerate() {
                        acc += xk * w1.get(k, j);
                    }
                    out += acc.max(0.0) * w2.get(j, 0);
                }
                out
            }
            HeadConfig::Classifier { .. } => panic!("classifier model has no pair scorer"),
        }
    }
}

pub fn check_crossing(graph: &Graph, pairs: &[(usize, usize)]) -> Result<(), ModelError> {
    let Some(p) = graph.bipartite() else {
        return Ok(());
    };
    for &(u, v) in pairs {
        if !p.is_user(u) || p.is_user(v) {
            return Err(ModelError::NotCrossing(u, v));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests;
