//! Numerical harness for the tail-node generalization bound.
//!
//! A world is a finite population of labelled points. `T` of them become
//! isolated (zero-degree) test nodes `A`, `R` others become connected
//! (full-degree) nodes `B`, and `m` nodes of `B` form the labelled set `S`.
//! The network is the one-layer form `sign(J X w + b)` with `J = A + I`.
//! Training minimizes the logistic surrogate with Adam; all reported losses
//! are 0-1 losses of the sign readout.

use std::collections::BTreeSet;
use std::f64::consts::E;

use rand::seq::index::sample;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{adam_step, AdamConfig, AdamState};
use crate::matrix::{dot, Matrix};
use crate::rng::{derive_seed, rng_from, stream};

#[derive(Debug, Error, PartialEq)]
pub enum TheoryError {
    #[error("invalid world size: {0}")]
    Size(String),
    #[error("delta must lie in (0, 1), got {0}")]
    Delta(f64),
    #[error("{0} is empty")]
    Empty(&'static str),
    #[error("profile vectors disagree in length")]
    Profile,
    #[error("at least 100 trials are required, got {0}")]
    TooFewTrials(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheoryConfig {
    /// `N`, population size.
    pub population: usize,
    /// `T`, zero-degree nodes.
    pub zero_degree: usize,
    /// `R`, full-degree nodes.
    pub full_degree: usize,
    /// `m`, labelled nodes inside the full-degree group.
    pub labeled: usize,
    pub dim: usize,
    pub delta: f64,
    /// Distance between the two class means.
    pub separation: f64,
    /// Probability of the positive label.
    pub prior: f64,
    /// Partners drawn per full-degree node.
    pub neighbors: usize,
    /// Probability that a partner shares the node's label.
    pub homophily: f64,
    pub epochs: usize,
    pub lr: f64,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        Self {
            population: 10_000,
            zero_degree: 1_000,
            full_degree: 1_000,
            labeled: 100,
            dim: 16,
            delta: 0.1,
            separation: 3.0,
            prior: 0.5,
            neighbors: 10,
            homophily: 1.0,
            epochs: 200,
            lr: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TheoryWorld {
    /// `N x d` population features.
    pub features: Matrix,
    /// Population labels in `{-1, +1}`.
    pub labels: Vec<i8>,
    /// Population indices of the zero-degree nodes.
    pub a: Vec<usize>,
    /// Population indices of the full-degree nodes.
    pub b: Vec<usize>,
    /// Positions into `b` of the labelled nodes.
    pub s: Vec<usize>,
    /// Neighbors of each `b` position, as `b` positions.
    pub b_adjacency: Vec<Vec<usize>>,
    pub delta: f64,
}

impl TheoryWorld {
    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Row of `X` for population index `i` (the node's row once edges are gone).
    pub fn raw_row(&self, i: usize) -> &[f64] {
        self.features.row(i)
    }

    /// Row of `J X` for `b` position `p`.
    pub fn full_row(&self, p: usize) -> Vec<f64> {
        let mut row = self.features.row(self.b[p]).to_vec();
        for &q in &self.b_adjacency[p] {
            for (r, x) in row.iter_mut().zip(self.features.row(self.b[q])) {
                *r += x;
            }
        }
        row
    }

    pub fn b_label(&self, p: usize) -> i8 {
        self.labels[self.b[p]]
    }
}

pub fn sample_world(cfg: &TheoryConfig, seed: u64) -> Result<TheoryWorld, TheoryError> {
    let (n, t, r, m, d) = (cfg.population, cfg.zero_degree, cfg.full_degree, cfg.labeled, cfg.dim);
    if t == 0 || r == 0 || m == 0 || d == 0 {
        return Err(TheoryError::Size("T, R, m and d must be positive".into()));
    }
    if t + r > n {
        return Err(TheoryError::Size(format!("T + R = {} exceeds N = {n}", t + r)));
    }
    if m > r {
        return Err(TheoryError::Size(format!("m = {m} exceeds R = {r}")));
    }
    if !(cfg.delta > 0.0 && cfg.delta < 1.0) {
        return Err(TheoryError::Delta(cfg.delta));
    }
    if !(0.0..=1.0).contains(&cfg.prior) || !(0.0..=1.0).contains(&cfg.homophily) {
        return Err(TheoryError::Size("prior and homophily must lie in [0, 1]".into()));
    }
    let mut rng = rng_from(seed, &[stream::THEORY]);
    // Class means sit at ±separation/2 along the all-ones direction.
    let shift = cfg.separation / 2.0 / (d as f64).sqrt();
    let mut labels = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n {
        let y: i8 = if rng.random_bool(cfg.prior) { 1 } else { -1 };
        labels.push(y);
        for _ in 0..d {
            let z: f64 = StandardNormal.sample(&mut rng);
            data.push(f64::from(y) * shift + z);
        }
    }
    let draw = sample(&mut rng, n, t + r).into_vec();
    let (a, b) = (draw[..t].to_vec(), draw[t..].to_vec());
    let mut s = sample(&mut rng, r, m).into_vec();
    s.sort_unstable();

    let by_label: [Vec<usize>; 2] = [
        (0..r).filter(|&p| labels[b[p]] < 0).collect(),
        (0..r).filter(|&p| labels[b[p]] > 0).collect(),
    ];
    let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); r];
    for p in 0..r {
        let same = &by_label[usize::from(labels[b[p]] > 0)];
        for _ in 0..cfg.neighbors {
            let q = if rng.random_bool(cfg.homophily) {
                same[rng.random_range(0..same.len())]
            } else {
                rng.random_range(0..r)
            };
            if q != p {
                adj[p].insert(q);
                adj[q].insert(p);
            }
        }
    }
    Ok(TheoryWorld {
        features: Matrix::from_vec(n, d, data),
        labels,
        a,
        b,
        s,
        b_adjacency: adj.into_iter().map(|s| s.into_iter().collect()).collect(),
        delta: cfg.delta,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TheoryMethod {
    /// Second stage on `S` with edges dropped.
    M1,
    /// Second stage on `B` with pseudo-labels and edges dropped.
    M2,
    /// Second stage on `B` with pseudo-labels and edges kept.
    M3,
}

impl TheoryMethod {
    pub const ALL: [TheoryMethod; 3] = [TheoryMethod::M1, TheoryMethod::M2, TheoryMethod::M3];
}

/// `sign(<w, row> + b)` with `sign(0) = +1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearSign {
    pub w: Vec<f64>,
    pub b: f64,
}

impl LinearSign {
    pub fn margin(&self, row: &[f64]) -> f64 {
        dot(&self.w, row) + self.b
    }

    pub fn predict(&self, row: &[f64]) -> i8 {
        if self.margin(row) >= 0.0 {
            1
        } else {
            -1
        }
    }

    fn zero_one(&self, row: &[f64], y: i8) -> u8 {
        u8::from(self.predict(row) != y)
    }
}

/// Per-node 0-1 losses of one trained classifier. `b_*` vectors are indexed
/// by `b` position.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossProfile {
    /// `𝓛` on `A` (isolated, so identical to `ℓ`).
    pub a_full: Vec<u8>,
    /// `ℓ` on `B`: edges dropped.
    pub b_drop: Vec<u8>,
    /// `𝓛` on `B`: original graph.
    pub b_full: Vec<u8>,
    /// `ℓ̃` on `B`: pseudo-labels outside `S`, edges dropped.
    pub b_drop_pseudo: Vec<u8>,
    /// `𝓛̃` on `B`: pseudo-labels outside `S`, original graph.
    pub b_full_pseudo: Vec<u8>,
    /// `𝓛₁` on `B`: stage-one model, original graph.
    pub b_stage1: Vec<u8>,
    /// Positions into `B` of the labelled set.
    pub s: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoryRun {
    pub method: TheoryMethod,
    pub classifier: LinearSign,
    pub profile: LossProfile,
    /// Stage-one 0-1 training loss on `S`.
    pub q: f64,
    /// Stage-one logistic loss on `S`.
    pub q_surrogate: f64,
    /// Number of nodes supervising the second stage.
    pub stage2_size: usize,
}

fn logistic(z: f64) -> f64 {
    crate::autodiff::softplus(-z)
}

/// Full-batch Adam on the mean logistic loss; returns the final loss.
fn fit(model: &mut LinearSign, rows: &[Vec<f64>], targets: &[i8], epochs: usize, lr: f64) -> f64 {
    let d = model.w.len();
    let mut params = vec![Matrix::from_vec(d, 1, model.w.clone()), Matrix::scalar(model.b)];
    let mut state = AdamState::new(&params);
    let cfg = AdamConfig {
        lr,
        ..AdamConfig::default()
    };
    let inv = 1.0 / rows.len() as f64;
    for _ in 0..epochs {
        let mut gw = vec![0.0; d];
        let mut gb = 0.0;
        for (row, &y) in rows.iter().zip(targets) {
            let y = f64::from(y);
            let z = y * (dot(params[0].data(), row) + params[1].item());
            // d/dz softplus(-z) = -sigmoid(-z)
            let coef = -y * inv / (1.0 + z.exp());
            for (g, x) in gw.iter_mut().zip(row) {
                *g += coef * x;
            }
            gb += coef;
        }
        let grads = [Matrix::from_vec(d, 1, gw), Matrix::scalar(gb)];
        adam_step(&mut params, &grads, &mut state, &cfg).expect("shapes fixed");
    }
    model.w = params[0].data().to_vec();
    model.b = params[1].item();
    rows.iter()
        .zip(targets)
        .map(|(r, &y)| logistic(f64::from(y) * model.margin(r)))
        .sum::<f64>()
        * inv
}

pub fn train_theory_model(world: &TheoryWorld, method: TheoryMethod, cfg: &TheoryConfig, seed: u64) -> TheoryRun {
    let d = world.dim();
    let r = world.b.len();
    let mut rng = rng_from(seed, &[stream::THEORY, 1]);
    let mut model = LinearSign {
        w: (0..d).map(|_| rng.random_range(-0.01..0.01)).collect(),
        b: 0.0,
    };
    let full: Vec<Vec<f64>> = (0..r).map(|p| world.full_row(p)).collect();
    let raw = |p: usize| world.raw_row(world.b[p]).to_vec();

    let s_rows: Vec<Vec<f64>> = world.s.iter().map(|&p| full[p].clone()).collect();
    let s_labels: Vec<i8> = world.s.iter().map(|&p| world.b_label(p)).collect();
    let q_surrogate = fit(&mut model, &s_rows, &s_labels, cfg.epochs, cfg.lr);
    let stage1 = model.clone();
    let b_stage1: Vec<u8> = (0..r).map(|p| stage1.zero_one(&full[p], world.b_label(p))).collect();
    let q = world.s.iter().map(|&p| f64::from(b_stage1[p])).sum::<f64>() / world.s.len() as f64;

    // Pseudo-labels: stage-one prediction on the original graph, true labels on S.
    let mut target: Vec<i8> = (0..r).map(|p| stage1.predict(&full[p])).collect();
    for &p in &world.s {
        target[p] = world.b_label(p);
    }
    let (rows, labels): (Vec<Vec<f64>>, Vec<i8>) = match method {
        TheoryMethod::M1 => world.s.iter().map(|&p| (raw(p), world.b_label(p))).unzip(),
        TheoryMethod::M2 => (0..r).map(|p| (raw(p), target[p])).unzip(),
        TheoryMethod::M3 => (0..r).map(|p| (full[p].clone(), target[p])).unzip(),
    };
    fit(&mut model, &rows, &labels, cfg.epochs, cfg.lr);

    let profile = LossProfile {
        a_full: world
            .a
            .iter()
            .map(|&i| model.zero_one(world.raw_row(i), world.labels[i]))
            .collect(),
        b_drop: (0..r).map(|p| model.zero_one(&raw(p), world.b_label(p))).collect(),
        b_full: (0..r).map(|p| model.zero_one(&full[p], world.b_label(p))).collect(),
        b_drop_pseudo: (0..r).map(|p| model.zero_one(&raw(p), target[p])).collect(),
        b_full_pseudo: (0..r).map(|p| model.zero_one(&full[p], target[p])).collect(),
        b_stage1,
        s: world.s.clone(),
    };
    TheoryRun {
        method,
        classifier: model,
        profile,
        q,
        q_surrogate,
        stage2_size: rows.len(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gaps {
    pub m1: f64,
    pub m2: f64,
    pub m3: f64,
    /// Mean over `B` of `ℓ - 𝓛`.
    pub tau: f64,
}

impl Gaps {
    pub fn get(&self, method: TheoryMethod) -> f64 {
        match method {
            TheoryMethod::M1 => self.m1,
            TheoryMethod::M2 => self.m2,
            TheoryMethod::M3 => self.m3,
        }
    }
}

fn mean_u8(v: impl ExactSizeIterator<Item = u8>) -> f64 {
    let n = v.len() as f64;
    v.map(f64::from).sum::<f64>() / n
}

pub fn compute_gaps(profile: &LossProfile) -> Result<Gaps, TheoryError> {
    let p = profile;
    if p.a_full.is_empty() {
        return Err(TheoryError::Empty("A"));
    }
    if p.s.is_empty() {
        return Err(TheoryError::Empty("S"));
    }
    let r = p.b_drop.len();
    if r == 0 {
        return Err(TheoryError::Empty("B"));
    }
    if [p.b_full.len(), p.b_drop_pseudo.len(), p.b_full_pseudo.len()]
        .iter()
        .any(|&l| l != r)
        || p.s.iter().any(|&i| i >= r)
    {
        return Err(TheoryError::Profile);
    }
    let test = mean_u8(p.a_full.iter().copied());
    let tau = p
        .b_drop
        .iter()
        .zip(&p.b_full)
        .map(|(&l, &f)| f64::from(l) - f64::from(f))
        .sum::<f64>()
        / r as f64;
    Ok(Gaps {
        m1: test - mean_u8(p.s.iter().map(|&i| p.b_drop[i])),
        m2: test - mean_u8(p.b_drop_pseudo.iter().copied()),
        m3: test - mean_u8(p.b_full_pseudo.iter().copied()),
        tau,
    })
}

/// Method-independent tail `G` of the bound.
pub fn bound_tail(d: usize, delta: f64, r: usize, t: usize) -> f64 {
    let d = d as f64;
    let (r, t) = (r as f64, t as f64);
    (8.0 * d * (16.0 * E * r / delta).ln() / r).sqrt() + ((4.0 / delta).ln() / (2.0 * t)).sqrt()
}

/// Upper bound on `Δ(method)`; `m` is the size of the labelled set.
#[allow(clippy::too_many_arguments)]
pub fn theorem_bound(
    method: TheoryMethod,
    m: usize,
    d: usize,
    delta: f64,
    q: f64,
    tau: f64,
    r: usize,
    t: usize,
) -> Result<f64, TheoryError> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(TheoryError::Delta(delta));
    }
    if m == 0 || r == 0 || t == 0 || d == 0 {
        return Err(TheoryError::Size("m, R, T and d must be positive".into()));
    }
    let log = (16.0 * E * m as f64 / delta).ln();
    let dim_term = if method == TheoryMethod::M1 {
        8.0 * (d as f64 - 1.0) * log
    } else {
        0.0
    };
    let first = ((dim_term + 8.0 * log) / m as f64).sqrt();
    let q_term = if method == TheoryMethod::M1 { 0.0 } else { q };
    let tau_term = if method == TheoryMethod::M3 { tau } else { 0.0 };
    Ok(first + q_term + tau_term + bound_tail(d, delta, r, t))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub q: f64,
    pub q_surrogate: f64,
    pub g: f64,
    /// Per method, in `TheoryMethod::ALL` order.
    pub tau: [f64; 3],
    pub gap: [f64; 3],
    pub bound: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloSummary {
    pub config: TheoryConfig,
    pub seed: u64,
    pub trials: usize,
    /// Two-sigma binomial slack `2 sqrt(δ(1-δ)/trials)`.
    pub slack: f64,
    pub violation_rate: [f64; 3],
    pub mean_gap: [f64; 3],
    pub mean_bound: [f64; 3],
    pub q_zero_trials: usize,
    /// Mean gaps over trials with `Q = 0`.
    pub mean_gap_q_zero: [f64; 3],
}

impl MonteCarloSummary {
    pub fn within_slack(&self) -> bool {
        self.violation_rate.iter().all(|&v| v <= self.config.delta + self.slack)
    }
}

pub fn run_trial(cfg: &TheoryConfig, seed: u64, trial: usize) -> Result<TrialRecord, TheoryError> {
    let tseed = derive_seed(seed, &[stream::THEORY, trial as u64]);
    let world = sample_world(cfg, tseed)?;
    let mut rec = TrialRecord {
        trial,
        q: 0.0,
        q_surrogate: 0.0,
        g: bound_tail(cfg.dim, cfg.delta, world.b.len(), world.a.len()),
        tau: [0.0; 3],
        gap: [0.0; 3],
        bound: [0.0; 3],
    };
    for (k, method) in TheoryMethod::ALL.into_iter().enumerate() {
        let run = train_theory_model(&world, method, cfg, tseed);
        let gaps = compute_gaps(&run.profile)?;
        rec.q = run.q;
        rec.q_surrogate = run.q_surrogate;
        rec.tau[k] = gaps.tau;
        rec.gap[k] = gaps.get(method);
        rec.bound[k] = theorem_bound(
            method,
            world.s.len(),
            cfg.dim,
            cfg.delta,
            run.q,
            gaps.tau,
            world.b.len(),
            world.a.len(),
        )?;
    }
    Ok(rec)
}

/// Runs `trials` independent worlds in parallel; records come back in trial order.
pub fn monte_carlo_validate(
    cfg: &TheoryConfig,
    trials: usize,
    seed: u64,
) -> Result<(Vec<TrialRecord>, MonteCarloSummary), TheoryError> {
    if trials < 100 {
        return Err(TheoryError::TooFewTrials(trials));
    }
    let records = (0..trials)
        .into_par_iter()
        .map(|t| run_trial(cfg, seed, t))
        .collect::<Result<Vec<_>, _>>()?;
    let n = trials as f64;
    let mut summary = MonteCarloSummary {
        config: cfg.clone(),
        seed,
        trials,
        slack: 2.0 * (cfg.delta * (1.0 - cfg.delta) / n).sqrt(),
        violation_rate: [0.0; 3],
        mean_gap: [0.0; 3],
        mean_bound: [0.0; 3],
        q_zero_trials: records.iter().filter(|r| r.q == 0.0).count(),
        mean_gap_q_zero: [0.0; 3],
    };
    for k in 0..3 {
        summary.violation_rate[k] = records.iter().filter(|r| r.gap[k] > r.bound[k]).count() as f64 / n;
        summary.mean_gap[k] = records.iter().map(|r| r.gap[k]).sum::<f64>() / n;
        summary.mean_bound[k] = records.iter().map(|r| r.bound[k]).sum::<f64>() / n;
        if summary.q_zero_trials > 0 {
            summary.mean_gap_q_zero[k] =
                records.iter().filter(|r| r.q == 0.0).map(|r| r.gap[k]).sum::<f64>() / summary.q_zero_trials as f64;
        }
    }
    Ok((records, summary))
}
