//! Synthetic graphs with planted structure.
//!
//! [`generate_scale_free`] grows a preferential-attachment graph whose
//! attachments favor same-community nodes, with Gaussian features centered on
//! a per-community mean. [`generate_bipartite`] draws user degrees from a
//! truncated power law and routes most interactions into a planted cluster.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{floor_fraction, Bipartite, Graph, GraphError, LabelSet};
use crate::matrix::Matrix;
use crate::rng::{rng_from, stream, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScaleFreeConfig {
    pub num_nodes: usize,
    pub m_attach: usize,
    pub feat_dim: usize,
    pub num_classes: usize,
    pub label_noise: f64,
    /// Probability that an attachment targets the new node's own community.
    pub homophily: f64,
    /// Expected distance between community feature means.
    pub separation: f64,
    /// Per-dimension standard deviation of feature noise.
    pub feature_noise: f64,
}

impl Default for ScaleFreeConfig {
    fn default() -> Self {
        Self {
            num_nodes: 2000,
            m_attach: 2,
            feat_dim: 16,
            num_classes: 2,
            label_noise: 0.0,
            homophily: 0.9,
            separation: 1.5,
            feature_noise: 1.0,
        }
    }
}

/// Weighted draw over `candidates` (weights parallel to it).
fn weighted_pick(rng: &mut Rng, candidates: &[usize], weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut x = rng.random::<f64>() * total;
    for (&c, &w) in candidates.iter().zip(weights) {
        if x < w {
            return c;
        }
        x -= w;
    }
    *candidates.last().expect("nonempty candidates")
}

pub fn generate_scale_free(config: &ScaleFreeConfig, seed: u64) -> Result<(Graph, LabelSet), GraphError> {
    let ScaleFreeConfig {
        num_nodes: n,
        m_attach: m,
        feat_dim,
        num_classes,
        ..
    } = *config;
    if m < 1 || n <= m {
        return Err(GraphError::InvalidParameters(format!(
            "need num_nodes > m_attach >= 1, got num_nodes={n}, m_attach={m}"
        )));
    }
    if num_classes < 1 || feat_dim < 1 {
        return Err(GraphError::InvalidParameters(
            "num_classes and feat_dim must be positive".into(),
        ));
    }
    for (name, v) in [("label_noise", config.label_noise), ("homophily", config.homophily)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(GraphError::InvalidParameters(format!("{name}={v} outside [0, 1]")));
        }
    }
    if config.feature_noise < 0.0 || config.separation < 0.0 {
        return Err(GraphError::InvalidParameters(
            "separation and feature_noise must be nonnegative".into(),
        ));
    }
    let mut rng = rng_from(seed, &[stream::GENERATE, 0]);
    let community: Vec<usize> = (0..n).map(|_| rng.random_range(0..num_classes)).collect();

    let mut degree = vec![0usize; n];
    let mut edges = Vec::with_capacity(m * (n - m));
    let mut chosen = Vec::with_capacity(m);
    for t in m..n {
        chosen.clear();
        while chosen.len() < m {
            let same = rng.random::<f64>() < config.homophily;
            let pool: Vec<usize> = (0..t)
                .filter(|&j| !chosen.contains(&j))
                .filter(|&j| num_classes == 1 || (community[j] == community[t]) == same)
                .collect();
            // Fall back to any unchosen node when the preferred side is empty.
            let pool = if pool.is_empty() {
                (0..t).filter(|j| !chosen.contains(j)).collect()
            } else {
                pool
            };
            let weights: Vec<f64> = pool.iter().map(|&j| (degree[j] + 1) as f64).collect();
            chosen.push(weighted_pick(&mut rng, &pool, &weights));
        }
        for &j in &chosen {
            edges.push((j, t));
            degree[j] += 1;
            degree[t] += 1;
        }
    }

    // Community means: random directions scaled so that the expected distance
    // between two means is `separation`.
    let scale = config.separation / (2.0 * feat_dim as f64).sqrt();
    let means: Vec<Vec<f64>> = (0..num_classes)
        .map(|_| {
            (0..feat_dim)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z * scale
                })
                .collect()
        })
        .collect();
    let noise =
        Normal::new(0.0, config.feature_noise.max(0.0)).map_err(|e| GraphError::InvalidParameters(e.to_string()))?;
    let mut features = Matrix::zeros(n, feat_dim);
    for v in 0..n {
        let mu = &means[community[v]];
        for (x, &m) in features.row_mut(v).iter_mut().zip(mu) {
            *x = m + noise.sample(&mut rng);
        }
    }

    let mut labels = community;
    let flips = floor_fraction(config.label_noise, n);
    if num_classes > 1 && flips > 0 {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        for &v in &order[..flips] {
            let shift = rng.random_range(1..num_classes);
            labels[v] = (labels[v] + shift) % num_classes;
        }
    }
    let graph = Graph::build(&edges, n, Some(features), None)?;
    Ok((graph, LabelSet::new(labels, num_classes)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BipartiteConfig {
    pub num_users: usize,
    pub num_items: usize,
    pub min_degree: usize,
    pub max_degree: usize,
    /// Exponent γ of `P(k) ∝ k^-γ` on `min_degree..=max_degree`.
    pub exponent: f64,
    pub num_clusters: usize,
    /// Probability that an interaction stays inside the user's cluster.
    pub in_cluster: f64,
    /// Item popularity skew: weight `(1 + rank)^-popularity`.
    pub popularity: f64,
    pub latent_noise: f64,
}

impl Default for BipartiteConfig {
    fn default() -> Self {
        Self {
            num_users: 800,
            num_items: 1000,
            min_degree: 5,
            max_degree: 200,
            exponent: 2.0,
            num_clusters: 8,
            in_cluster: 0.9,
            popularity: 0.5,
            latent_noise: 0.1,
        }
    }
}

/// Planted latent vectors (one row per user / item).
#[derive(Clone, Debug, PartialEq)]
pub struct PlantedLatents {
    pub users: Matrix,
    pub items: Matrix,
}

pub fn generate_bipartite(config: &BipartiteConfig, seed: u64) -> Result<Graph, GraphError> {
    generate_bipartite_with_latents(config, seed).map(|(g, _)| g)
}

pub fn generate_bipartite_with_latents(
    config: &BipartiteConfig,
    seed: u64,
) -> Result<(Graph, PlantedLatents), GraphError> {
    let c = config;
    if c.num_users == 0 || c.num_items == 0 {
        return Err(GraphError::InvalidParameters(
            "num_users and num_items must be positive".into(),
        ));
    }
    if c.min_degree == 0 || c.min_degree > c.max_degree || c.num_clusters == 0 {
        return Err(GraphError::InvalidParameters(format!(
            "need 1 <= min_degree <= max_degree and num_clusters >= 1, got {}..={} / {}",
            c.min_degree, c.max_degree, c.num_clusters
        )));
    }
    if !(0.0..=1.0).contains(&c.in_cluster) || c.latent_noise < 0.0 {
        return Err(GraphError::InvalidParameters(
            "in_cluster must lie in [0, 1] and latent_noise >= 0".into(),
        ));
    }
    let mut rng = rng_from(seed, &[stream::GENERATE, 1]);
    let user_cluster: Vec<usize> = (0..c.num_users).map(|_| rng.random_range(0..c.num_clusters)).collect();
    let item_cluster: Vec<usize> = (0..c.num_items).map(|_| rng.random_range(0..c.num_clusters)).collect();
    let mut rank: Vec<usize> = (0..c.num_items).collect();
    rank.shuffle(&mut rng);
    let popularity: Vec<f64> = rank.iter().map(|&r| (1.0 + r as f64).powf(-c.popularity)).collect();

    let degrees: Vec<usize> = (c.min_degree..=c.max_degree).collect();
    let degree_weights: Vec<f64> = degrees.iter().map(|&k| (k as f64).powf(-c.exponent)).collect();
    let all_items: Vec<usize> = (0..c.num_items).collect();
    let by_cluster: Vec<Vec<usize>> = (0..c.num_clusters)
        .map(|k| all_items.iter().copied().filter(|&j| item_cluster[j] == k).collect())
        .collect();

    let mut edges = Vec::new();
    let mut taken = vec![false; c.num_items];
    for u in 0..c.num_users {
        let k = weighted_pick(&mut rng, &degrees, &degree_weights).min(c.num_items);
        let mut picked = Vec::with_capacity(k);
        while picked.len() < k {
            let inside = rng.random::<f64>() < c.in_cluster;
            let own = &by_cluster[user_cluster[u]];
            let base: &[usize] = if inside && !own.is_empty() { own } else { &all_items };
            let pool: Vec<usize> = base.iter().copied().filter(|&j| !taken[j]).collect();
            let pool = if pool.is_empty() {
                all_items.iter().copied().filter(|&j| !taken[j]).collect()
            } else {
                pool
            };
            let w: Vec<f64> = pool.iter().map(|&j| popularity[j]).collect();
            let j = weighted_pick(&mut rng, &pool, &w);
            taken[j] = true;
            picked.push(j);
        }
        for &j in &picked {
            taken[j] = false;
            edges.push((u, c.num_users + j));
        }
    }

    let noise = Normal::new(0.0, c.latent_noise).map_err(|e| GraphError::InvalidParameters(e.to_string()))?;
    let mut latent = |clusters: &[usize]| {
        let mut m = Matrix::zeros(clusters.len(), c.num_clusters);
        for (i, &k) in clusters.iter().enumerate() {
            for (d, x) in m.row_mut(i).iter_mut().enumerate() {
                *x = if d == k { 1.0 } else { 0.0 } + noise.sample(&mut rng);
            }
        }
        m
    };
    let latents = PlantedLatents {
        users: latent(&user_cluster),
        items: latent(&item_cluster),
    };
    let partition = Bipartite {
        num_users: c.num_users,
        num_items: c.num_items,
    };
    let graph = Graph::build(&edges, c.num_users + c.num_items, None, Some(partition))?;
    Ok((graph, latents))
}
