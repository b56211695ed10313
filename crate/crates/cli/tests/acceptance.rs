//! Acceptance suite. Prints one `criterion N PASS|FAIL: ...` line per
//! criterion and exits nonzero if any criterion fails.
//!
//! Runs without the libtest harness so the lines are always visible:
//! `cargo test -p tuneup-cli --test acceptance`. Pass criterion numbers as
//! arguments to run a subset, e.g. `... --test acceptance -- 1 4`.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::Rng as _;
use tuneup::autodiff::gradcheck::check_gradients;
use tuneup::data::{Setting, SplitBundle, SplitConfig};
use tuneup::eval::{evaluate_setting, recall_at_k, recall_per_source, RankingQuery};
use tuneup::graph::{
    generate_bipartite, generate_scale_free, normalize_adjacency, BipartiteConfig, NormalizationMode, ScaleFreeConfig,
};
use tuneup::losses::{bpr_loss, bpr_value, cross_entropy, cross_entropy_value, LabeledNode, Task};
use tuneup::models::{EncoderConfig, EncoderVariant, GraphContext, HeadConfig, Model, ModelConfig};
use tuneup::rng::rng_from;
use tuneup::theory::{monte_carlo_validate, theorem_bound, TheoryConfig, TheoryMethod};
use tuneup::training::{run_ablation, Method, TrainConfig, TrainData};
use tuneup::{Bipartite, Graph, Matrix};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn random_edges(rng: &mut tuneup::rng::Rng, n: usize, p: f64) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.random_bool(p) {
                edges.push((u, v));
            }
        }
    }
    edges
}

fn random_features(rng: &mut tuneup::rng::Rng, n: usize, d: usize) -> Matrix {
    Matrix::from_vec(n, d, (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect())
}

// 1. Gradient correctness.

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = rng_from(11, &[1]);
    let n = 10;
    let g = Graph::build(
        &random_edges(&mut rng, n, 0.35),
        n,
        Some(random_features(&mut rng, n, 3)),
        None,
    )
    .unwrap();
    let users = 5;
    let mut bip_edges = Vec::new();
    for u in 0..users {
        for i in users..n {
            if rng.random_bool(0.4) {
                bip_edges.push((u, i));
            }
        }
    }
    let bip = Graph::build(
        &bip_edges,
        n,
        Some(random_features(&mut rng, n, 3)),
        Some(Bipartite {
            num_users: users,
            num_items: n - users,
        }),
    )
    .unwrap();
    let labels: Vec<LabeledNode> = (0..n)
        .map(|v| LabeledNode {
            node: v,
            class: rng.random_range(0..3),
            is_pseudo: false,
        })
        .collect();
    let link_pos = [(0, 1), (2, 5), (3, 9), (4, 7)];
    let link_neg = [(0, 6), (2, 8), (3, 4), (4, 1)];
    let rec_pos = [(0, 5), (1, 7), (2, 9), (4, 6)];
    let rec_neg = [(0, 8), (1, 5), (2, 6), (4, 9)];

    let heads = [
        HeadConfig::Classifier { num_classes: 3 },
        HeadConfig::LinkMlp,
        HeadConfig::InnerProduct,
    ];
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    for variant in EncoderVariant::ALL {
        for head in &heads {
            let graph = if *head == HeadConfig::InnerProduct { &bip } else { &g };
            let mut enc = EncoderConfig::new(variant, 3, 4, 4);
            enc.num_layers = 2;
            let model = Model::new(
                ModelConfig {
                    encoder: enc,
                    head: head.clone(),
                    shallow_nodes: None,
                },
                3,
            )
            .unwrap();
            let ctx = GraphContext::new(graph, variant);
            let report = check_gradients(model.params(), 1e-5, |t, vars| {
                let fwd = model.forward_with(t, graph, &ctx, vars.to_vec()).expect("forward");
                let loss = match head {
                    HeadConfig::Classifier { .. } => {
                        let lp = model.classify_head(t, &fwd).expect("classifier");
                        cross_entropy(t, lp, &labels)
                    }
                    HeadConfig::LinkMlp => {
                        let p = model.link_head(t, &fwd, &link_pos).expect("link head");
                        let q = model.link_head(t, &fwd, &link_neg).expect("link head");
                        bpr_loss(t, p, q)
                    }
                    HeadConfig::InnerProduct => {
                        let p = model
                            .inner_product_head(t, graph, &fwd, &rec_pos)
                            .expect("inner product");
                        let q = model
                            .inner_product_head(t, graph, &fwd, &rec_neg)
                            .expect("inner product");
                        bpr_loss(t, p, q)
                    }
                };
                Ok(loss.expect("loss"))
            })
            .unwrap();
            worst = worst.max(report.max_rel_error);
            if report.max_rel_error >= 1e-4 {
                failures.push(format!("{variant:?}/{head:?}: {:.2e}", report.max_rel_error));
            }
        }
    }
    let elapsed = start.elapsed();
    ensure(
        failures.is_empty(),
        format!("relative error >= 1e-4 for {}", failures.join(", ")),
    )?;
    ensure(elapsed < Duration::from_secs(60), format!("took {elapsed:?}"))?;
    Ok(format!(
        "15 encoder/head pairs, max relative error {worst:.2e}, {:.1}s",
        elapsed.as_secs_f64()
    ))
}

// 2. Normalization oracle.

fn criterion_2() -> Outcome {
    let mut rng = rng_from(12, &[1]);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(1..=200);
        let p = rng.random_range(0.0..0.2);
        let edges = random_edges(&mut rng, n, p);
        let g = Graph::build(&edges, n, None, None).unwrap();
        let mut dense = vec![vec![0.0; n]; n];
        for &(u, v) in &edges {
            dense[u][v] = 1.0;
            dense[v][u] = 1.0;
        }
        for (i, row) in dense.iter_mut().enumerate() {
            row[i] += 1.0;
        }
        let d: Vec<f64> = dense.iter().map(|r| r.iter().sum()).collect();
        let sparse = normalize_adjacency(&g, NormalizationMode::Renormalized).matrix;
        for i in 0..n {
            for j in 0..n {
                let want = dense[i][j] / (d[i].sqrt() * d[j].sqrt());
                worst = worst.max((sparse.get(i, j) - want).abs());
            }
        }
    }
    ensure(worst <= 1e-10, format!("max deviation {worst:.2e}"))?;
    Ok(format!("100 graphs, max deviation {worst:.2e}"))
}

// 3. Ranking oracle.

fn oracle_recall(scores: &[Vec<f64>], q: &RankingQuery, graph: &Graph, k: usize) -> f64 {
    let n = scores.len();
    let mut cands: Vec<usize> = (0..n)
        .filter(|&c| c != q.source && !graph.has_edge(q.source, c))
        .collect();
    cands.sort_by(|&a, &b| {
        scores[q.source][b]
            .partial_cmp(&scores[q.source][a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let top: HashSet<usize> = cands.into_iter().take(k).collect();
    q.positives.iter().filter(|p| top.contains(p)).count() as f64 / q.positives.len() as f64
}

fn criterion_3() -> Outcome {
    let mut rng = rng_from(13, &[1]);
    let mut queries_checked = 0;
    let mut tied_instances = 0;
    for inst in 0..500 {
        let n = rng.random_range(3..=50);
        let g = Graph::build(&random_edges(&mut rng, n, 0.1), n, None, None).unwrap();
        // Coarse scores force ties between candidates.
        let levels = rng.random_range(1..=5);
        let scores: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..n).map(|_| rng.random_range(0..levels) as f64 * 0.25).collect())
            .collect();
        let mut queries = Vec::new();
        for s in 0..n {
            let cands: Vec<usize> = (0..n).filter(|&c| c != s && !g.has_edge(s, c)).collect();
            if cands.is_empty() || !rng.random_bool(0.6) {
                continue;
            }
            let mut positives: Vec<usize> = cands.iter().copied().filter(|_| rng.random_bool(0.3)).collect();
            if positives.is_empty() {
                positives.push(cands[rng.random_range(0..cands.len())]);
            }
            queries.push(RankingQuery { source: s, positives });
        }
        if queries.is_empty() {
            continue;
        }
        if levels < n {
            tied_instances += 1;
        }
        let k = rng.random_range(1..=n);
        let score = |s: usize, c: usize| scores[s][c];
        let per = recall_per_source(score, &queries, 0..n, &g, k).map_err(|e| e.to_string())?;
        let oracle: Vec<f64> = queries.iter().map(|q| oracle_recall(&scores, q, &g, k)).collect();
        ensure(
            per == oracle,
            format!("instance {inst}: per-source recall {per:?} != oracle {oracle:?}"),
        )?;
        let mean = recall_at_k(score, &queries, 0..n, &g, k).map_err(|e| e.to_string())?;
        let want = oracle.iter().sum::<f64>() / oracle.len() as f64;
        ensure(mean == want, format!("instance {inst}: recall {mean} != oracle {want}"))?;
        queries_checked += queries.len();
    }
    Ok(format!(
        "500 instances ({tied_instances} with ties), {queries_checked} queries, exact agreement"
    ))
}

// 4. DropEdge contract.

fn criterion_4() -> Outcome {
    let mut rng = rng_from(14, &[1]);
    for trial in 0..500 {
        let n = rng.random_range(2..=60);
        let g = Graph::build(&random_edges(&mut rng, n, 0.3), n, None, None).unwrap();
        let m = g.num_edges();
        let pct = rng.random_range(0..=100usize);
        let kept = g.drop_edges(pct as f64 / 100.0, trial).map_err(|e| e.to_string())?;
        let want = m - pct * m / 100;
        ensure(
            kept.num_edges() == want,
            format!("alpha {pct}% on {m} edges kept {} not {want}", kept.num_edges()),
        )?;
        ensure(
            kept.edges().iter().all(|&(u, v)| g.has_edge(u, v)),
            "dropped graph gained an edge",
        )?;
    }
    let ring: Vec<(usize, usize)> = (0..10).map(|i| (i, (i + 1) % 10)).collect();
    let g = Graph::build(&ring, 10, None, None).unwrap();
    let seeds = 10_000u64;
    let mut worst = 0.0f64;
    for alpha_tenths in [1usize, 3, 5, 7, 9] {
        let alpha = alpha_tenths as f64 / 10.0;
        let mut kept_counts: BTreeMap<(usize, usize), u64> = BTreeMap::new();
        for seed in 0..seeds {
            let d = g.drop_edges(alpha, seed).map_err(|e| e.to_string())?;
            ensure(
                d.num_edges() == 10 - alpha_tenths,
                format!("alpha {alpha}: kept {}", d.num_edges()),
            )?;
            for &e in d.edges() {
                *kept_counts.entry(e).or_default() += 1;
            }
        }
        for &e in g.edges() {
            let freq = kept_counts.get(&e).copied().unwrap_or(0) as f64 / seeds as f64;
            let dev = (freq - (1.0 - alpha)).abs();
            worst = worst.max(dev);
            ensure(dev <= 0.02, format!("alpha {alpha}: edge {e:?} retained {freq:.4}"))?;
        }
    }
    Ok(format!(
        "exact counts on 500 random graphs; retention within {worst:.4} of 1-alpha over 10000 seeds"
    ))
}

// 5. Split contracts.

/// Owner of a new-node edge: its new endpoint, or the lower id when both are new.
fn owner(e: (usize, usize), first_new: usize) -> usize {
    let (u, v) = (e.0.min(e.1), e.0.max(e.1));
    if u >= first_new {
        u
    } else {
        v
    }
}

fn owned_counts(edges: &[(usize, usize)], first_new: usize, n: usize) -> Vec<usize> {
    let mut c = vec![0; n - first_new];
    for &e in edges {
        c[owner(e, first_new) - first_new] += 1;
    }
    c
}

fn check_no_leak(bundle: &SplitBundle, relabeled: &Graph, held_out: &[&[(usize, usize)]]) -> Result<(), String> {
    for setting in bundle.settings() {
        let input = bundle.inference_graph(relabeled, setting).map_err(|e| e.to_string())?;
        for part in held_out {
            if let Some(e) = part.iter().find(|&&(u, v)| input.has_edge(u, v)) {
                return Err(format!("seed {}: held-out edge {e:?} in {setting} input", bundle.seed));
            }
        }
    }
    Ok(())
}

fn check_cold(bundle: &SplitBundle, base: &[usize]) -> Result<(), String> {
    let first_new = bundle.num_train_nodes;
    let mut ratios = Vec::new();
    for c in &bundle.cold_start {
        let tenths = (c.ratio * 10.0).round() as usize;
        ratios.push(tenths);
        let kept = owned_counts(&c.input_edges, first_new, bundle.num_nodes);
        for (i, (&k, &full)) in kept.iter().zip(base).enumerate() {
            let want = (10 - tenths) * full / 10;
            ensure(
                k == want,
                format!(
                    "seed {}: cold {} node {i} keeps {k} of {full}, want {want}",
                    bundle.seed, c.ratio
                ),
            )?;
        }
    }
    ensure(ratios == [3, 6, 9], format!("cold ratios {ratios:?}"))
}

fn criterion_5() -> Outcome {
    let cfg = SplitConfig::default();
    for seed in 0..100u64 {
        let sf = ScaleFreeConfig {
            num_nodes: 100 + 7 * seed as usize,
            feat_dim: 4,
            ..ScaleFreeConfig::default()
        };
        let (g, _) = generate_scale_free(&sf, seed).unwrap();
        let n = g.num_nodes();

        let b = SplitBundle::node_classification(&g, &cfg, seed).map_err(|e| e.to_string())?;
        let rg = b.relabel(&g).unwrap();
        let v = b.num_train_nodes;
        ensure(v == 95 * n / 100, format!("seed {seed}: |V| = {v} of {n}"))?;
        let l = b.labels.as_ref().unwrap();
        let labeled = 10 * v / 100;
        ensure(
            l.train.len() == labeled.div_ceil(2) && l.valid.len() == labeled / 2 && l.unlabeled.len() == v - labeled,
            format!(
                "seed {seed}: label split {}/{}/{}",
                l.train.len(),
                l.valid.len(),
                l.unlabeled.len()
            ),
        )?;
        let all: HashSet<usize> = l.train.iter().chain(&l.valid).chain(&l.unlabeled).copied().collect();
        ensure(
            all.len() == v && all.iter().all(|&x| x < v),
            format!("seed {seed}: label sets overlap or leave V"),
        )?;
        ensure(
            b.train_edges.iter().all(|&(a, c)| a < v && c < v),
            format!("seed {seed}: training graph touches a new node"),
        )?;
        ensure(
            b.train_edges.len() + b.inductive_input.len() == g.num_edges(),
            format!("seed {seed}: edges lost"),
        )?;
        check_cold(&b, &owned_counts(&b.inductive_input, v, n))?;
        check_no_leak(&b, &rg, &[])?;

        let b = SplitBundle::link_prediction(&g, &cfg, seed).map_err(|e| e.to_string())?;
        let rg = b.relabel(&g).unwrap();
        let m = b.train_edges.len() + b.val_edges.len() + b.test_edges.len();
        ensure(
            b.train_edges.len() == 50 * m / 100 && b.val_edges.len() == 20 * m / 100,
            format!(
                "seed {seed}: transductive edges {}/{}/{}",
                b.train_edges.len(),
                b.val_edges.len(),
                b.test_edges.len()
            ),
        )?;
        let input = owned_counts(&b.inductive_input, v, n);
        let test = owned_counts(&b.inductive_test, v, n);
        for (i, (&a, &t)) in input.iter().zip(&test).enumerate() {
            ensure(
                a == (a + t) / 2,
                format!("seed {seed}: new node {i} has {a} input of {}", a + t),
            )?;
        }
        check_cold(&b, &input)?;
        check_no_leak(&b, &rg, &[&b.val_edges, &b.test_edges, &b.inductive_test])?;

        let bc = BipartiteConfig {
            num_users: 60 + seed as usize,
            num_items: 80,
            min_degree: 3,
            max_degree: 40,
            ..BipartiteConfig::default()
        };
        let g = generate_bipartite(&bc, seed).unwrap();
        let b = SplitBundle::recsys(&g, &cfg, seed).map_err(|e| e.to_string())?;
        let m = g.num_edges();
        ensure(
            b.train_edges.len() == 10 * m / 100
                && b.val_edges.len() == 5 * m / 100
                && b.test_edges.len() == m - 10 * m / 100 - 5 * m / 100,
            format!(
                "seed {seed}: recsys edges {}/{}/{}",
                b.train_edges.len(),
                b.val_edges.len(),
                b.test_edges.len()
            ),
        )?;
        check_no_leak(&b, &b.relabel(&g).unwrap(), &[&b.val_edges, &b.test_edges])?;
    }
    Ok("100 seeded splits per task: exact counts for 95/5, 50/50 labels, 50/20/30, 50/50, 10/5/85, cold 30/60/90; no leakage".into())
}

// 6. Trend reproduction.

const TREND_SEEDS: u64 = 5;

fn classification_trend() -> Result<String, String> {
    let start = Instant::now();
    let sf = ScaleFreeConfig {
        num_nodes: 2000,
        num_classes: 2,
        feat_dim: 64,
        ..ScaleFreeConfig::default()
    };
    let methods = [
        Method::Base,
        Method::Tuneup,
        Method::NoCurriculum,
        Method::NoPseudo,
        Method::NoSyntails,
    ];
    let mut tail: BTreeMap<Method, Vec<f64>> = BTreeMap::new();
    let mut cold: BTreeMap<Method, Vec<f64>> = BTreeMap::new();
    for seed in 0..TREND_SEEDS {
        let (g, labels) = generate_scale_free(&sf, seed).unwrap();
        let bundle = SplitBundle::node_classification(&g, &SplitConfig::default(), seed).unwrap();
        let rg = bundle.relabel(&g).unwrap();
        let rl = bundle.relabel_labels(&labels).unwrap();
        let data = TrainData::from_bundle(&bundle, &rg, Some(&rl), 50).unwrap();
        let mcfg = ModelConfig::for_graph(
            &rg,
            EncoderVariant::SageMean,
            32,
            32,
            32,
            HeadConfig::Classifier { num_classes: 2 },
        );
        let cfg = TrainConfig::default();
        for m in methods {
            let (model, _) = run_ablation(m, Model::new(mcfg.clone(), seed).unwrap(), &data, &cfg, seed)
                .map_err(|e| e.to_string())?;
            let tr = evaluate_setting(&model, &bundle, &rg, Some(&rl), Setting::Transductive, 50)
                .map_err(|e| e.to_string())?;
            let cs = evaluate_setting(&model, &bundle, &rg, Some(&rl), Setting::InductiveCold(0.9), 50)
                .map_err(|e| e.to_string())?;
            tail.entry(m).or_default().push(tr.tail.unwrap_or(f64::NAN));
            cold.entry(m).or_default().push(cs.value);
        }
    }
    let elapsed = start.elapsed();
    let wins = |v: &BTreeMap<Method, Vec<f64>>| {
        v[&Method::Tuneup]
            .iter()
            .zip(&v[&Method::Base])
            .filter(|(t, b)| t >= b)
            .count()
    };
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (tail_wins, cold_wins) = (wins(&tail), wins(&cold));
    let tuneup_cold = mean(&cold[&Method::Tuneup]);
    let ablations: Vec<String> = [Method::NoCurriculum, Method::NoPseudo, Method::NoSyntails]
        .iter()
        .map(|m| format!("{m} {:.3}", mean(&cold[m])))
        .collect();
    let ablations_ok = [Method::NoCurriculum, Method::NoPseudo, Method::NoSyntails]
        .iter()
        .all(|m| tuneup_cold >= mean(&cold[m]));
    let detail = format!(
        "classification: tail tuneup>=base {tail_wins}/5 (tuneup {:?} base {:?}); cold-0.9 {cold_wins}/5 (tuneup {:?} base {:?}); cold mean tuneup {tuneup_cold:.3} vs {}; {:.0}s",
        rounded(&tail[&Method::Tuneup]),
        rounded(&tail[&Method::Base]),
        rounded(&cold[&Method::Tuneup]),
        rounded(&cold[&Method::Base]),
        ablations.join(", "),
        elapsed.as_secs_f64()
    );
    let ok = tail_wins >= 4 && cold_wins >= 4 && ablations_ok && elapsed < Duration::from_secs(20 * 60);
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn recsys_trend() -> Result<String, String> {
    let start = Instant::now();
    let mut tail: BTreeMap<Method, Vec<f64>> = BTreeMap::new();
    for seed in 0..TREND_SEEDS {
        let g = generate_bipartite(&BipartiteConfig::default(), seed).unwrap();
        let bundle = SplitBundle::recsys(&g, &SplitConfig::default(), seed).unwrap();
        let rg = bundle.relabel(&g).unwrap();
        let data = TrainData::from_bundle(&bundle, &rg, None, 50).unwrap();
        let mcfg = ModelConfig::for_graph(&rg, EncoderVariant::SageMean, 32, 32, 32, HeadConfig::InnerProduct);
        let cfg = TrainConfig::for_task(Task::Recsys);
        for m in [Method::Base, Method::Tuneup] {
            let (model, _) = run_ablation(m, Model::new(mcfg.clone(), seed).unwrap(), &data, &cfg, seed)
                .map_err(|e| e.to_string())?;
            let tr =
                evaluate_setting(&model, &bundle, &rg, None, Setting::Transductive, 50).map_err(|e| e.to_string())?;
            tail.entry(m).or_default().push(tr.tail.unwrap_or(f64::NAN));
        }
    }
    let elapsed = start.elapsed();
    let wins = tail[&Method::Tuneup]
        .iter()
        .zip(&tail[&Method::Base])
        .filter(|(t, b)| t >= b)
        .count();
    let detail = format!(
        "recsys: tail recall@50 tuneup>=base {wins}/5 (tuneup {:?} base {:?}); {:.0}s",
        rounded(&tail[&Method::Tuneup]),
        rounded(&tail[&Method::Base]),
        elapsed.as_secs_f64()
    );
    if wins >= 4 && elapsed < Duration::from_secs(20 * 60) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rounded(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| (x * 1e4).round() / 1e4).collect()
}

fn criterion_6() -> Outcome {
    let c = classification_trend();
    let r = recsys_trend();
    let join = |a: &Result<String, String>, b: &Result<String, String>| {
        let s = |x: &Result<String, String>| match x {
            Ok(s) | Err(s) => s.clone(),
        };
        format!("{} | {}", s(a), s(b))
    };
    let text = join(&c, &r);
    if c.is_ok() && r.is_ok() {
        Ok(text)
    } else {
        Err(text)
    }
}

// 7. Theory formula checks.

#[allow(clippy::too_many_arguments)]
fn bound_oracle(method: TheoryMethod, m: f64, d: f64, delta: f64, q: f64, tau: f64, r: f64, t: f64) -> f64 {
    let e = std::f64::consts::E;
    let is_m1 = if method == TheoryMethod::M1 { 1.0 } else { 0.0 };
    let is_m3 = if method == TheoryMethod::M3 { 1.0 } else { 0.0 };
    let l = (16.0 * e * m / delta).ln();
    let head = ((is_m1 * 8.0 * (d - 1.0) * l + 8.0 * l) / m).sqrt();
    let g = (8.0 * d * (16.0 * e * r / delta).ln() / r).sqrt() + ((4.0 / delta).ln() / (2.0 * t)).sqrt();
    head + (1.0 - is_m1) * q + is_m3 * tau + g
}

fn criterion_7() -> Outcome {
    let mut rng = rng_from(17, &[1]);
    let mut worst = 0.0f64;
    let mut worst_tau = 0.0f64;
    for _ in 0..2000 {
        let m = rng.random_range(1..5000usize);
        let d = rng.random_range(1..64usize);
        let delta = rng.random_range(0.001..0.999);
        let q = if rng.random_bool(0.5) {
            0.0
        } else {
            rng.random_range(0.0..1.0)
        };
        let tau = rng.random_range(-0.5..0.5);
        let r = rng.random_range(1..20_000usize);
        let t = rng.random_range(1..20_000usize);
        let mut b = [0.0; 3];
        for (k, method) in TheoryMethod::ALL.into_iter().enumerate() {
            b[k] = theorem_bound(method, m, d, delta, q, tau, r, t).map_err(|e| e.to_string())?;
            let want = bound_oracle(method, m as f64, d as f64, delta, q, tau, r as f64, t as f64);
            worst = worst.max((b[k] - want).abs());
        }
        if q == 0.0 && d > 1 {
            ensure(
                b[1] < b[0],
                format!("bound(M2) {} >= bound(M1) {} at Q=0, d={d}", b[1], b[0]),
            )?;
        }
        worst_tau = worst_tau.max(((b[2] - b[1]) - tau).abs());
    }
    ensure(worst <= 1e-12, format!("oracle disagreement {worst:.2e}"))?;
    ensure(
        worst_tau <= 1e-12,
        format!("bound(M3)-bound(M2) differs from tau by {worst_tau:.2e}"),
    )?;
    Ok(format!(
        "2000 parameter draws: oracle agreement {worst:.1e}, M2 < M1 at Q=0, |bound(M3)-bound(M2)-tau| <= {worst_tau:.1e}"
    ))
}

// 8. Theory Monte Carlo.

fn criterion_8() -> Outcome {
    let start = Instant::now();
    let cfg = TheoryConfig::default();
    ensure(
        cfg.population == 10_000
            && cfg.zero_degree == 1000
            && cfg.full_degree == 1000
            && cfg.labeled == 100
            && cfg.dim == 16
            && cfg.delta == 0.1,
        "default theory world differs from N=10000, T=R=1000, m=100, d=16, delta=0.1",
    )?;
    let (_, s) = monte_carlo_validate(&cfg, 200, 0).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let detail = format!(
        "violation rates {:?} (limit {:.4}); Q=0 in {}/200 trials, mean gap M1 {:.4} M2 {:.4} M3 {:.4}; {:.1}s",
        s.violation_rate,
        cfg.delta + s.slack,
        s.q_zero_trials,
        s.mean_gap_q_zero[0],
        s.mean_gap_q_zero[1],
        s.mean_gap_q_zero[2],
        elapsed.as_secs_f64()
    );
    ensure(s.within_slack(), format!("violation rate above slack: {detail}"))?;
    ensure(s.q_zero_trials > 0, format!("no trial reached Q=0: {detail}"))?;
    ensure(
        s.mean_gap_q_zero[1] <= s.mean_gap_q_zero[0],
        format!("mean gap M2 > M1: {detail}"),
    )?;
    ensure(elapsed < Duration::from_secs(600), format!("too slow: {detail}"))?;
    Ok(detail)
}

// 9. Determinism.

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| x == "json") {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn run_cli(cmd: &str, config: &Path, out: &Path) -> Result<(), String> {
    let o = Command::new(env!("CARGO_BIN_EXE_tuneup"))
        .args([
            cmd,
            "--config",
            config.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ])
        .output()
        .map_err(|e| e.to_string())?;
    ensure(
        o.status.success(),
        format!("{cmd} failed: {}", String::from_utf8_lossy(&o.stderr)),
    )
}

const DETERMINISM_CONFIGS: [(&str, &str); 3] = [
    (
        "classification",
        r#"{"task": "node-classification",
            "dataset": {"scale-free": {"num_nodes": 300, "feat_dim": 8}},
            "model": {"encoder": "gat", "hidden_dim": 8, "output_dim": 8},
            "train": {"stage1": {"epochs": 12, "lr": 0.01}, "stage2": {"epochs": 8, "lr": 0.01}, "eval_interval": 4},
            "seeds": [0, 1],
            "theory": {"trials": 100, "world": {"population": 1000, "zero_degree": 100, "full_degree": 100, "labeled": 20, "dim": 4, "epochs": 30}}}"#,
    ),
    (
        "link",
        r#"{"task": "link-prediction",
            "dataset": {"scale-free": {"num_nodes": 200, "feat_dim": 6}},
            "model": {"encoder": "sage-max", "hidden_dim": 8, "output_dim": 8},
            "train": {"stage1": {"epochs": 6, "lr": 0.01}, "stage2": {"epochs": 4, "lr": 0.01}, "eval_interval": 3, "recall_k": 10},
            "methods": ["base", "tuneup", "no-curriculum"],
            "seeds": [2]}"#,
    ),
    (
        "recsys",
        r#"{"task": "recsys",
            "dataset": {"bipartite": {"num_users": 60, "num_items": 80, "min_degree": 3, "max_degree": 30}},
            "model": {"encoder": "gcn", "hidden_dim": 8, "output_dim": 8, "shallow_dim": 8},
            "train": {"stage1": {"epochs": 6, "lr": 0.01}, "stage2": {"epochs": 4, "lr": 0.001}, "eval_interval": 3, "recall_k": 10},
            "seeds": [3]}"#,
    ),
];

fn criterion_9() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut files = 0;
    for (name, text) in DETERMINISM_CONFIGS {
        let config = tmp.path().join(format!("{name}.json"));
        fs::write(&config, text).unwrap();
        let mut commands = vec!["generate", "split", "train", "eval", "report"];
        if name == "classification" {
            commands.push("theory");
        }
        let (a, b) = (
            tmp.path().join(format!("{name}-a")),
            tmp.path().join(format!("{name}-b")),
        );
        for cmd in &commands {
            run_cli(cmd, &config, &a)?;
        }
        let first = snapshot(&a);
        for cmd in &commands {
            run_cli(cmd, &config, &a)?;
            ensure(
                snapshot(&a) == first,
                format!("{name}: rerunning {cmd} in place changed outputs"),
            )?;
        }
        for cmd in &commands {
            run_cli(cmd, &config, &b)?;
        }
        let second = snapshot(&b);
        ensure(first == second, format!("{name}: fresh rerun differs"))?;
        files += first.len();
    }
    Ok(format!(
        "3 tasks, every command rerun in place and from scratch: {files} JSON files byte-identical"
    ))
}

// 10. Closed-form loss values.

fn criterion_10() -> Outcome {
    let mut worst = 0.0f64;
    for c in 2..=20usize {
        let lp = Matrix::filled(7, c, -(c as f64).ln());
        let labels: Vec<LabeledNode> = (0..7)
            .map(|v| LabeledNode {
                node: v,
                class: v % c,
                is_pseudo: false,
            })
            .collect();
        let value = cross_entropy_value(&lp, &labels).map_err(|e| e.to_string())?;
        let mut tape = tuneup::autodiff::Tape::new();
        let x = tape.constant(lp.clone());
        let loss = cross_entropy(&mut tape, x, &labels).map_err(|e| e.to_string())?;
        let taped = tape.value(loss).item();
        for v in [value, taped] {
            worst = worst.max((v - (c as f64).ln()).abs());
        }
    }
    ensure(worst <= 1e-12, format!("cross-entropy off ln C by {worst:.2e}"))?;
    let mut worst_bpr = 0.0f64;
    for s in [-3.5, 0.0, 0.25, 10.0] {
        let v = bpr_value(&[s; 5], &[s; 5]).map_err(|e| e.to_string())?;
        let mut tape = tuneup::autodiff::Tape::new();
        let p = tape.constant(Matrix::column(&[s; 5]));
        let q = tape.constant(Matrix::column(&[s; 5]));
        let l = bpr_loss(&mut tape, p, q).map_err(|e| e.to_string())?;
        for x in [v, tape.value(l).item()] {
            worst_bpr = worst_bpr.max((x - std::f64::consts::LN_2).abs());
        }
    }
    ensure(worst_bpr <= 1e-12, format!("BPR off ln 2 by {worst_bpr:.2e}"))?;
    Ok(format!(
        "cross-entropy = ln C for C=2..20 within {worst:.1e}; BPR(0) = ln 2 within {worst_bpr:.1e}"
    ))
}

fn main() -> ExitCode {
    let criteria: [(usize, fn() -> Outcome); 10] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
        (9, criterion_9),
        (10, criterion_10),
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (n, f) in criteria {
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("criterion {n} PASS: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n} FAIL: {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
