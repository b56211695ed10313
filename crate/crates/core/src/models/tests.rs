use proptest::prelude::*;
use rand::Rng as _;

use super::*;
use crate::graph::Bipartite;
use crate::rng::rng_from;

fn random_graph(seed: u64, n: usize, p: f64, feat: usize) -> Graph {
    let mut rng = rng_from(seed, &[500]);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.random_bool(p) {
                edges.push((u, v));
            }
        }
    }
    let x = Matrix::from_vec(n, feat, (0..n * feat).map(|_| rng.random_range(-1.0..1.0)).collect());
    Graph::build(&edges, n, Some(x), None).unwrap()
}

fn model(variant: EncoderVariant, layers: usize, input: usize, head: HeadConfig, seed: u64) -> Model {
    let mut enc = EncoderConfig::new(variant, input, 6, 5);
    enc.num_layers = layers;
    Model::new(
        ModelConfig {
            encoder: enc,
            head,
            shallow_nodes: None,
        },
        seed,
    )
    .unwrap()
}

#[test]
fn zero_parameters_give_zero_embeddings() {
    let g = random_graph(1, 12, 0.3, 3);
    for v in EncoderVariant::ALL {
        let mut m = model(v, 3, 3, HeadConfig::InnerProduct, 0);
        m.zero_params();
        assert!(m.encode(&g).unwrap().data().iter().all(|&x| x == 0.0), "{v:?}");
    }
}

#[test]
fn zero_model_classifies_uniformly() {
    let g = random_graph(2, 8, 0.3, 3);
    let mut m = model(EncoderVariant::Gcn, 3, 3, HeadConfig::Classifier { num_classes: 4 }, 0);
    m.zero_params();
    let lp = m.classify(&g).unwrap();
    for &v in lp.data() {
        assert!((v - (0.25f64).ln()).abs() < 1e-12);
        assert!((v + 1.386294).abs() < 1e-6);
    }
}

#[test]
fn classify_rows_are_normalized() {
    let g = random_graph(3, 15, 0.2, 4);
    let m = model(
        EncoderVariant::SageMax,
        3,
        4,
        HeadConfig::Classifier { num_classes: 3 },
        1,
    );
    let lp = m.classify(&g).unwrap();
    for r in 0..lp.rows() {
        let s: f64 = lp.row(r).iter().map(|v| v.exp()).sum();
        assert!((s - 1.0).abs() < 1e-12);
    }
}

#[test]
fn argmax_is_invariant_to_a_shifted_head_bias() {
    let g = random_graph(4, 15, 0.2, 4);
    let mut m = model(EncoderVariant::Gcn, 2, 4, HeadConfig::Classifier { num_classes: 3 }, 5);
    let before = m.classify(&g).unwrap().argmax_rows();
    let last = m.params().len() - 1;
    m.params_mut()[last].data_mut().iter_mut().for_each(|b| *b += 3.5);
    assert_eq!(m.classify(&g).unwrap().argmax_rows(), before);
}

#[test]
fn sage_mean_aggregates_neighbor_features() {
    let x = Matrix::from_rows(&[vec![5.0, 5.0], vec![0.0, 2.0], vec![2.0, 0.0]]);
    let g = Graph::build(&[(0, 1), (0, 2)], 3, Some(x), None).unwrap();
    let mut m = model(EncoderVariant::SageMean, 1, 2, HeadConfig::InnerProduct, 0);
    m.config.encoder.output_dim = 2;
    // Weight selects the aggregate half of [self | neighbors].
    let w = Matrix::from_rows(&[vec![0.0, 0.0], vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]);
    let m = Model::from_params(m.config.clone(), vec![w, Matrix::zeros(1, 2)]).unwrap();
    assert_eq!(m.encode(&g).unwrap().row(0), &[1.0, 1.0]);
}

#[test]
fn gcn_on_edgeless_graph_is_a_per_node_mlp() {
    let g = Graph::build(&[], 6, random_graph(5, 6, 0.0, 3).features().cloned(), None).unwrap();
    let m = model(EncoderVariant::Gcn, 2, 3, HeadConfig::InnerProduct, 8);
    let p = m.params();
    let x = g.features().unwrap();
    let mut h = x.matmul(&p[0]);
    for r in 0..h.rows() {
        for c in 0..h.cols() {
            h.set(r, c, (h.get(r, c) + p[1].get(0, c)).max(0.0));
        }
    }
    let mut out = h.matmul(&p[2]);
    for r in 0..out.rows() {
        for c in 0..out.cols() {
            out.set(r, c, out.get(r, c) + p[3].get(0, c));
        }
    }
    let z = m.encode(&g).unwrap();
    for (a, b) in z.data().iter().zip(out.data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn link_scores_are_symmetric_and_bias_only_at_zero() {
    let g = random_graph(6, 10, 0.3, 3);
    let m = model(EncoderVariant::SageSum, 2, 3, HeadConfig::LinkMlp, 3);
    let pairs: Vec<(usize, usize)> = (0..10).flat_map(|s| (0..10).map(move |t| (s, t))).collect();
    let scores = m.link_score(&g, &pairs).unwrap();
    let z = m.encode(&g).unwrap();
    for (k, &(s, t)) in pairs.iter().enumerate() {
        assert_eq!(scores[k], scores[t * 10 + s]);
        assert!((m.pair_score(&z, s, t) - scores[k]).abs() < 1e-12);
    }
    let z0 = Matrix::zeros(3, 5);
    let base = m.pair_score(&z0, 0, 1);
    assert_eq!(base, m.pair_score(&z0, 0, 2));
    let hs = m.head_start();
    let expected = m.params()[hs + 2]
        .data()
        .iter()
        .zip(m.params()[hs + 1].data())
        .map(|(w, b)| w * b.max(0.0))
        .sum::<f64>()
        + m.params()[hs + 3].item();
    assert!((base - expected).abs() < 1e-15);
}

#[test]
fn link_mlp_hand_computed() {
    // z_s ⊙ z_t = [2, -3]; hidden = relu([2, -3] + [0.5, 0.5]) = [2.5, 0]; out = 2.5·2 + 1.
    let cfg = ModelConfig {
        encoder: EncoderConfig::new(EncoderVariant::Gcn, 2, 2, 2),
        head: HeadConfig::LinkMlp,
        shallow_nodes: None,
    };
    let mut m = Model::new(cfg, 0).unwrap();
    let hs = m.head_start();
    m.params_mut()[hs] = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
    m.params_mut()[hs + 1] = Matrix::from_rows(&[vec![0.5, 0.5]]);
    m.params_mut()[hs + 2] = Matrix::from_rows(&[vec![2.0], vec![7.0]]);
    m.params_mut()[hs + 3] = Matrix::scalar(1.0);
    let z = Matrix::from_rows(&[vec![1.0, 3.0], vec![2.0, -1.0]]);
    assert_eq!(m.pair_score(&z, 0, 1), 6.0);
}

#[test]
fn inner_product_scores() {
    let m = model(EncoderVariant::Gcn, 1, 2, HeadConfig::InnerProduct, 0);
    let z = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, -1.0]]);
    assert_eq!(m.pair_score(&z, 0, 1), 1.0);
}

#[test]
fn recsys_pairs_must_cross() {
    let x = Matrix::filled(4, 2, 0.5);
    let g = Graph::build(
        &[(0, 2), (1, 3)],
        4,
        Some(x),
        Some(Bipartite {
            num_users: 2,
            num_items: 2,
        }),
    )
    .unwrap();
    let m = model(EncoderVariant::SageMean, 2, 2, HeadConfig::InnerProduct, 2);
    assert!(m.recsys_score(&g, &[(0, 3), (1, 2)]).is_ok());
    assert_eq!(m.recsys_score(&g, &[(2, 0)]), Err(ModelError::NotCrossing(2, 0)));
    assert_eq!(m.recsys_score(&g, &[(0, 1)]), Err(ModelError::NotCrossing(0, 1)));
}

#[test]
fn zero_user_embedding_scores_zero() {
    let m = model(EncoderVariant::Gcn, 1, 2, HeadConfig::InnerProduct, 0);
    let z = Matrix::from_rows(&[vec![0.0, 0.0], vec![3.0, -1.0], vec![-4.0, 9.0]]);
    assert_eq!(m.pair_score(&z, 0, 1), 0.0);
    assert_eq!(m.pair_score(&z, 0, 2), 0.0);
}

#[test]
fn input_mismatches_are_errors() {
    let g = random_graph(7, 5, 0.5, 3);
    let m = model(EncoderVariant::Gcn, 2, 4, HeadConfig::InnerProduct, 0);
    assert_eq!(m.encode(&g), Err(ModelError::Dimension { expected: 4, found: 3 }));
    let bare = Graph::build(&[(0, 1)], 3, None, None).unwrap();
    assert_eq!(m.encode(&bare), Err(ModelError::MissingInput));
    let table = ModelConfig::for_graph(&bare, EncoderVariant::Gcn, 4, 4, 8, HeadConfig::InnerProduct);
    assert_eq!(table.shallow_nodes, Some(3));
    let tm = Model::new(table, 0).unwrap();
    assert_eq!(tm.encode(&bare).unwrap().shape(), (3, 4));
    assert_eq!(tm.encode(&g), Err(ModelError::UnexpectedTable));
    assert!(m.link_score(&g, &[(0, 9)]).is_err());
    assert!(matches!(m.classify(&g), Err(ModelError::Dimension { .. })));
}

#[test]
fn gat_attention_sums_to_one_per_neighborhood() {
    let g = random_graph(8, 30, 0.15, 4);
    let m = model(EncoderVariant::Gat, 3, 4, HeadConfig::InnerProduct, 4);
    let (ctx, att) = m.attention(&g).unwrap();
    assert_eq!(att.len(), 3);
    let seg = ctx.segments().unwrap();
    for a in &att {
        for i in 0..seg.num_segments() {
            let s: f64 = seg.span(i).map(|e| a.data()[e]).sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn sage_sum_is_linear_in_neighbor_features() {
    let g = random_graph(9, 12, 0.3, 3);
    let mut m = model(EncoderVariant::SageSum, 1, 3, HeadConfig::InnerProduct, 6);
    // Isolate the neighbor term: zero self half of the weight and the bias.
    for r in 0..3 {
        m.params_mut()[0].row_mut(r).fill(0.0);
    }
    let z = m.encode(&g).unwrap();
    let scaled = g
        .clone()
        .with_features(Some(g.features().unwrap().map(|v| 2.5 * v)))
        .unwrap();
    let z2 = m.encode(&scaled).unwrap();
    for (a, b) in z.data().iter().zip(z2.data()) {
        assert!((2.5 * a - b).abs() < 1e-12);
    }
}

#[test]
fn sage_sum_isolated_node_has_zero_aggregate_and_max_uses_self() {
    let x = Matrix::from_rows(&[vec![1.0, -2.0], vec![3.0, 4.0]]);
    let g = Graph::build(&[], 2, Some(x), None).unwrap();
    let w = Matrix::from_rows(&[vec![0.0], vec![0.0], vec![1.0], vec![1.0]]);
    let mut cfg = model(EncoderVariant::SageSum, 1, 2, HeadConfig::InnerProduct, 0)
        .config
        .clone();
    cfg.encoder.output_dim = 1;
    let sum = Model::from_params(cfg.clone(), vec![w.clone(), Matrix::zeros(1, 1)]).unwrap();
    assert_eq!(sum.encode(&g).unwrap().data(), &[0.0, 0.0]);
    cfg.encoder.variant = EncoderVariant::SageMax;
    let max = Model::from_params(cfg, vec![w, Matrix::zeros(1, 1)]).unwrap();
    assert_eq!(max.encode(&g).unwrap().data(), &[-1.0, 7.0]);
}

fn permute_graph(g: &Graph, perm: &[usize]) -> Graph {
    // perm[old] = new
    let n = g.num_nodes();
    let edges: Vec<(usize, usize)> = g.edges().iter().map(|&(u, v)| (perm[u], perm[v])).collect();
    let x = g.features().unwrap();
    let mut px = Matrix::zeros(n, x.cols());
    for (old, &new) in perm.iter().enumerate() {
        px.row_mut(new).copy_from_slice(x.row(old));
    }
    Graph::build(&edges, n, Some(px), None).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]
    #[test]
    fn encoders_are_permutation_equivariant(seed in 0u64..10_000, n in 2usize..50, vi in 0usize..5) {
        let g = random_graph(seed, n, 0.12, 3);
        let mut rng = rng_from(seed, &[501]);
        let mut perm: Vec<usize> = (0..n).collect();
        rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
        let m = model(EncoderVariant::ALL[vi], 3, 3, HeadConfig::InnerProduct, seed);
        let z = m.encode(&g).unwrap();
        let zp = m.encode(&permute_graph(&g, &perm)).unwrap();
        for (old, &new) in perm.iter().enumerate() {
            for (a, b) in z.row(old).iter().zip(zp.row(new)) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
