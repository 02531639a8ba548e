use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tokmoe::encoder::{expert_key, EncoderConfig, EncoderState, Mode};
use tokmoe::graph::{generate_sbm, Graph, SbmSpec};
use tokmoe::kernel::{check_gradients, softmax_along, Tape, Tensor, TrainRng, Var};
use tokmoe::model::{Interface, Model, ModelConfig};
use tokmoe::Error;

fn cfg(layers: usize, hidden: usize, k: usize, moe: Vec<usize>, bn: bool) -> EncoderConfig {
    EncoderConfig { num_layers: layers, hidden_dim: hidden, k, tau: 1.0, dropout: 0.0, moe_layers: moe, batch_norm: bn }
}

fn rand_tensor(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    Tensor::matrix(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn randomize(state: &mut EncoderState, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (name, t) in state.params.iter_mut() {
        if name.contains("running") {
            continue;
        }
        for v in t.data_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
    }
}

fn random_graph(n: usize, d: usize, seed: u64) -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let edges: Vec<_> = (0..2 * n).map(|_| (rng.random_range(0..n), rng.random_range(0..n))).collect();
    Graph::from_edges(
        n,
        &edges,
        rand_tensor(&mut rng, n, d),
        (0..n).map(|v| Some(v % 3)).collect(),
        3,
    )
    .unwrap()
}

#[test]
fn zero_router_is_uniform_and_deterministic() {
    let mut st = EncoderState::init(cfg(1, 4, 3, vec![0], false), 4, &mut TrainRng::new(0)).unwrap();
    for (name, t) in st.params.iter_mut() {
        if name.contains("router") {
            t.data_mut().fill(0.0);
        }
    }
    let mut rng = TrainRng::new(1);
    let pi = st.route(&[0.3, -1.0, 2.0, 0.5], 0, Mode::Deploy, &mut rng).unwrap();
    for p in &pi {
        assert!((p - 1.0 / 3.0).abs() < 1e-15);
    }
    assert_eq!(pi, st.route(&[0.3, -1.0, 2.0, 0.5], 0, Mode::Deploy, &mut rng).unwrap());
    assert_eq!(rng.calls(), 0);
}

#[test]
fn train_routing_argmax_matches_softmax() {
    let st = EncoderState::init(cfg(1, 3, 3, vec![0], false), 3, &mut TrainRng::new(4)).unwrap();
    let h = [0.9, -0.4, 1.3];
    let w = st.param("enc.0.router.w").unwrap();
    let b = st.param("enc.0.router.b").unwrap();
    let logits: Vec<f64> = (0..3)
        .map(|k| (0..3).map(|i| h[i] * w.get(i, k)).sum::<f64>() + b.data()[k])
        .collect();
    let target = softmax_along(&Tensor::vector(logits).unwrap(), 0).unwrap();
    let mut rng = TrainRng::new(99);
    let mut counts = [0usize; 3];
    let trials = 100_000;
    for _ in 0..trials {
        let pi = st.route(&h, 0, Mode::Train, &mut rng).unwrap();
        let arg = (0..3).max_by(|&a, &b| pi[a].partial_cmp(&pi[b]).unwrap()).unwrap();
        counts[arg] += 1;
    }
    for k in 0..3 {
        let f = counts[k] as f64 / trials as f64;
        assert!((f - target.data()[k]).abs() <= 0.01, "{k}: {f} vs {}", target.data()[k]);
    }
}

fn identity_psi(d: usize) -> EncoderState {
    let mut st = EncoderState::init(cfg(1, 2 * d, 1, vec![], false), d, &mut TrainRng::new(0)).unwrap();
    st.params.insert("enc.0.psi.w".into(), Tensor::identity(2 * d));
    st
}

#[test]
fn summary_single_edge_and_isolated() {
    let d = 2;
    let st = identity_psi(d);
    let h = Tensor::matrix(3, d, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
    let g = Graph::unlabeled(3, &[(0, 1)], h.clone()).unwrap();
    let z = st.neighborhood_summary(&g, &h, 0).unwrap();
    assert_eq!(z.row(0), &[1.0, 2.0, 3.0, 4.0]);
    assert_eq!(z.row(1), &[3.0, 4.0, 1.0, 2.0]);
    assert_eq!(&z.row(2)[2..], &[0.0, 0.0]);
}

#[test]
fn summary_matches_naive_loop() {
    let mut st = EncoderState::init(cfg(1, 5, 1, vec![], false), 3, &mut TrainRng::new(0)).unwrap();
    randomize(&mut st, 3);
    let g = random_graph(6, 3, 8);
    let h = g.features().clone();
    let z = st.neighborhood_summary(&g, &h, 0).unwrap();
    let w = st.param("enc.0.psi.w").unwrap();
    let b = st.param("enc.0.psi.b").unwrap();
    for v in 0..6 {
        let mut cat = h.row(v).to_vec();
        let mut agg = vec![0.0; 3];
        for &u in g.neighbors(v) {
            for j in 0..3 {
                agg[j] += h.get(u, j);
            }
        }
        let deg = g.degree(v).max(1) as f64;
        cat.extend(agg.iter().map(|a| a / deg));
        for o in 0..5 {
            let want: f64 = (0..6).map(|i| cat[i] * w.get(i, o)).sum::<f64>() + b.data()[o];
            assert!((z.get(v, o) - want).abs() <= 1e-12);
        }
    }
}

fn random_simplex(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Tensor {
    let mut data = Vec::with_capacity(n * k);
    for _ in 0..n {
        let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..1.0)).collect();
        let s: f64 = raw.iter().sum();
        data.extend(raw.iter().map(|x| x / s));
    }
    Tensor::matrix(n, k, data).unwrap()
}

#[test]
fn single_expert_ignores_router() {
    let st = EncoderState::init(cfg(1, 4, 1, vec![], false), 4, &mut TrainRng::new(2)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let z = rand_tensor(&mut rng, 5, 4);
    let (_, out) = st.moe_update(&z, &Tensor::full(&[5, 1], 1.0), 0).unwrap();
    let w = st.param(&expert_key(0, 0, "w")).unwrap();
    let want = z.matmul(w).unwrap().map(|x| x.max(0.0));
    assert!(out.max_abs_diff(&want) <= 1e-15);
}

#[test]
fn identical_experts_ignore_routing() {
    let mut st = EncoderState::init(cfg(1, 4, 3, vec![0], false), 4, &mut TrainRng::new(2)).unwrap();
    let w0 = st.param(&expert_key(0, 0, "w")).unwrap().clone();
    let b0 = Tensor::matrix(1, 4, vec![0.1, -0.2, 0.3, 0.0]).unwrap();
    for e in 0..3 {
        st.params.insert(expert_key(0, e, "w"), w0.clone());
        st.params.insert(expert_key(0, e, "b"), b0.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let z = rand_tensor(&mut rng, 4, 4);
    let (reference, _) = st.moe_update(&z, &random_simplex(&mut rng, 4, 3), 0).unwrap();
    for _ in 0..10 {
        let (pre, _) = st.moe_update(&z, &random_simplex(&mut rng, 4, 3), 0).unwrap();
        assert!(pre.max_abs_diff(&reference) <= 1e-12);
    }
}

#[test]
fn mixture_matches_convex_combination() {
    let mut st = EncoderState::init(cfg(1, 5, 3, vec![0], false), 5, &mut TrainRng::new(0)).unwrap();
    randomize(&mut st, 11);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let z = rand_tensor(&mut rng, 7, 5);
    let pi = random_simplex(&mut rng, 7, 3);
    let (pre, _) = st.moe_update(&z, &pi, 0).unwrap();
    let outs: Vec<Tensor> = (0..3)
        .map(|e| {
            let w = st.param(&expert_key(0, e, "w")).unwrap();
            let b = st.param(&expert_key(0, e, "b")).unwrap();
            let mut y = z.matmul(w).unwrap();
            for i in 0..7 {
                for j in 0..5 {
                    y.set(i, j, y.get(i, j) + b.data()[j]);
                }
            }
            y
        })
        .collect();
    for i in 0..7 {
        for j in 0..5 {
            let want: f64 = (0..3).map(|e| pi.get(i, e) * outs[e].get(i, j)).sum();
            assert!((pre.get(i, j) - want).abs() <= 1e-12);
            let lo = (0..3).map(|e| outs[e].get(i, j)).fold(f64::INFINITY, f64::min);
            let hi = (0..3).map(|e| outs[e].get(i, j)).fold(f64::NEG_INFINITY, f64::max);
            assert!(pre.get(i, j) >= lo - 1e-12 && pre.get(i, j) <= hi + 1e-12);
        }
    }
}

#[test]
fn effective_operator_cases() {
    let mut st = EncoderState::init(cfg(1, 4, 3, vec![0], false), 4, &mut TrainRng::new(0)).unwrap();
    randomize(&mut st, 12);
    let (w, b) = st.effective_operator(&[0.0, 1.0, 0.0], 0).unwrap();
    assert_eq!(&w, st.param(&expert_key(0, 1, "w")).unwrap());
    assert_eq!(&b, st.param(&expert_key(0, 1, "b")).unwrap());

    let mut st2 = EncoderState::init(cfg(1, 4, 2, vec![0], false), 4, &mut TrainRng::new(0)).unwrap();
    let w0 = st2.param(&expert_key(0, 0, "w")).unwrap().clone();
    st2.params.insert(expert_key(0, 1, "w"), w0.map(|x| -x));
    let (w, b) = st2.effective_operator(&[0.5, 0.5], 0).unwrap();
    assert!(w.data().iter().chain(b.data()).all(|&x| x == 0.0));

    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let pi = random_simplex(&mut rng, 1, 3);
    let (w, b) = st.effective_operator(pi.data(), 0).unwrap();
    for _ in 0..20 {
        let z = rand_tensor(&mut rng, 1, 4);
        let (pre, _) = st.moe_update(&z, &pi, 0).unwrap();
        let eff = z.matmul(&w).unwrap();
        for j in 0..4 {
            assert!((eff.get(0, j) + b.data()[j] - pre.get(0, j)).abs() <= 1e-12);
        }
    }
    assert!(st.effective_operator(&[1.0], 0).is_err());
}

#[test]
fn zero_graph_zero_output_and_determinism() {
    let mut st = EncoderState::init(cfg(2, 6, 3, vec![1], true), 4, &mut TrainRng::new(0)).unwrap();
    let g0 = Graph::unlabeled(5, &[(0, 1), (1, 2)], Tensor::zeros(&[5, 4])).unwrap();
    let mut rng = TrainRng::new(0);
    let (h, routings) = st.encode(&g0, Mode::Deploy, &mut rng).unwrap();
    assert!(h.data().iter().all(|&x| x == 0.0));
    assert_eq!(routings.len(), 2);

    randomize(&mut st, 1);
    let g = random_graph(8, 4, 2);
    let a = st.encode(&g, Mode::Deploy, &mut rng).unwrap();
    let b = st.encode(&g, Mode::Deploy, &mut rng).unwrap();
    assert_eq!(a.0.to_le_bytes(), b.0.to_le_bytes());
    assert_eq!(rng.calls(), 0);
}

fn affine_row(x: &[f64], w: &Tensor, b: &Tensor) -> Vec<f64> {
    (0..w.cols())
        .map(|o| (0..x.len()).map(|i| x[i] * w.get(i, o)).sum::<f64>() + b.data()[o])
        .collect()
}

/// Straight-line reimplementation for a 2-layer encoder with MoE in the last
/// layer and batch norm (running statistics) after the first.
#[test]
fn two_layer_path_matches_monolithic() {
    let mut st = EncoderState::init(cfg(2, 3, 2, vec![1], true), 2, &mut TrainRng::new(0)).unwrap();
    randomize(&mut st, 21);
    st.params.insert("enc.0.bn.running_mean".into(), Tensor::matrix(1, 3, vec![0.1, 0.2, -0.1]).unwrap());
    st.params.insert("enc.0.bn.running_var".into(), Tensor::matrix(1, 3, vec![1.5, 0.5, 2.0]).unwrap());
    let x = Tensor::matrix(5, 2, vec![1.0, 0.0, 0.5, -1.0, 0.0, 2.0, -0.5, 0.5, 1.0, 1.0]).unwrap();
    let g = Graph::unlabeled(5, &[(0, 1), (1, 2), (2, 3), (3, 4)], x.clone()).unwrap();
    let (h, _) = st.encode(&g, Mode::Deploy, &mut TrainRng::new(0)).unwrap();

    let p = |n: &str| st.param(n).unwrap().clone();
    let nbrs = |v: usize| -> Vec<usize> { [v.wrapping_sub(1), v + 1].into_iter().filter(|&u| u < 5).collect() };
    let layer_in = |rows: &Vec<Vec<f64>>, v: usize| -> Vec<f64> {
        let mut cat = rows[v].clone();
        let ns = nbrs(v);
        for j in 0..rows[v].len() {
            cat.push(ns.iter().map(|&u| rows[u][j]).sum::<f64>() / ns.len() as f64);
        }
        cat
    };
    let rows0: Vec<Vec<f64>> = (0..5).map(|v| x.row(v).to_vec()).collect();
    let mut rows1 = Vec::new();
    for v in 0..5 {
        let z = affine_row(&layer_in(&rows0, v), &p("enc.0.psi.w"), &p("enc.0.psi.b"));
        let y: Vec<f64> = affine_row(&z, &p("enc.0.expert.0.w"), &p("enc.0.expert.0.b"))
            .into_iter()
            .map(|a| a.max(0.0))
            .collect();
        let (m, s2) = (p("enc.0.bn.running_mean"), p("enc.0.bn.running_var"));
        let (ga, be) = (p("enc.0.bn.gamma"), p("enc.0.bn.beta"));
        rows1.push(
            (0..3)
                .map(|j| (y[j] - m.data()[j]) / (s2.data()[j] + 1e-5).sqrt() * ga.data()[j] + be.data()[j])
                .collect::<Vec<f64>>(),
        );
    }
    for v in 0..5 {
        let z = affine_row(&layer_in(&rows1, v), &p("enc.1.psi.w"), &p("enc.1.psi.b"));
        let logits = affine_row(&rows1[v], &p("enc.1.router.w"), &p("enc.1.router.b"));
        let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let ex: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
        let s: f64 = ex.iter().sum();
        let f0 = affine_row(&z, &p("enc.1.expert.0.w"), &p("enc.1.expert.0.b"));
        let f1 = affine_row(&z, &p("enc.1.expert.1.w"), &p("enc.1.expert.1.b"));
        for j in 0..3 {
            let want = (ex[0] / s * f0[j] + ex[1] / s * f1[j]).max(0.0);
            assert!((h.get(v, j) - want).abs() <= 1e-12, "node {v} dim {j}");
        }
    }
}

#[test]
fn single_expert_encoder_is_plain_gnn_layer() {
    let mut st = EncoderState::init(cfg(1, 4, 1, vec![0], false), 3, &mut TrainRng::new(0)).unwrap();
    randomize(&mut st, 31);
    let g = random_graph(7, 3, 4);
    let (h, _) = st.encode(&g, Mode::Train, &mut TrainRng::new(9)).unwrap();
    let z = st.neighborhood_summary(&g, g.features(), 0).unwrap();
    let w = st.param("enc.0.expert.0.w").unwrap();
    let b = st.param("enc.0.expert.0.b").unwrap();
    for v in 0..7 {
        let want: Vec<f64> = affine_row(z.row(v), w, b).into_iter().map(|a| a.max(0.0)).collect();
        assert_eq!(h.row(v), &want[..]);
    }
}

#[test]
fn nan_names_the_layer() {
    let mut st = EncoderState::init(cfg(2, 3, 1, vec![], false), 2, &mut TrainRng::new(0)).unwrap();
    st.params.get_mut("enc.1.psi.b").unwrap().data_mut()[0] = f64::NAN;
    let g = random_graph(4, 2, 1);
    match st.encode(&g, Mode::Deploy, &mut TrainRng::new(0)).unwrap_err() {
        Error::Numeric { location, .. } => assert!(location.contains("layer 1"), "{location}"),
        e => panic!("unexpected {e}"),
    }
}

#[test]
fn invalid_config_rejected() {
    let bad = [
        EncoderConfig { k: 0, ..cfg(1, 2, 1, vec![], false) },
        EncoderConfig { tau: 0.0, ..cfg(1, 2, 1, vec![], false) },
        cfg(2, 2, 3, vec![2], false),
    ];
    for c in bad {
        assert!(matches!(EncoderState::init(c, 2, &mut TrainRng::new(0)), Err(Error::Config(_))));
    }
}

#[test]
fn expert_permutation_equivariance() {
    let mut st = EncoderState::init(cfg(2, 4, 3, vec![0, 1], true), 3, &mut TrainRng::new(0)).unwrap();
    randomize(&mut st, 41);
    let g = random_graph(9, 3, 5);
    let (h, _) = st.encode(&g, Mode::Deploy, &mut TrainRng::new(0)).unwrap();
    let perm = [2, 0, 1];
    let mut p = st.clone();
    for l in 0..2 {
        for (new, &old) in perm.iter().enumerate() {
            for part in ["w", "b"] {
                p.params.insert(expert_key(l, new, part), st.param(&expert_key(l, old, part)).unwrap().clone());
            }
        }
        for part in ["w", "b"] {
            let name = format!("enc.{l}.router.{part}");
            let src = st.param(&name).unwrap();
            let mut dst = src.clone();
            for i in 0..src.rows() {
                for (new, &old) in perm.iter().enumerate() {
                    dst.set(i, new, src.get(i, old));
                }
            }
            p.params.insert(name, dst);
        }
    }
    let (hp, _) = p.encode(&g, Mode::Deploy, &mut TrainRng::new(0)).unwrap();
    assert!(h.max_abs_diff(&hp) <= 1e-12);
}

fn small_model(interface: Interface, seed: u64) -> (Model, Graph) {
    let g = generate_sbm(&SbmSpec { n: 10, feature_dim: 3, intra_prob: 0.4, inter_prob: 0.1, seed, ..Default::default() }).unwrap();
    let enc = EncoderConfig { dropout: 0.3, tau: 0.9, ..cfg(2, 4, 3, vec![1], true) };
    let mc = ModelConfig { encoder: enc, in_dim: 3, d_q: 4, codebook_size: 8, num_classes: 2, interface };
    (Model::init(mc, &mut TrainRng::new(seed)).unwrap(), g)
}

#[test]
fn encode_to_head_gradient_check() {
    let (model, g) = small_model(Interface::Identity, 3);
    let names: Vec<String> = model.named_tensors().into_iter().map(|(n, _)| n).filter(|n| !n.contains("running")).collect();
    let inputs: Vec<Tensor> = names.iter().map(|n| model.param(n).cloned().unwrap_or_else(|_| model.codebook.codes().clone())).collect();
    let labels: Vec<usize> = (0..10).map(|v| g.label(v).unwrap()).collect();
    let rows: Vec<usize> = (0..10).collect();
    let gc = check_gradients(&inputs, 1e-5, |t: &mut Tape, vars: &[Var]| {
        let mut vm = model.bind(t, |_| false);
        for (n, &v) in names.iter().zip(vars) {
            vm.insert(n.clone(), v);
        }
        let mut rng = TrainRng::new(5);
        let f = model.forward_with(t, vm, &g, Mode::Train, &mut rng)?;
        t.cross_entropy(f.logits.unwrap(), &labels, &rows)
    })
    .unwrap();
    assert!(gc.rel_error <= 1e-4, "{}", gc.rel_error);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn routing_rows_on_simplex(seed in any::<u64>(), train in any::<bool>(), tau in 0.05f64..5.0) {
        let mut st = EncoderState::init(EncoderConfig { tau, ..cfg(2, 4, 3, vec![0, 1], false) }, 3, &mut TrainRng::new(seed)).unwrap();
        randomize(&mut st, seed);
        let g = random_graph(8, 3, seed);
        let mode = if train { Mode::Train } else { Mode::Deploy };
        let (_, routings) = st.encode(&g, mode, &mut TrainRng::new(seed)).unwrap();
        for r in routings {
            for i in 0..r.rows() {
                prop_assert!((r.row(i).iter().sum::<f64>() - 1.0).abs() <= 1e-9);
                prop_assert!(r.row(i).iter().all(|&p| p >= 0.0));
            }
        }
    }

    #[test]
    fn deploy_consumes_no_randomness(seed in any::<u64>()) {
        let (model, g) = small_model(Interface::Quantized, seed % 1000);
        let mut rng = TrainRng::new(seed);
        let mut t = Tape::new();
        model.forward(&mut t, &g, Mode::Deploy, &mut rng, |_| false).unwrap();
        prop_assert_eq!(rng.calls(), 0);
    }
}

