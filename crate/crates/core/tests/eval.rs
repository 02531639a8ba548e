use proptest::prelude::*;
use tokmoe::encoder::EncoderConfig;
use tokmoe::eval::{
    per_class_split,
    allocate, build_degree_buckets, build_homophily_buckets, build_triobj_buckets, buckets_from_scores, plan_for,
    run_perturb_suite, stratified_id_split, triobj_report, verify_frozen, BucketSpec, MetricsReport, PerturbKind,
    Role, SmallClass, TriObjRow, TRIOBJ_MASK_RATES,
};
use tokmoe::graph::{feature_homophily_scores, generate_sbm, Graph, SbmSpec};
use tokmoe::kernel::{Tensor, TrainRng};
use tokmoe::model::{Interface, Model, ModelConfig};
use tokmoe::train::{finetune, FinetuneConfig};
use tokmoe::Error;

fn cycle(n: usize) -> Graph {
    let edges: Vec<(usize, usize)> = (0..n).map(|v| (v, (v + 1) % n)).collect();
    Graph::unlabeled(n, &edges, Tensor::full(&[n, 2], 1.0)).unwrap()
}

fn sizes(m: &tokmoe::eval::BucketMap) -> Vec<usize> {
    m.buckets.iter().map(|b| b.nodes.len()).collect()
}

#[test]
fn degree_buckets_on_twenty_nodes() {
    // Star-like degrees: node v links to all of 0..v/2, giving a spread of degrees.
    let mut edges = Vec::new();
    for v in 1..20 {
        for u in 0..v / 2 {
            edges.push((u, v));
        }
        edges.push((v - 1, v));
    }
    let g = Graph::unlabeled(20, &edges, Tensor::full(&[20, 2], 1.0)).unwrap();
    let m = build_degree_buckets(&g).unwrap();
    assert_eq!(sizes(&m), vec![3, 14, 3]);
    let mut order: Vec<usize> = (0..20).collect();
    order.sort_by_key(|&v| (g.degree(v), v));
    assert_eq!(m.get("ood_low").unwrap().nodes, order[..3].to_vec());
    assert_eq!(m.get("ood_high").unwrap().nodes, order[17..].to_vec());
    m.check_partition().unwrap();
}

#[test]
fn regular_graph_buckets_follow_index() {
    let m = build_degree_buckets(&cycle(20)).unwrap();
    assert_eq!(m.get("ood_low").unwrap().nodes, vec![0, 1, 2]);
    assert_eq!(m.get("id").unwrap().nodes, (3..17).collect::<Vec<_>>());
    assert_eq!(m.get("ood_high").unwrap().nodes, vec![17, 18, 19]);
}

#[test]
fn cora_sized_degree_buckets() {
    assert_eq!(BucketSpec::degree().positions(2708), vec![0, 406, 2302, 2708]);
    let m = build_degree_buckets(&cycle(2708)).unwrap();
    assert_eq!(sizes(&m), vec![406, 1896, 406]);
}

#[test]
fn small_graphs_are_refused() {
    assert!(matches!(build_degree_buckets(&cycle(19)), Err(Error::Protocol(_))));
    assert!(matches!(build_triobj_buckets(&cycle(49)), Err(Error::Protocol(_))));
}

#[test]
fn homophily_buckets_skip_invalid_nodes() {
    let n = 30;
    let mut x = vec![1.0; n * 2];
    x[2 * 7] = 0.0;
    x[2 * 7 + 1] = 0.0;
    let edges: Vec<(usize, usize)> = (0..n).map(|v| (v, (v + 1) % n)).collect();
    let g = Graph::unlabeled(n, &edges, Tensor::matrix(n, 2, x).unwrap()).unwrap();
    let m = build_homophily_buckets(&g).unwrap();
    assert_eq!(m.invalid, vec![7]);
    assert!(m.buckets.iter().all(|b| !b.nodes.contains(&7)));
    // All defined scores are 1, so the index order decides: 29 valid nodes, ⌊0.15·29⌋ = 4.
    assert_eq!(m.get("ood_low").unwrap().nodes, vec![0, 1, 2, 3]);
    assert_eq!(m.get("ood_high").unwrap().nodes, vec![26, 27, 28, 29]);
    m.check_partition().unwrap();
}

#[test]
fn triobj_quantiles_on_one_hundred_nodes() {
    let scores: Vec<Option<f64>> = (0..100).map(|v| Some(((v * 37) % 100) as f64)).collect();
    let m = buckets_from_scores(&scores, &BucketSpec::triobj()).unwrap();
    assert_eq!(sizes(&m), vec![10, 10, 10, 50, 20]);
    assert_eq!(m.get("unused").unwrap().role, Role::Unused);
    m.check_partition().unwrap();
}

fn sort_oracle(scores: &[Option<f64>]) -> Vec<usize> {
    let mut valid: Vec<usize> = (0..scores.len()).filter(|&v| scores[v].is_some()).collect();
    valid.sort_by(|&a, &b| scores[a].unwrap().partial_cmp(&scores[b].unwrap()).unwrap().then(a.cmp(&b)));
    valid
}

#[test]
fn planted_scores_match_the_sort_oracle() {
    let g = generate_sbm(&SbmSpec { n: 300, intra_prob: 0.05, inter_prob: 0.02, seed: 11, ..Default::default() }).unwrap();
    let scores = feature_homophily_scores(&g);
    let order = sort_oracle(&scores);
    let k = order.len();
    let h = build_homophily_buckets(&g).unwrap();
    let tail = k * 15 / 100;
    assert_eq!(order[..tail], h.get("ood_low").unwrap().nodes);
    assert_eq!(order[k - tail..], h.get("ood_high").unwrap().nodes);
    let t = build_triobj_buckets(&g).unwrap();
    let cut = |f: f64| (f * k as f64 + 1e-9).floor() as usize;
    assert_eq!(order[..cut(0.1)], t.get("ood3").unwrap().nodes);
    assert_eq!(order[cut(0.1)..cut(0.2)], t.get("ood2").unwrap().nodes);
    assert_eq!(order[cut(0.2)..cut(0.3)], t.get("ood1").unwrap().nodes);
}

proptest! {
    #[test]
    fn buckets_partition_random_scores(raw in proptest::collection::vec(proptest::option::weighted(0.9, -3i32..3), 50..200)) {
        let scores: Vec<Option<f64>> = raw.iter().map(|s| s.map(f64::from)).collect();
        let valid = scores.iter().filter(|s| s.is_some()).count();
        for spec in [BucketSpec::degree(), BucketSpec::triobj()] {
            match buckets_from_scores(&scores, &spec) {
                Ok(m) => {
                    m.check_partition().unwrap();
                    let flat: Vec<usize> = m.buckets.iter().flat_map(|b| b.nodes.clone()).collect();
                    let mut by_rank: Vec<usize> = m.buckets.iter().flat_map(|b| {
                        let mut nodes = b.nodes.clone();
                        nodes.sort_by(|&a, &c| scores[a].unwrap().partial_cmp(&scores[c].unwrap()).unwrap().then(a.cmp(&c)));
                        nodes
                    }).collect();
                    prop_assert_eq!(flat.len(), valid);
                    prop_assert_eq!(std::mem::take(&mut by_rank), sort_oracle(&scores));
                }
                Err(e) => prop_assert!(valid < spec.min_nodes, "{e}"),
            }
        }
    }

    #[test]
    fn allocation_covers_each_class(n in 3usize..500) {
        let (a, b, c) = allocate(n);
        prop_assert_eq!(a + b + c, n);
        prop_assert!(a >= 1 && b >= 1 && c >= 1);
        prop_assert!(a >= b);
    }
}

#[test]
fn allocation_examples() {
    assert_eq!(allocate(4), (2, 1, 1));
    assert_eq!(allocate(3), (1, 1, 1));
    assert_eq!(allocate(100), (50, 25, 25));
    assert_eq!(allocate(7), (4, 2, 1));
}

#[test]
fn stratified_split_is_deterministic_and_stratified() {
    let labels: Vec<Option<usize>> = (0..60).map(|v| if v % 10 == 9 { None } else { Some(v % 3) }).collect();
    let ids: Vec<usize> = (0..60).collect();
    let a = stratified_id_split(&ids, &labels, 5, SmallClass::Error).unwrap();
    let mut rev = ids.clone();
    rev.reverse();
    assert_eq!(a, stratified_id_split(&rev, &labels, 5, SmallClass::Error).unwrap());
    assert_ne!(a.train, stratified_id_split(&ids, &labels, 6, SmallClass::Error).unwrap().train);
    a.check().unwrap();
    assert_eq!(a.dropped, vec![9, 19, 29, 39, 49, 59]);
    for c in 0..3 {
        let count = |part: &[usize]| part.iter().filter(|&&v| labels[v] == Some(c)).count();
        let total = count(&a.train) + count(&a.val) + count(&a.test);
        assert_eq!((count(&a.train), count(&a.val), count(&a.test)), allocate(total));
    }
}

#[test]
fn small_classes_are_dropped_or_refused() {
    let labels = vec![Some(0), Some(0), Some(0), Some(0), Some(1), Some(1)];
    let ids: Vec<usize> = (0..6).collect();
    let p = stratified_id_split(&ids, &labels, 0, SmallClass::Exclude).unwrap();
    assert_eq!(p.dropped, vec![4, 5]);
    assert_eq!((p.train.len(), p.val.len(), p.test.len()), (2, 1, 1));
    assert!(matches!(stratified_id_split(&ids, &labels, 0, SmallClass::Error), Err(Error::Protocol(_))));
}

#[test]
fn plans_never_leak_ood_nodes() {
    let g = generate_sbm(&SbmSpec { n: 200, seed: 3, ..Default::default() }).unwrap();
    let buckets = build_degree_buckets(&g).unwrap();
    let mut plan = plan_for(&g, &buckets, 1, SmallClass::Error).unwrap();
    plan.check().unwrap();
    let leaked = plan.ood[0].1[0];
    plan.train.push(leaked);
    assert!(matches!(plan.check(), Err(Error::Protocol(_))));
}

fn small_model(seed: u64) -> Model {
    let encoder = EncoderConfig { hidden_dim: 16, ..Default::default() };
    let cfg = ModelConfig { encoder, in_dim: 8, d_q: 8, codebook_size: 16, num_classes: 2, interface: Interface::Quantized };
    Model::init(cfg, &mut TrainRng::new(seed)).unwrap()
}

fn trained(g: &Graph, seed: u64) -> (Model, tokmoe::eval::SplitPlan) {
    let buckets = build_triobj_buckets(g).unwrap();
    let plan = plan_for(g, &buckets, seed, SmallClass::Exclude).unwrap();
    let mut m = small_model(seed);
    let cfg = FinetuneConfig { lr: 0.01, epochs: 80, patience: 30, dropout: 0.3, seed, ..Default::default() };
    finetune(g, &plan.as_split(), &cfg, &mut m).unwrap();
    (m, plan)
}

#[test]
fn perturb_suite_rate_zero_and_determinism() {
    let g = generate_sbm(&SbmSpec { n: 200, seed: 4, ..Default::default() }).unwrap();
    let (m, plan) = trained(&g, 4);
    let hash = m.state_hash();
    let clean = m.accuracy(&g, &plan.test).unwrap();
    for kind in [PerturbKind::Feature, PerturbKind::Edge] {
        let r = run_perturb_suite(&m, &g, &plan.test, &[0.0, 0.5], kind, 3, 9).unwrap();
        assert_eq!(r[0].mean, clean);
        assert!(r[0].trials.iter().all(|&a| a == clean));
        let again = run_perturb_suite(&m, &g, &plan.test, &[0.0, 0.5], kind, 3, 9).unwrap();
        assert_eq!(r, again);
        let one = run_perturb_suite(&m, &g, &plan.test, &[0.5], kind, 1, 9).unwrap();
        assert_eq!(one, run_perturb_suite(&m, &g, &plan.test, &[0.5], kind, 1, 9).unwrap());
    }
    assert_eq!(m.state_hash(), hash);
}

#[test]
fn fully_masked_constant_model_scores_majority_rate() {
    let g = generate_sbm(&SbmSpec { n: 101, seed: 5, ..Default::default() }).unwrap();
    let mut m = small_model(5);
    *m.tensor_mut("head.w").unwrap() = Tensor::zeros(&[2, 8]);
    *m.tensor_mut("head.b").unwrap() = Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap();
    let test: Vec<usize> = (0..101).collect();
    let r = run_perturb_suite(&m, &g, &test, &[1.0], PerturbKind::Feature, 2, 0).unwrap();
    let zeros = (0..101).filter(|&v| g.label(v) == Some(0)).count() as f64 / 101.0;
    assert_eq!(r[0].mean, zeros);
}

#[test]
fn frozen_check_detects_any_change() {
    let mut m = small_model(6);
    let h = m.state_hash();
    verify_frozen(&m, &h, "test").unwrap();
    m.tensor_mut("proj.b").unwrap().data_mut()[0] += 1e-300;
    assert!(matches!(verify_frozen(&m, &h, "test"), Err(Error::FrozenState(_))));
}

#[test]
fn triobj_arithmetic() {
    let row = TriObjRow::from_parts(
        0,
        0.8731,
        vec![("ood3".into(), 0.7845), ("ood2".into(), 0.80), ("ood1".into(), 0.81)],
        TRIOBJ_MASK_RATES.iter().map(|&r| (r, 0.8588)).collect(),
    )
    .unwrap();
    assert_eq!(row.ood_worst, 0.7845);
    assert!((100.0 * row.avg - 83.88).abs() < 5e-3);
    assert!((row.avg - (row.fit + row.ood_worst + row.perturb_mean) / 3.0).abs() <= 1e-9);
    let flat = TriObjRow::from_parts(0, 1.0, vec![("ood1".into(), 1.0)], vec![(0.2, 0.8), (0.4, 0.8), (0.6, 0.8), (0.8, 0.8)]).unwrap();
    assert!((flat.perturb_mean - 0.8).abs() <= 1e-15);
}

#[test]
fn perfect_classifier_with_no_masking() {
    let g = generate_sbm(&SbmSpec { n: 200, feature_signal: 12.0, inter_prob: 0.0, seed: 7, ..Default::default() }).unwrap();
    let (m, plan) = trained(&g, 7);
    let row = triobj_report(&m, &plan, &g, &[0.0], 2).unwrap();
    assert_eq!((row.fit, row.ood_worst, row.perturb_mean, row.avg), (1.0, 1.0, 1.0, 1.0));
}

#[test]
fn report_is_deterministic_and_consistent() {
    let g = generate_sbm(&SbmSpec { n: 200, seed: 8, ..Default::default() }).unwrap();
    let mut report = MetricsReport::default();
    for seed in [1, 2] {
        let (m, plan) = trained(&g, seed);
        let row = triobj_report(&m, &plan, &g, &TRIOBJ_MASK_RATES, 3).unwrap();
        assert_eq!(row, triobj_report(&m, &plan, &g, &TRIOBJ_MASK_RATES, 3).unwrap());
        assert!((row.avg - (row.fit + row.ood_worst + row.perturb_mean) / 3.0).abs() <= 1e-9);
        report.push(row).unwrap();
    }
    let csv = report.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[0].starts_with("seed,fit,ood3,ood2,ood1,ood_worst,perturb@0.2"));
    assert!(lines[3].starts_with("summary,"));
    let text = report.to_text();
    for key in ["Fit", "OOD-worst", "Perturb-mean", "Avg"] {
        assert!(text.contains(key));
    }
}

#[test]
fn per_class_split_takes_twenty_per_class() {
    let g = generate_sbm(&SbmSpec { n: 300, num_blocks: 3, seed: 4, ..SbmSpec::default() }).unwrap();
    let s = per_class_split(&g, 20, 50, 100, 9).unwrap();
    assert_eq!(s.train.len(), 60);
    for c in 0..3 {
        assert_eq!(s.train.iter().filter(|&&v| g.label(v) == Some(c)).count(), 20);
    }
    assert_eq!((s.val.len(), s.test.len()), (50, 100));
    s.validate(&g).unwrap();
    assert_eq!(s, per_class_split(&g, 20, 50, 100, 9).unwrap());
    assert!(per_class_split(&g, 20, 200, 100, 9).is_err());
}
