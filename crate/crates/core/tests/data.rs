use proptest::prelude::*;
use ssfg::data::{
    assign_communities, gen_regression_task, gen_sbm_graph_task, gen_sbm_node_task, load_dataset, metadata_pairs,
    parse_dataset, regression_target, repair_connectivity, sample_block_edges, save_dataset, to_canonical_json,
    types_from_features, GeneratorSpec, Regime, RegressionSpec, SbmGraphSpec, SbmSpec, SplitFractions, Target,
};
use ssfg::graphnet::components;
use ssfg::rng::RngStream;
use ssfg::Error;

fn small_node_spec(seed: u64) -> SbmSpec {
    SbmSpec { num_graphs: 24, nodes_min: 12, nodes_max: 18, communities: 3, seed, ..SbmSpec::default() }
}

#[test]
fn same_seed_same_bytes() {
    let a = to_canonical_json(&gen_sbm_node_task(&small_node_spec(3)).unwrap()).unwrap();
    let b = to_canonical_json(&gen_sbm_node_task(&small_node_spec(3)).unwrap()).unwrap();
    let c = to_canonical_json(&gen_sbm_node_task(&small_node_spec(4)).unwrap()).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn graph_depends_only_on_seed_and_index() {
    let short = gen_sbm_node_task(&SbmSpec { num_graphs: 5, ..small_node_spec(1) }).unwrap();
    let long = gen_sbm_node_task(&small_node_spec(1)).unwrap();
    assert_eq!(short.graphs[..], long.graphs[..5]);
}

#[test]
fn default_node_task_shape() {
    let d = gen_sbm_node_task(&SbmSpec::default()).unwrap();
    assert_eq!(d.graphs.len(), 400);
    assert_eq!((d.splits.train.len(), d.splits.val.len(), d.splits.test.len()), (300, 50, 50));
    assert_eq!(d.feature_dim, 6);
    assert_eq!(d.num_outputs(), 6);
    for g in &d.graphs {
        assert!((40..=60).contains(&g.n));
        assert_eq!(components(g.n, &g.pairs()).len(), 1);
        let Target::Nodes(labels) = &g.y else { panic!("node labels expected") };
        let mut counts = [0usize; 6];
        for &l in labels {
            counts[l] += 1;
        }
        assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
        let revealed: Vec<usize> = (0..g.n).filter(|&i| g.x[i].iter().any(|&v| v != 0.0)).collect();
        assert_eq!(revealed.len(), (0.2 * g.n as f64).round() as usize);
        for &i in &revealed {
            assert_eq!(g.x[i][labels[i]], 1.0);
            assert_eq!(g.x[i].iter().sum::<f64>(), 1.0);
        }
        for &[a, b] in &g.edges {
            assert!(a < b);
        }
    }
}

#[test]
fn intra_density_exceeds_inter() {
    let d = gen_sbm_node_task(&SbmSpec { num_graphs: 40, ..SbmSpec::default() }).unwrap();
    let (mut intra, mut intra_pairs, mut inter, mut inter_pairs) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for g in &d.graphs {
        let Target::Nodes(l) = &g.y else { unreachable!() };
        for i in 0..g.n {
            for j in i + 1..g.n {
                if l[i] == l[j] {
                    intra_pairs += 1.0;
                } else {
                    inter_pairs += 1.0;
                }
            }
        }
        for &[a, b] in &g.edges {
            if l[a] == l[b] {
                intra += 1.0;
            } else {
                inter += 1.0;
            }
        }
    }
    assert!((intra / intra_pairs - 0.5).abs() < 0.02, "{}", intra / intra_pairs);
    assert!((inter / inter_pairs - 0.05).abs() < 0.01, "{}", inter / inter_pairs);
}

#[test]
fn separate_communities_need_k_minus_one_bridges() {
    let mut rng = RngStream::new(11);
    let labels = assign_communities(30, 5, &mut rng);
    let mut edges = sample_block_edges(&labels, 1.0, 0.0, &mut rng);
    let comps = components(30, &edges);
    assert_eq!(comps.len(), 5);
    for c in &comps {
        assert!(c.iter().all(|&i| labels[i] == labels[c[0]]));
    }
    let before = edges.len();
    assert_eq!(repair_connectivity(30, &mut edges, &mut rng), 4);
    assert_eq!(edges.len(), before + 4);
    assert_eq!(components(30, &edges).len(), 1);
}

#[test]
fn graph_task_labels_and_features() {
    let spec = SbmGraphSpec { num_graphs: 40, seed: 2, ..SbmGraphSpec::default() };
    let d = gen_sbm_graph_task(&spec).unwrap();
    let ones = d.graphs.iter().filter(|g| g.y == Target::Class(1)).count();
    assert_eq!(ones, 20);
    assert_eq!(d.num_outputs(), 2);
    for g in &d.graphs {
        assert_eq!(components(g.n, &g.pairs()).len(), 1);
        let mut deg = vec![0usize; g.n];
        for &[a, b] in &g.edges {
            deg[a] += 1;
            deg[b] += 1;
        }
        for i in 0..g.n {
            let hot = g.x[i].iter().position(|&v| v == 1.0).unwrap();
            assert_eq!(hot, (deg[i] / spec.bucket_width).min(spec.degree_buckets - 1));
            assert_eq!(g.x[i].iter().sum::<f64>(), 1.0);
        }
    }
}

#[test]
fn separated_regimes_split_by_mean_degree() {
    let spec = SbmGraphSpec {
        num_graphs: 200,
        regime_a: Regime { p_intra: 0.9, q_inter: 0.1 },
        regime_b: Regime { p_intra: 0.1, q_inter: 0.02 },
        seed: 9,
        ..SbmGraphSpec::default()
    };
    let d = gen_sbm_graph_task(&spec).unwrap();
    let mean_degree = |i: usize| 2.0 * d.graphs[i].edges.len() as f64 / d.graphs[i].n as f64;
    let label = |i: usize| match d.graphs[i].y {
        Target::Class(k) => k,
        _ => unreachable!(),
    };
    // Threshold fitted on the training split, scored on the rest.
    let train = &d.splits.train;
    let class_mean = |k: usize| {
        let v: Vec<f64> = train.iter().filter(|&&i| label(i) == k).map(|&i| mean_degree(i)).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let cut = 0.5 * (class_mean(0) + class_mean(1));
    let held: Vec<usize> = d.splits.val.iter().chain(&d.splits.test).copied().collect();
    let hits = held.iter().filter(|&&i| (mean_degree(i) < cut) == (label(i) == 1)).count();
    assert!(hits as f64 / held.len() as f64 > 0.95);
}

#[test]
fn regression_rule_oracle() {
    let spec = RegressionSpec {
        num_graphs: 40_000,
        nodes_min: 4,
        nodes_max: 8,
        edge_prob: 0.4,
        noise_sd: 0.1,
        split: SplitFractions { train: 0.25, val: 0.25 },
        seed: 5,
        ..RegressionSpec::default()
    };
    let d = gen_regression_task(&spec).unwrap();
    let pairs = metadata_pairs(&d).unwrap();
    assert_eq!(pairs, vec![(0, 1)]);
    let test = &d.splits.test;
    let mae = test
        .iter()
        .map(|&i| {
            let g = &d.graphs[i];
            let pred = regression_target(g.n, &types_from_features(&g.x), &g.pairs(), &pairs);
            (pred - g.y.as_value().unwrap()).abs()
        })
        .sum::<f64>()
        / test.len() as f64;
    let bound = 0.1 * (2.0 / std::f64::consts::PI).sqrt() * 1.01;
    assert!(mae <= bound, "{mae} > {bound}");
}

#[test]
fn noise_free_regression_is_exact() {
    let spec = RegressionSpec { num_graphs: 30, noise_sd: 0.0, rule: 1, ..RegressionSpec::default() };
    let d = gen_regression_task(&spec).unwrap();
    let pairs = metadata_pairs(&d).unwrap();
    for g in &d.graphs {
        let y = regression_target(g.n, &types_from_features(&g.x), &g.pairs(), &pairs);
        assert_eq!(g.y, Target::Value(y));
    }
}

#[test]
fn save_load_save_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    for (k, spec) in [
        GeneratorSpec::SbmNode(small_node_spec(1)),
        GeneratorSpec::SbmGraph(SbmGraphSpec { num_graphs: 10, ..SbmGraphSpec::default() }),
        GeneratorSpec::Regression(RegressionSpec { num_graphs: 10, ..RegressionSpec::default() }),
    ]
    .into_iter()
    .enumerate()
    {
        let d = spec.generate().unwrap();
        let p1 = dir.path().join(format!("a{k}.json"));
        let p2 = dir.path().join(format!("b{k}.json"));
        save_dataset(&d, &p1).unwrap();
        let loaded = load_dataset(&p1).unwrap();
        assert_eq!(loaded, d);
        save_dataset(&loaded, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }
}

#[test]
fn floats_carry_seventeen_digits() {
    let d = gen_regression_task(&RegressionSpec { num_graphs: 3, ..RegressionSpec::default() }).unwrap();
    let text = to_canonical_json(&d).unwrap();
    assert!(text.contains("1.0000000000000000e0"));
    let y = d.graphs[0].y.as_value().unwrap();
    assert!(text.contains(&format!("{y:.16e}")));
}

#[test]
fn out_of_range_edge_names_graph_and_edge() {
    let mut d = gen_sbm_node_task(&small_node_spec(1)).unwrap();
    let n = d.graphs[2].n;
    d.graphs[2].edges[3] = [0, n];
    let text = to_canonical_json(&d).unwrap();
    match parse_dataset(&text) {
        Err(Error::Validation(msg)) => {
            assert!(msg.contains("graph 2") && msg.contains("edge 3"), "{msg}");
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn truncated_file_is_rejected() {
    let d = gen_sbm_node_task(&small_node_spec(1)).unwrap();
    let text = to_canonical_json(&d).unwrap();
    let cut = &text[..text.len() / 2];
    assert!(matches!(parse_dataset(cut), Err(Error::Parse { .. })));
}

#[test]
fn malformed_record_reports_index() {
    let d = gen_sbm_node_task(&small_node_spec(1)).unwrap();
    let mut v = serde_json::to_value(&d).unwrap();
    v["graphs"][4]["n"] = serde_json::json!("many");
    match parse_dataset(&v.to_string()) {
        Err(Error::Parse { record, .. }) => assert_eq!(record, Some(4)),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn splits_must_partition() {
    let mut d = gen_sbm_node_task(&small_node_spec(1)).unwrap();
    let moved = d.splits.test.pop().unwrap();
    d.splits.train.push(moved);
    d.splits.train.push(moved);
    assert!(matches!(d.validate(), Err(Error::Validation(_))));
}

#[test]
fn generator_spec_json() {
    let text = r#"{"kind": "sbm_node", "num_graphs": 8, "nodes_min": 10, "nodes_max": 10, "communities": 2}"#;
    let spec: GeneratorSpec = serde_json::from_str(text).unwrap();
    let d = spec.generate().unwrap();
    assert_eq!(d.graphs.len(), 8);
    assert!(d.graphs.iter().all(|g| g.n == 10));
    let bad = r#"{"kind": "sbm_node", "p_intra": 0.01, "q_inter": 0.5}"#;
    let spec: GeneratorSpec = serde_json::from_str(bad).unwrap();
    assert!(matches!(spec.generate(), Err(Error::Config(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn generated_graphs_are_connected_and_valid(
        seed in any::<u64>(),
        k in 2usize..5,
        p in 0.05f64..1.0,
        q_frac in 0.0f64..1.0,
    ) {
        let spec = SbmSpec {
            num_graphs: 4, nodes_min: 6, nodes_max: 14, communities: k,
            p_intra: p, q_inter: p * q_frac * 0.99, seed, ..SbmSpec::default()
        };
        let d = gen_sbm_node_task(&spec).unwrap();
        d.validate().unwrap();
        for g in &d.graphs {
            prop_assert_eq!(components(g.n, &g.pairs()).len(), 1);
        }
        let again = parse_dataset(&to_canonical_json(&d).unwrap()).unwrap();
        prop_assert_eq!(again, d);
    }
}
