//! Property tests against brute-force oracles.

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use meg::eval::{auc, MetricsReport};
use meg::model::graph::aggregate;
use meg::model::{EvidenceSet, MegModel, ModelConfig, NodeRef};
use meg::numeric::{dot, l2_norm};
use meg::store::{Dataset, Label, Package, Schema, Split};
use meg::synth::{generate, nearest_entity, GenerationConfig};

fn vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        if l2_norm(&v) > 1e-3 {
            return v;
        }
    }
}

fn package(rng: &mut ChaCha8Rng, id: String, split: Split, schema: &Schema) -> Package {
    Package {
        id,
        split,
        label: Label::Clean,
        entity_id: String::new(),
        modalities: schema.modalities().map(|(m, d)| (m.to_string(), vector(rng, d))).collect(),
    }
}

fn schema() -> Schema {
    Schema::new([("image".to_string(), 5), ("text".to_string(), 3)])
}

fn brute_force(refs: &[Package], query: &Package, k: usize) -> Vec<String> {
    let mut scored: Vec<(f64, &str)> = refs
        .iter()
        .map(|r| {
            let s = query
                .modalities
                .iter()
                .filter_map(|(m, q)| {
                    let v = r.modality(m)?;
                    Some(dot(q, v) / (l2_norm(q) * l2_norm(v)))
                })
                .sum();
            (s, r.id.as_str())
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)));
    scored.into_iter().take(k).map(|(_, id)| id.to_string()).collect()
}

/// Trapezoidal area under the ROC curve; exact for tie-free scores.
fn trapezoid_auc(scores: &[(f64, bool)]) -> f64 {
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let pos = scores.iter().filter(|s| s.1).count() as f64;
    let neg = scores.len() as f64 - pos;
    let (mut tp, mut area) = (0.0, 0.0);
    for (_, y) in sorted {
        if y {
            tp += 1.0;
        } else {
            area += tp;
        }
    }
    area / (pos * neg)
}

fn pairwise_auc(scores: &[(f64, bool)]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (p, _) in scores.iter().filter(|s| s.1) {
        for (n, _) in scores.iter().filter(|s| !s.1) {
            pairs += 1.0;
            wins += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / pairs
}

fn labelled_scores() -> impl Strategy<Value = Vec<(f64, bool)>> {
    prop::collection::vec((0u32..50, any::<bool>()), 2..60)
        .prop_filter("both classes", |v| v.iter().any(|s| s.1) && v.iter().any(|s| !s.1))
        .prop_map(|v| v.into_iter().map(|(s, y)| (s as f64 / 50.0, y)).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn retrieval_matches_full_scan(seed in any::<u64>(), n_refs in 1usize..40, k_raw in 1usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let schema = schema();
        let refs: Vec<Package> = (0..n_refs).map(|i| package(&mut rng, format!("r{i:03}"), Split::Reference, &schema)).collect();
        let ds = Dataset::from_packages(schema.clone(), refs.clone()).unwrap();
        let k = k_raw.min(n_refs);
        for _ in 0..5 {
            let q = package(&mut rng, "q".into(), Split::Test, &schema);
            let got: Vec<String> = ds.retrieve(&q, k).unwrap().ids().map(str::to_string).collect();
            prop_assert_eq!(got, brute_force(&refs, &q, k));
        }
    }

    #[test]
    fn retrieval_ignores_ingestion_order(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let schema = schema();
        let mut refs: Vec<Package> = (0..20).map(|i| package(&mut rng, format!("r{i:03}"), Split::Reference, &schema)).collect();
        // duplicate vectors force id tie-breaks
        refs[7].modalities = refs[3].modalities.clone();
        let a = Dataset::from_packages(schema.clone(), refs.clone()).unwrap();
        refs.shuffle(&mut rng);
        let b = Dataset::from_packages(schema.clone(), refs).unwrap();
        for _ in 0..5 {
            let q = package(&mut rng, "q".into(), Split::Test, &schema);
            prop_assert_eq!(a.retrieve(&q, 8).unwrap(), b.retrieve(&q, 8).unwrap());
        }
    }

    #[test]
    fn gnn_output_is_permutation_invariant(seed in any::<u64>(), k in 1usize..9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let schema = schema();
        let cfg = ModelConfig { hidden: 12, node_dim: 6, detector_hidden: 10, ..ModelConfig::default() };
        let model = MegModel::new(cfg, &schema, seed).unwrap();
        let q = package(&mut rng, "q".into(), Split::Test, &schema);
        let refs = (0..k).map(|i| package(&mut rng, format!("r{i}"), Split::Reference, &schema)).collect();
        let es = EvidenceSet::new(q, refs).unwrap();
        let base = model.predict(&es).unwrap();
        for _ in 0..10 {
            let mut order: Vec<usize> = (0..k).collect();
            order.shuffle(&mut rng);
            let p = model.predict(&es.permuted(&order)).unwrap();
            prop_assert!((p - base).abs() <= 1e-9 * base.abs());
        }
    }

    #[test]
    fn aggregation_is_bounded(seed in any::<u64>(), n in 1usize..12, cross in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nodes: Vec<NodeRef> = (0..n).map(|i| NodeRef { modality: rng.random_range(0..2), evidence: i }).collect();
        let hidden: Vec<Vec<f64>> = (0..n).map(|_| (0..4).map(|_| rng.random_range(-5.0..5.0)).collect()).collect();
        let b0: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b1: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a = aggregate(&nodes, &hidden, &[&b0, &b1], cross, 1e-8);
        let inf = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let h_max = hidden.iter().map(|h| inf(h)).fold(0.0, f64::max);
        for (v, av) in a.iter().enumerate() {
            let b = if nodes[v].modality == 0 { &b0 } else { &b1 };
            let adjacent = (0..n).filter(|&u| u != v && (cross || nodes[u].modality == nodes[v].modality)).count();
            if adjacent > 0 {
                prop_assert!(inf(av) <= h_max + inf(b) + 1e-12);
            }
        }
    }

    #[test]
    fn auc_matches_trapezoid_on_distinct_scores(seed in any::<u64>(), n in 2usize..80) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut scores: Vec<(f64, bool)> = (0..n).map(|i| (i as f64 / n as f64, rng.random::<bool>())).collect();
        scores[0].1 = true;
        scores[1].1 = false;
        scores.shuffle(&mut rng);
        prop_assert!((auc(&scores).unwrap() - trapezoid_auc(&scores)).abs() <= 1e-12);
    }

    #[test]
    fn auc_matches_pair_count_with_ties(scores in labelled_scores()) {
        prop_assert!((auc(&scores).unwrap() - pairwise_auc(&scores)).abs() <= 1e-12);
    }

    #[test]
    fn metrics_ignore_example_order(scores in labelled_scores(), seed in any::<u64>()) {
        let probs: Vec<f64> = scores.iter().map(|s| s.0).collect();
        let labels: Vec<bool> = scores.iter().map(|s| s.1).collect();
        let a = MetricsReport::from_scores(&probs, &labels, 0.5).unwrap();
        let mut shuffled = scores.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let probs: Vec<f64> = shuffled.iter().map(|s| s.0).collect();
        let labels: Vec<bool> = shuffled.iter().map(|s| s.1).collect();
        let b = MetricsReport::from_scores(&probs, &labels, 0.5).unwrap();
        prop_assert_eq!(a, b);
    }
}

fn small_generation(seed: u64) -> GenerationConfig {
    GenerationConfig {
        num_entities: 12,
        packages_per_entity: 8,
        modality_dims: BTreeMap::from([("image".into(), 6), ("location".into(), 3), ("text".into(), 6)]),
        seed,
        ..GenerationConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn same_seed_gives_identical_manifests(seed in any::<u64>()) {
        let a = generate(&small_generation(seed)).unwrap();
        let b = generate(&small_generation(seed)).unwrap();
        prop_assert_eq!(a.manifest_bytes(), b.manifest_bytes());
        prop_assert_eq!(a.audit_bytes(), b.audit_bytes());
    }

    #[test]
    fn query_splits_have_disjoint_entities(seed in any::<u64>()) {
        let data = generate(&small_generation(seed)).unwrap();
        let splits = [Split::Train, Split::Val, Split::Test];
        for (i, a) in splits.iter().enumerate() {
            for b in &splits[i + 1..] {
                let x = data.entities_in(*a);
                let y = data.entities_in(*b);
                prop_assert!(x.is_disjoint(&y));
            }
        }
    }

    #[test]
    fn tampered_packages_differ_in_exactly_the_audited_modality(seed in any::<u64>()) {
        let data = generate(&small_generation(seed)).unwrap();
        let by_id: BTreeMap<&str, &Package> = data.packages.iter().map(|p| (p.id.as_str(), p)).collect();
        for record in &data.audit {
            let p = by_id[record.id.as_str()];
            prop_assert!(p.label.is_tampered());
            let changed: BTreeSet<&str> = record.clean_counterfactual.keys().map(String::as_str).collect();
            prop_assert_eq!(changed.len(), 1);
            for (m, v) in &record.clean_counterfactual {
                prop_assert_ne!(&p.modalities[m], v);
            }
        }
    }

    #[test]
    fn nearest_entity_matches_pairwise_scan(seed in any::<u64>()) {
        let data = generate(&GenerationConfig { num_entities: 5, ..small_generation(seed) }).unwrap();
        let sim = |a: usize, b: usize| -> f64 {
            data.entities[a]
                .centroids
                .iter()
                .map(|(m, c)| {
                    let d = &data.entities[b].centroids[m];
                    dot(c, d) / (l2_norm(c) * l2_norm(d))
                })
                .sum()
        };
        for i in 0..data.entities.len() {
            let mut best: Option<usize> = None;
            for j in 0..data.entities.len() {
                if j != i && best.is_none_or(|b| sim(i, j) > sim(i, b)) {
                    best = Some(j);
                }
            }
            let expected = data.entities[best.unwrap()].entity_id.as_str();
            prop_assert_eq!(nearest_entity(&data.entities[i].entity_id, &data.entities), Some(expected));
        }
    }
}
