use proptest::prelude::*;

use shoprank::corpus::{aggregate, format_catalogue, format_sessions, parse_catalogue, parse_sessions, Catalogue, Counts, Event, Product, SessionLog};
use shoprank::embed::{product_vector, EmbeddingTable};
use shoprank::eval::{bin_grades, dcg, ndcg, Gain};
use shoprank::featurize::{assemble, compute_targets, dae_encode, dae_train, Block, DaeConfig, FeatureMask, FeatureVector};
use shoprank::rank::{
    gbm_train, lambda_gradients, lambdamart_train, pairwise_gradient, pairwise_loss, rf_train, ranknet_train, GbmParams,
    LambdaMartParams, ModelParams, RankData, RankNetParams, RfParams, TrainingGroup, TrainingRow,
};
use shoprank::segment::{coherency_score, svm_train, Thresholds, SegmentLabel, SvmParams};
use shoprank::util::{rng, shuffle};

fn event_strategy() -> impl Strategy<Value = (u32, u8, u32)> {
    // product, funnel depth 0..=3, revenue cents
    (1u32..6, 0u8..4, 1u32..50_000)
}

fn session_strategy() -> impl Strategy<Value = SessionLog> {
    (0u32..30, 0usize..3, prop::collection::vec(event_strategy(), 1..6)).prop_map(|(day, q, evs)| SessionLog {
        session_id: 0,
        day,
        query: ["shirts", "red shirts", "jeans"][q].to_string(),
        events: evs
            .into_iter()
            .enumerate()
            .map(|(i, (p, depth, cents))| Event {
                product_id: p,
                position: i as u32 + 1,
                clicked: depth >= 1,
                carted: depth >= 2,
                purchased: depth >= 3,
                revenue: if depth >= 3 { f64::from(cents) / 100.0 } else { 0.0 },
            })
            .collect(),
    })
}

fn logs_strategy() -> impl Strategy<Value = Vec<SessionLog>> {
    prop::collection::vec(session_strategy(), 1..25).prop_map(|mut logs| {
        for (i, l) in logs.iter_mut().enumerate() {
            l.session_id = i as u64 + 1;
        }
        logs
    })
}

fn unit_vectors(dim: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-1.0f64..1.0, dim), 1..20).prop_filter_map("zero vector", |vs| {
        vs.into_iter()
            .map(|v| {
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                (n > 1e-3).then(|| v.iter().map(|x| x / n).collect())
            })
            .collect()
    })
}

fn rank_data(groups: &[Vec<(Vec<f64>, u8)>]) -> RankData {
    let n_features = groups[0][0].0.len();
    let mut pid = 0;
    let groups = groups
        .iter()
        .enumerate()
        .map(|(q, rows)| TrainingGroup {
            query_id: q as u32,
            rows: rows
                .iter()
                .map(|(x, g)| {
                    pid += 1;
                    TrainingRow {
                        product_id: pid,
                        features: x.clone(),
                        target: f64::from(*g),
                        grade: *g,
                    }
                })
                .collect(),
        })
        .collect();
    RankData::new(FeatureMask::ALL, n_features, groups).unwrap()
}

fn group_strategy() -> impl Strategy<Value = Vec<Vec<(Vec<f64>, u8)>>> {
    prop::collection::vec(prop::collection::vec((prop::collection::vec(-2.0f64..2.0, 3), 0u8..4), 2..8), 1..4)
        .prop_filter("needs a graded pair", |gs| {
            gs.iter().any(|g| g.iter().any(|r| r.1 > 0) && g.iter().any(|r| r.1 != g[0].1))
        })
}

fn brute_force_ndcg(grades: &[u8], k: usize, gain: Gain) -> Option<f64> {
    fn permute(items: &mut Vec<u8>, i: usize, best: &mut f64, k: usize, gain: Gain) {
        if i == items.len() {
            *best = best.max(dcg(items, k, gain));
            return;
        }
        for j in i..items.len() {
            items.swap(i, j);
            permute(items, i + 1, best, k, gain);
            items.swap(i, j);
        }
    }
    let mut best = 0.0;
    permute(&mut grades.to_vec(), 0, &mut best, k, gain);
    (best > 0.0).then(|| dcg(grades, k, gain) / best)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn aggregation_is_order_independent(logs in logs_strategy(), seed in any::<u64>()) {
        let mut shuffled = logs.clone();
        shuffle(&mut shuffled, &mut rng(seed));
        prop_assert_eq!(aggregate(&logs).unwrap(), aggregate(&shuffled).unwrap());
    }

    #[test]
    fn aggregation_merge_is_associative_and_commutative(logs in logs_strategy(), cut in 0usize..25) {
        let cut = cut.min(logs.len());
        let (a, b) = logs.split_at(cut);
        let whole = aggregate(&logs).unwrap();
        let mut left = shoprank::corpus::Aggregates::default();
        a.iter().for_each(|l| left.add_session(l));
        let mut right = shoprank::corpus::Aggregates::default();
        b.iter().for_each(|l| right.add_session(l));
        let mut ab = left.clone();
        ab.merge(&right);
        let mut ba = right;
        ba.merge(&left);
        prop_assert_eq!(&ab, &whole);
        prop_assert_eq!(&ba, &whole);
    }

    #[test]
    fn funnel_is_monotone(logs in logs_strategy()) {
        for (_, _, c) in aggregate(&logs).unwrap().iter() {
            prop_assert!(c.impressions >= c.clicks && c.clicks >= c.carts && c.carts >= c.purchases);
            if c.revenue_micros > 0 {
                prop_assert!(c.purchases > 0);
            }
        }
    }

    #[test]
    fn session_file_round_trips(logs in logs_strategy()) {
        let text = format_sessions(&logs);
        let back = parse_sessions(&text, "mem").unwrap();
        prop_assert_eq!(format_sessions(&back), text);
    }

    #[test]
    fn catalogue_file_round_trips(rows in prop::collection::vec((1u32..10_000, 0u32..500, 0usize..3, 0usize..3), 1..20)) {
        let mut seen = std::collections::BTreeSet::new();
        let products: Vec<Product> = rows
            .into_iter()
            .filter(|r| seen.insert(r.0))
            .map(|(id, cents, b, c)| {
                let attrs = vec![
                    ("brand".to_string(), ["zara", "levis", "puma"][b].to_string()),
                    ("article_type".to_string(), "tshirt".to_string()),
                    ("color".to_string(), ["red", "blue", "black"][c].to_string()),
                ];
                Product::new(id, f64::from(cents) / 100.0 + 1.0, cents, attrs).unwrap()
            })
            .collect();
        let cat = Catalogue::new(products).unwrap();
        let text = format_catalogue(&cat);
        prop_assert_eq!(format_catalogue(&parse_catalogue(&text, "mem").unwrap()), text);
    }

    #[test]
    fn product_vector_is_linear_in_attribute_vectors(vs in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 4), 3), c in -5.0f64..5.0) {
        let p = Product::new(1, 10.0, 1, vec![
            ("brand".into(), "zara".into()),
            ("article_type".into(), "shirt".into()),
            ("color".into(), "red".into()),
        ]).unwrap();
        let tokens = ["brand=zara", "article_type=shirt", "color=red"];
        let mut t = EmbeddingTable::new(4).unwrap();
        let mut scaled = EmbeddingTable::new(4).unwrap();
        for (tok, v) in tokens.iter().zip(&vs) {
            t.insert(*tok, v.clone()).unwrap();
            scaled.insert(*tok, v.iter().map(|x| c * x).collect()).unwrap();
        }
        let base = product_vector(&p, &t).vector;
        let got = product_vector(&p, &scaled).vector;
        for (g, b) in got.iter().zip(&base) {
            prop_assert!((g - c * b).abs() <= 1e-12 * (1.0 + b.abs() * c.abs()));
        }
    }

    #[test]
    fn coherency_is_permutation_invariant(vs in unit_vectors(5), seed in any::<u64>()) {
        let mut perm = vs.clone();
        shuffle(&mut perm, &mut rng(seed));
        let a = coherency_score(&vs).unwrap().score;
        let b = coherency_score(&perm).unwrap().score;
        prop_assert!((a - b).abs() < 1e-12, "{} vs {}", a, b);
    }

    #[test]
    fn threshold_label_is_monotone(a in -1.0f64..1.5, b in -1.0f64..1.5) {
        let t = Thresholds::default();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        if t.label(lo) == SegmentLabel::Narrow {
            prop_assert_eq!(t.label(hi), SegmentLabel::Narrow);
        }
    }

    #[test]
    fn conversion_never_exceeds_ctr(i in 1u64..1000, fc in 0.0f64..1.0, fb in 0.0f64..1.0) {
        let clicks = (i as f64 * fc) as u64;
        let carts = (clicks as f64 * fb) as u64;
        let t = compute_targets(&Counts { impressions: i, clicks, carts, purchases: 0, revenue_micros: 0 }, 1e-6).unwrap();
        prop_assert!(t.conv <= t.ctr);
    }

    #[test]
    fn assembled_blocks_match_standalone(
        q in prop::collection::vec(-1.0f64..1.0, 0..5),
        qp in prop::collection::vec(-1.0f64..1.0, 0..5),
        pop in prop::collection::vec(-1.0f64..1.0, 0..5),
        phys in prop::collection::vec(-1.0f64..1.0, 0..5),
    ) {
        let fv = FeatureVector { query_block: q, qp_block: qp, pop_block: pop, phys_block: phys };
        let full = assemble(FeatureMask::ALL, &fv);
        let mut offset = 0;
        for (i, b) in Block::ALL.into_iter().enumerate() {
            let mut flags = [false; 4];
            flags[i] = true;
            let alone = assemble(FeatureMask::new(flags).unwrap(), &fv).kept();
            let n = fv.block(b).len();
            prop_assert_eq!(&full.values[offset..offset + n], fv.block(b));
            prop_assert_eq!(alone.as_slice(), fv.block(b));
            offset += n;
        }
    }

    #[test]
    fn pairwise_loss_is_antisymmetric(a in -20.0f64..20.0, b in -20.0f64..20.0) {
        prop_assert!((pairwise_loss(a, b) - pairwise_loss(b, a) - (b - a)).abs() < 1e-9);
        let (ga, gb) = pairwise_gradient(a, b);
        let (gb2, ga2) = pairwise_gradient(b, a);
        prop_assert_eq!(ga, -gb);
        prop_assert!((ga - ga2 + 1.0).abs() < 1e-12 && (gb - gb2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lambdas_sum_to_zero(rows in prop::collection::vec((-5.0f64..5.0, 0u8..6), 1..40), k in 1usize..50) {
        let scores: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let grades: Vec<u8> = rows.iter().map(|r| r.1).collect();
        let ids: Vec<u32> = (1..=rows.len() as u32).collect();
        let l = lambda_gradients(&scores, &grades, &ids, k, Gain::Exponential);
        prop_assert!(l.lambdas.iter().sum::<f64>().abs() <= 1e-9);
        prop_assert!(l.hessians.iter().all(|h| *h >= 0.0));
    }

    #[test]
    fn bin_grades_are_scale_invariant_and_monotone(ms in prop::collection::vec(0.0f64..10.0, 1..30), c_exp in -10i32..10) {
        let c = 2f64.powi(c_exp);
        let scaled: Vec<f64> = ms.iter().map(|m| m * c).collect();
        let g = bin_grades(&ms, 5).unwrap();
        prop_assert_eq!(&g, &bin_grades(&scaled, 5).unwrap());
        if let Some(g) = g {
            for i in 0..ms.len() {
                for j in 0..ms.len() {
                    if ms[i] >= ms[j] {
                        prop_assert!(g[i] >= g[j]);
                    }
                }
            }
        }
    }

    #[test]
    fn ndcg_matches_permutation_oracle(grades in prop::collection::vec(0u8..6, 1..7), k in 1usize..8) {
        for gain in [Gain::Exponential, Gain::Literal] {
            let got = ndcg(&grades, k, gain);
            let want = brute_force_ndcg(&grades, k, gain);
            match (got, want) {
                (Some(a), Some(b)) => prop_assert!((a - b).abs() <= 1e-12),
                (a, b) => prop_assert_eq!(a, b),
            }
        }
    }

    #[test]
    fn demoting_a_better_document_never_helps(grades in prop::collection::vec(0u8..6, 2..20), at in 0usize..19, k in 1usize..20) {
        let at = at % (grades.len() - 1);
        if grades[at] > grades[at + 1] {
            let mut swapped = grades.clone();
            swapped.swap(at, at + 1);
            let before = ndcg(&grades, k, Gain::Exponential).unwrap();
            let after = ndcg(&swapped, k, Gain::Exponential).unwrap();
            prop_assert!(after <= before + 1e-15);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn permuting_rows_changes_no_prediction(groups in group_strategy(), seed in any::<u64>()) {
        let data = rank_data(&groups);
        let mut order: Vec<usize> = (0..data.len()).collect();
        for g in &data.groups {
            shuffle(&mut order[g.range()], &mut rng(seed));
        }
        let models = [
            rf_train(&data, &RfParams { n_trees: 5, ..RfParams::default() }, "t", 1).unwrap(),
            gbm_train(&data, &GbmParams { n_trees: 10, ..GbmParams::default() }, "t", 1).unwrap(),
            lambdamart_train(&data, &LambdaMartParams { n_trees: 10, min_leaf: 1, ..LambdaMartParams::default() }, "t", 1).unwrap(),
            ranknet_train(&data, &RankNetParams { hidden: vec![4], epochs: 2, ..RankNetParams::default() }, "t", 1).unwrap(),
        ];
        for m in &models {
            let direct: Vec<f64> = (0..data.len()).map(|i| m.predict_row(data.row(i))).collect();
            let permuted: Vec<f64> = order.iter().map(|&i| m.predict_row(data.row(i))).collect();
            for (p, &i) in permuted.iter().zip(&order) {
                prop_assert_eq!(p.to_bits(), direct[i].to_bits());
            }
        }
    }

    #[test]
    fn gbm_staged_prediction_is_prefix_sum(groups in group_strategy(), t in 0usize..12) {
        let data = rank_data(&groups);
        let m = gbm_train(&data, &GbmParams { n_trees: 12, ..GbmParams::default() }, "t", 3).unwrap();
        let ModelParams::Boosted { base, learning_rate, trees } = &m.params else { panic!("gbm is boosted") };
        for i in 0..data.len() {
            let x = data.row(i);
            let want = base + learning_rate * trees[..t].iter().map(|tr| tr.predict(x)).sum::<f64>();
            prop_assert!((m.staged_predict_row(x, t) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn svm_decision_ignores_duplicated_rows(pts in prop::collection::vec((prop::collection::vec(-2.0f64..2.0, 2), any::<bool>()), 4..16), probe in prop::collection::vec(-2.0f64..2.0, 2)) {
        let rows: Vec<(Vec<f64>, SegmentLabel)> = pts
            .iter()
            .map(|(x, b)| (x.clone(), if *b { SegmentLabel::Broad } else { SegmentLabel::Narrow }))
            .collect();
        prop_assume!(rows.iter().any(|r| r.1 == SegmentLabel::Broad) && rows.iter().any(|r| r.1 == SegmentLabel::Narrow));
        let mut doubled = rows.clone();
        doubled.extend(rows.iter().cloned());
        let params = SvmParams::default();
        let a = svm_train(&rows, &params).unwrap();
        let b = svm_train(&doubled, &params).unwrap();
        let (da, db) = (a.decision(&probe).unwrap(), b.decision(&probe).unwrap());
        prop_assert!((da - db).abs() < 1e-6 * (1.0 + da.abs()), "{} vs {}", da, db);
    }

    #[test]
    fn dae_codes_are_deterministic(bits in prop::collection::vec(prop::collection::vec(any::<bool>(), 6), 4..12)) {
        let inputs: Vec<Vec<f64>> = bits.iter().map(|b| b.iter().map(|&x| f64::from(u8::from(x))).collect()).collect();
        let cfg = DaeConfig { hidden: vec![8, 6], epochs: 2, ..DaeConfig::default() };
        let Ok(model) = dae_train(&inputs, &cfg, 9) else { return Ok(()) };
        for x in &inputs {
            let a = dae_encode(&model, x).unwrap();
            let b = dae_encode(&model, x).unwrap();
            prop_assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        }
    }
}
