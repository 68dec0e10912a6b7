use std::collections::{BTreeMap, BTreeSet};

use openml_lite_core::arff::{parse_arff, write_arff, AttributeKind, AttributeSpec, Cell, Relation, Row};
use openml_lite_core::eval::metrics;
use openml_lite_core::learners::{predict_splits, LearnerKind, LearningProblem};
use openml_lite_core::qualities::{self, compute_qualities};
use openml_lite_core::task::{generate_splits, EstimationProcedure, SplitKind};
use proptest::prelude::*;

fn text_value() -> impl Strategy<Value = String> {
    prop_oneof![
        "[a-z][a-z0-9_]{0,6}",
        "[ -~]{0,8}",
        Just("?".to_string()),
        Just("a b".to_string()),
        Just("it's".to_string()),
        Just("x\\y".to_string()),
    ]
}

fn relation_strategy() -> impl Strategy<Value = Relation> {
    let attr = prop_oneof![
        Just(AttributeKind::Numeric),
        Just(AttributeKind::String),
        proptest::collection::btree_set(text_value(), 1..5)
            .prop_map(|labels| AttributeKind::Nominal { labels: labels.into_iter().collect() }),
    ];
    (proptest::collection::vec(attr, 1..5), 1usize..12, any::<u64>()).prop_flat_map(|(kinds, n, _)| {
        let cells: Vec<BoxedStrategy<Cell>> = kinds
            .iter()
            .map(|k| match k {
                AttributeKind::Numeric => prop_oneof![
                    1 => Just(Cell::Missing),
                    4 => any::<f64>().prop_filter("finite", |v| v.is_finite()).prop_map(Cell::Number),
                    2 => (-1000i64..1000).prop_map(|v| Cell::Number(v as f64)),
                ]
                .boxed(),
                AttributeKind::String => prop_oneof![1 => Just(Cell::Missing), 4 => text_value().prop_map(Cell::Text)].boxed(),
                AttributeKind::Nominal { labels } => {
                    let labels = labels.clone();
                    prop_oneof![1 => Just(Cell::Missing), 4 => proptest::sample::select(labels).prop_map(Cell::Text)].boxed()
                }
                AttributeKind::Date { .. } => unreachable!(),
            })
            .collect();
        let kinds = kinds.clone();
        proptest::collection::vec(cells, n).prop_map(move |rows| Relation {
            name: "generated relation".into(),
            attributes: kinds
                .iter()
                .enumerate()
                .map(|(i, k)| AttributeSpec { name: format!("attr {i}"), kind: k.clone() })
                .collect(),
            rows: rows.into_iter().map(Row::new).collect(),
        })
    })
}

fn labelled_relation(n: usize, classes: usize, seed: u64) -> Relation {
    let labels: Vec<String> = (0..classes).map(|c| format!("c{c}")).collect();
    let mut state = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
    let mut next = || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        state
    };
    let rows = (0..n)
        .map(|i| {
            // every class occurs at least once
            let c = if i < classes { i } else { (next() % classes as u64) as usize };
            let x = (next() % 1000) as f64 / 10.0 + c as f64;
            Row::new(vec![Cell::Number(x), Cell::Text(labels[c].clone())])
        })
        .collect();
    Relation {
        name: "generated".into(),
        attributes: vec![AttributeSpec::numeric("x"), AttributeSpec::nominal("class", labels.clone())],
        rows,
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 128, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn arff_round_trip(rel in relation_strategy()) {
        let text = write_arff(&rel);
        let back = parse_arff(text.as_bytes()).map_err(|e| TestCaseError::fail(format!("{e}\n{text}")))?;
        prop_assert_eq!(back, rel);
    }

    #[test]
    fn arff_parser_is_total(bytes in proptest::collection::vec(any::<u8>(), 0..400)) {
        let _ = parse_arff(&bytes);
    }

    #[test]
    fn arff_parser_is_total_on_near_valid_text(
        body in "[a-z0-9,?' {}%\n.@-]{0,200}",
    ) {
        let text = format!("@relation r\n@attribute a numeric\n@attribute b {{x,y}}\n@data\n{body}");
        let _ = parse_arff(text.as_bytes());
    }

    #[test]
    fn splits_partition_and_stratify(
        n in 20usize..200,
        classes in 2usize..5,
        k in prop::sample::select(vec![2u32, 5, 10]),
        seed in any::<u32>(),
        repeats in 1u32..3,
    ) {
        let rel = labelled_relation(n, classes, seed as u64);
        let est = EstimationProcedure::cross_validation(k, true, seed as u64).with_repeats(repeats);
        let a = generate_splits(&rel, "class", &est).unwrap();
        let b = generate_splits(&rel, "class", &est).unwrap();
        prop_assert_eq!(a.to_arff(), b.to_arff());

        let class_of: Vec<usize> = rel.rows.iter().map(|r| match &r.cells[1] {
            Cell::Text(t) => t[1..].parse().unwrap(),
            _ => unreachable!(),
        }).collect();
        let mut counts = vec![0usize; classes];
        for &c in &class_of { counts[c] += 1; }

        for r in 0..repeats as usize {
            let mut seen_test = BTreeSet::new();
            for f in 0..k as usize {
                let test: BTreeSet<usize> = a.test_rows(r, f).into_iter().collect();
                let train: BTreeSet<usize> = a.train_rows(r, f).into_iter().collect();
                prop_assert!(test.is_disjoint(&train));
                prop_assert_eq!(test.len() + train.len(), n);
                for &t in &test { prop_assert!(seen_test.insert(t)); }
                for c in 0..classes {
                    let in_fold = test.iter().filter(|&&t| class_of[t] == c).count() as f64;
                    prop_assert!((in_fold - counts[c] as f64 / k as f64).abs() <= 1.0);
                }
            }
            prop_assert_eq!(seen_test.len(), n);
        }
        prop_assert!(a.entries.iter().all(|e| e.kind == SplitKind::Train || e.kind == SplitKind::Test));
    }

    #[test]
    fn entropy_and_mi_bounds(
        pairs in proptest::collection::vec((0usize..4, 0usize..3), 1..80),
    ) {
        let x: Vec<Option<usize>> = pairs.iter().map(|p| Some(p.0)).collect();
        let c: Vec<Option<usize>> = pairs.iter().map(|p| Some(p.1)).collect();
        let mut cx = vec![0; 4];
        let mut cc = vec![0; 3];
        for p in &pairs { cx[p.0] += 1; cc[p.1] += 1; }
        let hx = qualities::entropy(&cx);
        let hc = qualities::entropy(&cc);
        prop_assert!((0.0..=2.0 + 1e-12).contains(&hx));
        prop_assert!(hc >= 0.0 && hc <= 3f64.log2() + 1e-12);
        let mi = qualities::mutual_information(&x, &c);
        prop_assert!(mi >= 0.0);
        prop_assert!(mi <= hx.min(hc) + 1e-12);
        // MI of a copy of the class equals the class entropy
        prop_assert!((qualities::mutual_information(&c, &c) - hc).abs() < 1e-12);
    }

    #[test]
    fn rmse_dominates_mae(values in proptest::collection::vec((-1e6f64..1e6, -1e6f64..1e6), 1..60)) {
        let (t, p): (Vec<f64>, Vec<f64>) = values.into_iter().unzip();
        let r = metrics::regression_measures(&t, &p);
        prop_assert!(r.mae >= 0.0);
        prop_assert!(r.rmse + 1e-9 * r.rmse.abs().max(1.0) >= r.mae);
    }

    #[test]
    fn auc_invariant_under_monotone_transforms(
        data in proptest::collection::vec((any::<bool>(), 0u32..50), 2..60),
    ) {
        let flags: Vec<bool> = data.iter().map(|d| d.0).collect();
        prop_assume!(flags.iter().any(|&f| f) && flags.iter().any(|&f| !f));
        let scores: Vec<f64> = data.iter().map(|d| d.1 as f64 / 50.0).collect();
        let base = metrics::auc(&flags, &scores).unwrap();
        let transformed: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
        prop_assert_eq!(base, metrics::auc(&flags, &transformed).unwrap());
        let cubed: Vec<f64> = scores.iter().map(|s| s * s * s).collect();
        prop_assert_eq!(base, metrics::auc(&flags, &cubed).unwrap());
        prop_assert!((0.0..=1.0).contains(&base));
    }

    #[test]
    fn classification_measure_ranges(
        pairs in proptest::collection::vec((0usize..3, 0usize..3), 1..80),
    ) {
        let (t, p): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let acc = metrics::accuracy(&t, &p);
        prop_assert!((0.0..=1.0).contains(&acc));
        let kappa = metrics::kappa(&t, &p, 3);
        prop_assert!(kappa <= 1.0 + 1e-12);
        let cm = metrics::confusion_matrix(&t, &p, 3);
        prop_assert_eq!(cm.iter().flatten().sum::<u64>() as usize, t.len());
        // support-weighted recall is the accuracy
        let w = metrics::weighted_average(&metrics::class_scores(&cm));
        prop_assert!((w.recall - acc).abs() < 1e-12);
    }

    #[test]
    fn learner_confidences_are_distributions(
        n in 12usize..60,
        classes in 2usize..4,
        seed in any::<u32>(),
        learner in prop::sample::select(LearnerKind::ALL.to_vec()),
    ) {
        let rel = labelled_relation(n, classes, seed as u64);
        let splits = generate_splits(&rel, "class", &EstimationProcedure::cross_validation(3, true, seed as u64)).unwrap();
        let problem = LearningProblem::new(&rel, "class", &[]).unwrap();
        let params = BTreeMap::new();
        let records = predict_splits(&problem, &splits, learner.build_with(&params).unwrap().as_ref()).unwrap();
        prop_assert_eq!(records.len(), n);
        for r in records {
            let conf = r.confidences.unwrap();
            prop_assert!(conf.iter().all(|&c| c >= 0.0));
            prop_assert!((conf.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn qualities_are_row_order_invariant(
        n in 10usize..40,
        seed in any::<u32>(),
        perm_seed in any::<u64>(),
    ) {
        let rel = labelled_relation(n, 3, seed as u64);
        let mut shuffled = rel.clone();
        let mut rng = openml_lite_core::rng::SplitRng::new(perm_seed);
        rng.shuffle(&mut shuffled.rows);
        let a = compute_qualities(&rel, Some("class"), &[]).unwrap();
        let b = compute_qualities(&shuffled, Some("class"), &[]).unwrap();
        prop_assert_eq!(a.len(), 24);
        for (name, v) in &a.0 {
            prop_assert_eq!(v.map(f64::to_bits), b.0[name].map(f64::to_bits), "{}", name);
        }
    }
}
