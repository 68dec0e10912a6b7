use super::*;
use crate::learners::test_support::numeric_relation;
use crate::task::{generate_splits, EstimationProcedure};
use chrono::TimeZone;

fn binary_task(n: usize, folds: u32) -> (Task, Relation, SplitTable) {
    let pts: Vec<(Vec<f64>, &str)> = (0..n).map(|i| (vec![i as f64], if i % 2 == 0 { "a" } else { "b" })).collect();
    let relation = numeric_relation(&pts, &["a", "b"]);
    let estimation = EstimationProcedure::cross_validation(folds, true, 3);
    let splits = generate_splits(&relation, "class", &estimation).unwrap();
    let task = Task {
        task_id: 1,
        task_type: TaskTypeId::SupervisedClassification,
        dataset_id: 1,
        target: "class".into(),
        estimation,
        evaluation_measure: "predictive_accuracy".into(),
        splits: String::new(),
        excluded_rowids: Vec::new(),
        uploader: 1,
        uploaded_at: epoch(),
        deleted: false,
    };
    (task, relation, splits)
}

fn epoch() -> chrono::DateTime<chrono::Utc> {
    chrono::Utc.timestamp_opt(0, 0).unwrap()
}

fn predict_with(
    splits: &SplitTable,
    f: impl Fn(usize) -> (String, Option<Vec<f64>>),
) -> Vec<PredictionRecord> {
    let mut out = Vec::new();
    for (repeat, fold) in splits.fold_keys() {
        for row_id in splits.test_rows(repeat, fold) {
            let (label, confidences) = f(row_id);
            out.push(PredictionRecord { repeat, fold, row_id, predicted: Predicted::Label(label), confidences });
        }
    }
    out
}

fn truth(row: usize) -> &'static str {
    if row.is_multiple_of(2) {
        "a"
    } else {
        "b"
    }
}

#[test]
fn perfect_predictions() {
    let (task, rel, splits) = binary_task(20, 5);
    let preds = predict_with(&splits, |r| {
        let conf = if r % 2 == 0 { vec![1.0, 0.0] } else { vec![0.0, 1.0] };
        (truth(r).into(), Some(conf))
    });
    let res = evaluate_run(&task, &rel, &splits, &preds).unwrap();
    let acc = &res.measures["predictive_accuracy"];
    assert_eq!(acc.mean, 1.0);
    assert_eq!(acc.std, Some(0.0));
    assert_eq!(acc.per_fold.len(), 5);
    assert_eq!(res.confusion_matrix, vec![vec![10, 0], vec![0, 10]]);
    assert_eq!(res.measures["area_under_roc_curve"].mean, 1.0);
    assert_eq!(res.measures["kappa"].mean, 1.0);
    assert_eq!(res.headline.as_ref().unwrap().value, 1.0);
    assert_eq!(res.evaluated_predictions, 20);
    assert!(res.flags.is_empty());
}

#[test]
fn constant_prediction_on_balanced_binary() {
    let (task, rel, splits) = binary_task(20, 5);
    let preds = predict_with(&splits, |_| ("a".into(), None));
    let res = evaluate_run(&task, &rel, &splits, &preds).unwrap();
    assert_eq!(res.measures["predictive_accuracy"].mean, 0.5);
    assert_eq!(res.measures["kappa"].mean, 0.0);
    assert!(!res.measures.contains_key("area_under_roc_curve"));
    assert!(res.flags.iter().any(|f| f.contains("area_under_roc_curve")));
    assert!(res.per_class[1].scores.precision_undefined);
    assert_eq!(res.per_class[1].scores.precision, 0.0);
}

#[test]
fn missing_fold_is_a_coverage_error() {
    let (task, rel, splits) = binary_task(20, 5);
    let preds: Vec<PredictionRecord> =
        predict_with(&splits, |r| (truth(r).into(), None)).into_iter().filter(|p| p.fold != 2).collect();
    let err = evaluate_run(&task, &rel, &splits, &preds).unwrap_err();
    match &err {
        EvalError::Coverage { missing, extra, duplicates } => {
            assert_eq!(missing.len(), 1);
            assert_eq!((missing[0].repeat, missing[0].fold), (0, 2));
            assert_eq!(missing[0].row_ids, splits.test_rows(0, 2));
            assert!(extra.is_empty() && duplicates.is_empty());
        }
        other => panic!("unexpected {other:?}"),
    }
    assert!(err.to_string().contains("(repeat 0, fold 2)"));
}

#[test]
fn duplicate_and_misplaced_rows() {
    let (task, rel, splits) = binary_task(20, 5);
    let mut preds = predict_with(&splits, |r| (truth(r).into(), None));
    let dup = preds[0].clone();
    preds.push(dup.clone());
    let mut wrong = preds[1].clone();
    wrong.fold = (wrong.fold + 1) % 5;
    preds.push(wrong);
    match evaluate_run(&task, &rel, &splits, &preds).unwrap_err() {
        EvalError::Coverage { duplicates, extra, missing } => {
            assert_eq!(duplicates[0].row_ids, vec![dup.row_id]);
            assert_eq!(extra.len(), 1);
            assert!(missing.is_empty());
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn unknown_label_and_bad_confidences() {
    let (task, rel, splits) = binary_task(20, 5);
    let preds = predict_with(&splits, |_| ("zebra".into(), None));
    assert!(matches!(evaluate_run(&task, &rel, &splits, &preds), Err(EvalError::Label { .. })));
    let preds = predict_with(&splits, |r| (truth(r).into(), Some(vec![0.6, 0.6])));
    assert!(matches!(evaluate_run(&task, &rel, &splits, &preds), Err(EvalError::Consistency { .. })));
    let preds = predict_with(&splits, |r| (truth(r).into(), Some(vec![1.5, -0.5])));
    assert!(matches!(evaluate_run(&task, &rel, &splits, &preds), Err(EvalError::Consistency { .. })));
    // within tolerance
    let preds = predict_with(&splits, |r| (truth(r).into(), Some(vec![0.5, 0.5 + 5e-7])));
    assert!(evaluate_run(&task, &rel, &splits, &preds).is_ok());
}

#[test]
fn evaluation_is_order_independent_and_idempotent() {
    let (task, rel, splits) = binary_task(30, 3);
    let preds = predict_with(&splits, |r| {
        let p = ((r * 37) % 11) as f64 / 10.0;
        (if p > 0.5 { "b" } else { "a" }.into(), Some(vec![1.0 - p, p]))
    });
    let a = evaluate_run(&task, &rel, &splits, &preds).unwrap();
    let mut reversed = preds.clone();
    reversed.reverse();
    let b = evaluate_run(&task, &rel, &splits, &reversed).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    let total: u64 = a.confusion_matrix.iter().flatten().sum();
    assert_eq!(total as usize, a.evaluated_predictions);
}

#[test]
fn regression_task() {
    let pts: Vec<(Vec<f64>, &str)> = (0..10).map(|i| (vec![i as f64], "a")).collect();
    let mut rel = numeric_relation(&pts, &["a"]);
    // turn the first feature into the numeric target
    let estimation = EstimationProcedure::cross_validation(2, false, 0);
    rel.attributes.swap(0, 1);
    for row in &mut rel.rows {
        row.cells.swap(0, 1);
    }
    let splits = generate_splits(&rel, "x0", &estimation).unwrap();
    let task = Task {
        task_id: 2,
        task_type: TaskTypeId::SupervisedRegression,
        dataset_id: 1,
        target: "x0".into(),
        estimation,
        evaluation_measure: "root_mean_squared_error".into(),
        splits: String::new(),
        excluded_rowids: Vec::new(),
        uploader: 1,
        uploaded_at: epoch(),
        deleted: false,
    };
    let mut preds = Vec::new();
    for (repeat, fold) in splits.fold_keys() {
        for row_id in splits.test_rows(repeat, fold) {
            preds.push(PredictionRecord {
                repeat,
                fold,
                row_id,
                predicted: Predicted::Value(row_id as f64 + 2.0),
                confidences: None,
            });
        }
    }
    let res = evaluate_run(&task, &rel, &splits, &preds).unwrap();
    assert_eq!(res.measures["mean_absolute_error"].mean, 2.0);
    assert_eq!(res.measures["root_mean_squared_error"].mean, 2.0);
    assert_eq!(res.headline.unwrap().measure, "root_mean_squared_error");
    assert!(res.confusion_matrix.is_empty());
    assert!(!res.measures.contains_key("predictive_accuracy"));
}

#[test]
fn measure_registry() {
    let names: BTreeSet<&str> = MEASURES.iter().map(|m| m.name).collect();
    assert_eq!(names.len(), MEASURES.len());
    assert!(measure("area_under_roc_curve").unwrap().needs_confidences);
    assert!(!measure("root_mean_squared_error").unwrap().higher_is_better);
    assert!(measure("log_loss").is_none());
}

#[test]
fn errors_serialize_with_a_tag() {
    let errors = [
        EvalError::Coverage { missing: vec![], extra: vec![], duplicates: vec![] },
        EvalError::Label { row_id: Some(1), label: "z".into() },
        EvalError::Consistency { row_id: None, reason: "r".into() },
        EvalError::Schema { message: "m".into() },
        EvalError::Dataset { message: "m".into() },
    ];
    for e in &errors {
        let v = serde_json::to_value(e).unwrap();
        let back: EvalError = serde_json::from_value(v).unwrap();
        assert_eq!(&back, e);
    }
    assert_eq!(serde_json::to_value(&errors[3]).unwrap(), serde_json::json!({"error": "schema", "message": "m"}));
}
