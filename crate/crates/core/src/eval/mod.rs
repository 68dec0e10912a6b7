//! Server-side evaluation of uploaded predictions against a task's splits.

pub mod metrics;
pub mod predictions;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arff::{Cell, Relation};
use crate::numeric;
use crate::task::{SplitTable, Task, TaskTypeId};

pub use predictions::{parse_predictions, write_predictions, Predicted, PredictionRecord};

/// Bumped whenever a measure definition changes.
pub const MEASURE_SET_VERSION: &str = "1";
pub const CONFIDENCE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
#[serde(tag = "error", rename_all = "snake_case")]
pub enum EvalError {
    #[error("CoverageError: {}", describe_coverage(missing, extra, duplicates))]
    Coverage {
        /// (repeat, fold) -> missing TEST rowids
        missing: Vec<FoldRows>,
        extra: Vec<FoldRows>,
        duplicates: Vec<FoldRows>,
    },
    #[error("LabelError: predicted label '{label}' is not a class of the target{}", at_row(*row_id))]
    Label { row_id: Option<usize>, label: String },
    #[error("ConsistencyError: {reason}{}", at_row(*row_id))]
    Consistency { row_id: Option<usize>, reason: String },
    #[error("prediction file: {message}")]
    Schema { message: String },
    #[error("dataset: {message}")]
    Dataset { message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldRows {
    pub repeat: usize,
    pub fold: usize,
    pub row_ids: Vec<usize>,
}

fn at_row(row_id: Option<usize>) -> String {
    row_id.map(|r| format!(" (row_id {r})")).unwrap_or_default()
}

fn describe_coverage(missing: &[FoldRows], extra: &[FoldRows], duplicates: &[FoldRows]) -> String {
    const SHOWN: usize = 10;
    let mut parts = Vec::new();
    for (what, groups) in [("missing", missing), ("unexpected", extra), ("duplicate", duplicates)] {
        for g in groups {
            let ids: Vec<String> = g.row_ids.iter().take(SHOWN).map(|r| r.to_string()).collect();
            let more = if g.row_ids.len() > SHOWN { format!(", ... {} total", g.row_ids.len()) } else { String::new() };
            parts.push(format!(
                "{what} row_ids in (repeat {}, fold {}): [{}{more}]",
                g.repeat,
                g.fold,
                ids.join(", ")
            ));
        }
    }
    parts.join("; ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MeasureSpec {
    pub name: &'static str,
    pub classification: bool,
    pub regression: bool,
    pub needs_confidences: bool,
    pub higher_is_better: bool,
}

impl MeasureSpec {
    pub fn applies_to(&self, task_type: TaskTypeId) -> bool {
        match task_type {
            TaskTypeId::SupervisedClassification => self.classification,
            TaskTypeId::SupervisedRegression => self.regression,
        }
    }
}

const fn class_measure(name: &'static str, needs_confidences: bool) -> MeasureSpec {
    MeasureSpec { name, classification: true, regression: false, needs_confidences, higher_is_better: true }
}

const fn error_measure(name: &'static str) -> MeasureSpec {
    MeasureSpec { name, classification: false, regression: true, needs_confidences: false, higher_is_better: false }
}

pub const MEASURES: &[MeasureSpec] = &[
    class_measure("predictive_accuracy", false),
    class_measure("kappa", false),
    class_measure("precision", false),
    class_measure("recall", false),
    class_measure("f_measure", false),
    class_measure("macro_precision", false),
    class_measure("macro_recall", false),
    class_measure("macro_f_measure", false),
    class_measure("area_under_roc_curve", true),
    error_measure("mean_absolute_error"),
    error_measure("root_mean_squared_error"),
];

pub fn measure(name: &str) -> Option<&'static MeasureSpec> {
    MEASURES.iter().find(|m| m.name == name)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureValue {
    /// Indexed by repeat * folds + fold.
    pub per_fold: Vec<f64>,
    pub mean: f64,
    /// Unbiased sample std; absent with a single fold.
    pub std: Option<f64>,
}

impl MeasureValue {
    fn from_folds(per_fold: Vec<f64>) -> Self {
        let mean = numeric::mean(&per_fold);
        let std = numeric::sample_std(&per_fold);
        MeasureValue { per_fold, mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassResult {
    pub label: String,
    #[serde(flatten)]
    pub scores: metrics::ClassScores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Headline {
    pub measure: String,
    pub value: f64,
    pub std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationResult {
    pub measure_set_version: String,
    pub measures: BTreeMap<String, MeasureValue>,
    pub class_labels: Vec<String>,
    /// Pooled over every repeat and fold; rows are true classes.
    pub confusion_matrix: Vec<Vec<u64>>,
    pub per_class: Vec<ClassResult>,
    pub headline: Option<Headline>,
    pub evaluated_predictions: usize,
    pub flags: Vec<String>,
}

/// Checks that predictions cover each TEST rowid of each (repeat, fold) exactly once.
pub fn check_coverage(splits: &SplitTable, predictions: &[PredictionRecord]) -> Result<(), EvalError> {
    let mut expected: BTreeMap<(usize, usize), BTreeSet<usize>> = BTreeMap::new();
    for key in splits.fold_keys() {
        expected.insert(key, BTreeSet::new());
    }
    for e in splits.entries.iter().filter(|e| e.kind == crate::task::SplitKind::Test) {
        expected.entry((e.repeat, e.fold)).or_default().insert(e.rowid);
    }
    let mut seen: HashMap<(usize, usize, usize), usize> = HashMap::new();
    let mut extra: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    let mut duplicates: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for p in predictions {
        let key = (p.repeat, p.fold);
        let count = seen.entry((p.repeat, p.fold, p.row_id)).or_insert(0);
        *count += 1;
        if !expected.get(&key).is_some_and(|rows| rows.contains(&p.row_id)) {
            extra.entry(key).or_default().push(p.row_id);
        } else if *count == 2 {
            duplicates.entry(key).or_default().push(p.row_id);
        }
    }
    let mut missing = Vec::new();
    for (&(repeat, fold), rows) in &expected {
        let absent: Vec<usize> = rows.iter().copied().filter(|&r| !seen.contains_key(&(repeat, fold, r))).collect();
        if !absent.is_empty() {
            missing.push(FoldRows { repeat, fold, row_ids: absent });
        }
    }
    let to_groups = |m: BTreeMap<(usize, usize), Vec<usize>>| -> Vec<FoldRows> {
        m.into_iter()
            .map(|((repeat, fold), mut row_ids)| {
                row_ids.sort_unstable();
                row_ids.dedup();
                FoldRows { repeat, fold, row_ids }
            })
            .collect()
    };
    let (extra, duplicates) = (to_groups(extra), to_groups(duplicates));
    if missing.is_empty() && extra.is_empty() && duplicates.is_empty() {
        Ok(())
    } else {
        Err(EvalError::Coverage { missing, extra, duplicates })
    }
}

fn check_confidences(p: &PredictionRecord) -> Result<(), EvalError> {
    let Some(conf) = &p.confidences else { return Ok(()) };
    let bad = |reason: String| EvalError::Consistency { row_id: Some(p.row_id), reason };
    if let Some(c) = conf.iter().find(|c| !c.is_finite() || **c < 0.0) {
        return Err(bad(format!("confidence {c} is not a nonnegative number")));
    }
    let sum = numeric::exact_sum(conf.iter().copied());
    if (sum - 1.0).abs() > CONFIDENCE_TOLERANCE {
        return Err(bad(format!("confidences sum to {sum}, expected 1")));
    }
    Ok(())
}

struct FoldData {
    truths_idx: Vec<usize>,
    preds_idx: Vec<usize>,
    truths_num: Vec<f64>,
    preds_num: Vec<f64>,
    confidences: Vec<Vec<f64>>,
    all_confident: bool,
}

/// Evaluates a run. Deterministic: identical inputs give a bit-identical result.
pub fn evaluate_run(
    task: &Task,
    relation: &Relation,
    splits: &SplitTable,
    predictions: &[PredictionRecord],
) -> Result<EvaluationResult, EvalError> {
    let target_idx = relation
        .attribute_index(&task.target)
        .ok_or_else(|| EvalError::Dataset { message: format!("target '{}' not in dataset", task.target) })?;
    let target_attr = &relation.attributes[target_idx];
    let classification = task.task_type.is_classification();
    let class_labels: Vec<String> =
        if classification { target_attr.labels().map(<[String]>::to_vec).unwrap_or_default() } else { Vec::new() };
    let k = class_labels.len();

    check_coverage(splits, predictions)?;

    let fold_count = splits.repeats * splits.folds;
    let mut folds: Vec<FoldData> = (0..fold_count)
        .map(|_| FoldData {
            truths_idx: Vec::new(),
            preds_idx: Vec::new(),
            truths_num: Vec::new(),
            preds_num: Vec::new(),
            confidences: Vec::new(),
            all_confident: true,
        })
        .collect();

    // canonical order so that the result does not depend on upload order
    let mut ordered: Vec<&PredictionRecord> = predictions.iter().collect();
    ordered.sort_by_key(|p| (p.repeat, p.fold, p.row_id));

    for p in ordered {
        let truth = relation
            .rows
            .get(p.row_id)
            .map(|r| &r.cells[target_idx])
            .ok_or_else(|| EvalError::Dataset { message: format!("row_id {} out of range", p.row_id) })?;
        let fd = &mut folds[p.repeat * splits.folds + p.fold];
        if classification {
            let truth_idx = match truth {
                Cell::Text(t) => target_attr.label_index(t),
                _ => None,
            }
            .ok_or_else(|| EvalError::Dataset { message: format!("row_id {} has no class label", p.row_id) })?;
            let pred_idx = match &p.predicted {
                Predicted::Label(l) => target_attr
                    .label_index(l)
                    .ok_or_else(|| EvalError::Label { row_id: Some(p.row_id), label: l.clone() })?,
                Predicted::Value(v) => {
                    return Err(EvalError::Label { row_id: Some(p.row_id), label: v.to_string() });
                }
            };
            check_confidences(p)?;
            if let Some(conf) = &p.confidences {
                if conf.len() != k {
                    return Err(EvalError::Consistency {
                        row_id: Some(p.row_id),
                        reason: format!("expected {k} confidences, got {}", conf.len()),
                    });
                }
                fd.confidences.push(conf.clone());
            } else {
                fd.all_confident = false;
            }
            fd.truths_idx.push(truth_idx);
            fd.preds_idx.push(pred_idx);
        } else {
            let truth = truth
                .as_number()
                .ok_or_else(|| EvalError::Dataset { message: format!("row_id {} has no numeric target", p.row_id) })?;
            let pred = match &p.predicted {
                Predicted::Value(v) if v.is_finite() => *v,
                _ => {
                    return Err(EvalError::Consistency {
                        row_id: Some(p.row_id),
                        reason: "regression prediction must be a finite number".into(),
                    })
                }
            };
            fd.truths_num.push(truth);
            fd.preds_num.push(pred);
        }
    }

    let mut measures: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut flags = Vec::new();
    let mut pooled = vec![vec![0u64; k]; k];
    let mut auc_defined = true;
    let mut push = |name: &str, v: f64| measures.entry(name.to_string()).or_default().push(v);

    for (i, fd) in folds.iter().enumerate() {
        if classification {
            let cm = metrics::confusion_matrix(&fd.truths_idx, &fd.preds_idx, k);
            for (row, pooled_row) in cm.iter().zip(pooled.iter_mut()) {
                for (c, p) in row.iter().zip(pooled_row.iter_mut()) {
                    *p += c;
                }
            }
            let n = fd.truths_idx.len() as f64;
            let correct = (0..k).map(|c| cm[c][c]).sum::<u64>() as f64;
            push("predictive_accuracy", correct / n);
            push("kappa", metrics::kappa_from_confusion(&cm));
            let scores = metrics::class_scores(&cm);
            let w = metrics::weighted_average(&scores);
            let m = metrics::macro_average(&scores);
            push("precision", w.precision);
            push("recall", w.recall);
            push("f_measure", w.f_measure);
            push("macro_precision", m.precision);
            push("macro_recall", m.recall);
            push("macro_f_measure", m.f_measure);
            if auc_defined {
                if !fd.all_confident {
                    auc_defined = false;
                    flags.push("area_under_roc_curve: omitted, confidences missing".to_string());
                } else {
                    match metrics::weighted_auc(&fd.truths_idx, &fd.confidences, k) {
                        Ok(v) => push("area_under_roc_curve", v),
                        Err(e) => {
                            auc_defined = false;
                            let (r, f) = (i / splits.folds, i % splits.folds);
                            flags.push(format!("area_under_roc_curve: omitted, {e} in repeat {r} fold {f}"));
                        }
                    }
                }
            }
        } else {
            let r = metrics::regression_measures(&fd.truths_num, &fd.preds_num);
            push("mean_absolute_error", r.mae);
            push("root_mean_squared_error", r.rmse);
        }
    }
    if !auc_defined {
        measures.remove("area_under_roc_curve");
    }

    let measures: BTreeMap<String, MeasureValue> =
        measures.into_iter().map(|(name, vals)| (name, MeasureValue::from_folds(vals))).collect();

    let per_class: Vec<ClassResult> = if classification {
        metrics::class_scores(&pooled)
            .into_iter()
            .zip(&class_labels)
            .map(|(scores, label)| {
                if scores.precision_undefined {
                    flags.push(format!("precision for class '{label}': no predictions, reported as 0"));
                }
                ClassResult { label: label.clone(), scores }
            })
            .collect()
    } else {
        Vec::new()
    };
    let headline = measures.get(&task.evaluation_measure).map(|m| Headline {
        measure: task.evaluation_measure.clone(),
        value: m.mean,
        std: m.std,
    });

    Ok(EvaluationResult {
        measure_set_version: MEASURE_SET_VERSION.to_string(),
        measures,
        class_labels,
        confusion_matrix: pooled,
        per_class,
        headline,
        evaluated_predictions: predictions.len(),
        flags,
    })
}

#[cfg(test)]
mod tests;
