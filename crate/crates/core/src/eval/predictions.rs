//! The prediction-file ARFF schema shared by the server, the CLI and clients.

use crate::arff::{self, AttributeKind, AttributeSpec, Cell, Relation, Row};
use crate::task::TaskTypeId;
use serde::{Deserialize, Serialize};

use super::EvalError;

pub const MAX_PREDICTION_BYTES: usize = 64 * 1024 * 1024;
pub const CONFIDENCE_PREFIX: &str = "confidence.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Predicted {
    Value(f64),
    Label(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub repeat: usize,
    pub fold: usize,
    pub row_id: usize,
    pub predicted: Predicted,
    /// Per-class confidences in declared class order.
    pub confidences: Option<Vec<f64>>,
}

fn schema_error(reason: impl Into<String>) -> EvalError {
    EvalError::Schema { message: reason.into() }
}

/// Builds the canonical prediction relation. `class_labels` is empty for regression.
pub fn predictions_relation(
    task_type: TaskTypeId,
    class_labels: &[String],
    records: &[PredictionRecord],
) -> Relation {
    let mut attributes = vec![
        AttributeSpec::numeric("repeat"),
        AttributeSpec::numeric("fold"),
        AttributeSpec::numeric("row_id"),
    ];
    let classification = task_type.is_classification();
    if classification {
        attributes.push(AttributeSpec::nominal("prediction", class_labels.iter().cloned()));
        for label in class_labels {
            attributes.push(AttributeSpec::numeric(format!("{CONFIDENCE_PREFIX}{label}")));
        }
    } else {
        attributes.push(AttributeSpec::numeric("prediction"));
    }
    let rows = records
        .iter()
        .map(|r| {
            let mut cells = vec![
                Cell::Number(r.repeat as f64),
                Cell::Number(r.fold as f64),
                Cell::Number(r.row_id as f64),
                match &r.predicted {
                    Predicted::Label(l) => Cell::Text(l.clone()),
                    Predicted::Value(v) => Cell::Number(*v),
                },
            ];
            if classification {
                match &r.confidences {
                    Some(conf) => cells.extend(conf.iter().map(|&c| Cell::Number(c))),
                    None => cells.extend(class_labels.iter().map(|_| Cell::Missing)),
                }
            }
            Row::new(cells)
        })
        .collect();
    Relation { name: "predictions".into(), attributes, rows }
}

pub fn write_predictions(task_type: TaskTypeId, class_labels: &[String], records: &[PredictionRecord]) -> String {
    arff::write_arff(&predictions_relation(task_type, class_labels, records))
}

fn index_cell(cell: &Cell, column: &str, line: usize) -> Result<usize, EvalError> {
    match cell {
        Cell::Number(v) if *v >= 0.0 && v.fract() == 0.0 && *v < 1e15 => Ok(*v as usize),
        _ => Err(schema_error(format!("row {line}: '{column}' must be a nonnegative integer"))),
    }
}

/// Parses an uploaded prediction file. Confidence columns are optional but,
/// when present, must exist for every class.
pub fn parse_predictions(
    bytes: &[u8],
    task_type: TaskTypeId,
    class_labels: &[String],
) -> Result<Vec<PredictionRecord>, EvalError> {
    let relation = arff::parse_arff_with_limit(bytes, MAX_PREDICTION_BYTES)
        .map_err(|e| schema_error(format!("prediction file: {e}")))?;
    let col = |name: &str| {
        relation.attribute_index(name).ok_or_else(|| schema_error(format!("missing column '{name}'")))
    };
    let (repeat_i, fold_i, row_i, pred_i) = (col("repeat")?, col("fold")?, col("row_id")?, col("prediction")?);

    let classification = task_type.is_classification();
    let mut conf_cols = Vec::new();
    if classification {
        for label in class_labels {
            conf_cols.push(relation.attribute_index(&format!("{CONFIDENCE_PREFIX}{label}")));
        }
        let present = conf_cols.iter().filter(|c| c.is_some()).count();
        if present != 0 && present != class_labels.len() {
            return Err(EvalError::Consistency {
                row_id: None,
                reason: "confidence columns must cover every class".into(),
            });
        }
        for attr in &relation.attributes {
            if let Some(label) = attr.name.strip_prefix(CONFIDENCE_PREFIX) {
                if !class_labels.iter().any(|l| l == label) {
                    return Err(EvalError::Label { row_id: None, label: label.to_string() });
                }
            }
        }
    }
    let conf_cols: Vec<usize> = conf_cols.into_iter().flatten().collect();

    let mut records = Vec::with_capacity(relation.rows.len());
    for (i, row) in relation.rows.iter().enumerate() {
        let line = i + 1;
        let repeat = index_cell(&row.cells[repeat_i], "repeat", line)?;
        let fold = index_cell(&row.cells[fold_i], "fold", line)?;
        let row_id = index_cell(&row.cells[row_i], "row_id", line)?;
        let predicted = match (&row.cells[pred_i], classification) {
            (Cell::Text(t), true) => Predicted::Label(t.clone()),
            (Cell::Number(v), true) if relation.attributes[pred_i].kind == AttributeKind::Numeric => {
                // a nominal prediction column is required to carry labels
                return Err(schema_error(format!("row {line}: numeric prediction {v} for a classification task")));
            }
            (Cell::Number(v), false) => Predicted::Value(*v),
            (Cell::Missing, _) => return Err(schema_error(format!("row {line}: missing prediction"))),
            _ => return Err(schema_error(format!("row {line}: prediction has the wrong type"))),
        };
        let confidences = if conf_cols.is_empty() {
            None
        } else {
            let cells: Vec<&Cell> = conf_cols.iter().map(|&c| &row.cells[c]).collect();
            if cells.iter().all(|c| c.is_missing()) {
                None
            } else {
                let mut values = Vec::with_capacity(cells.len());
                for c in cells {
                    match c.as_number() {
                        Some(v) => values.push(v),
                        None => {
                            return Err(EvalError::Consistency {
                                row_id: Some(row_id),
                                reason: "confidence vector is incomplete".into(),
                            })
                        }
                    }
                }
                Some(values)
            }
        };
        records.push(PredictionRecord { repeat, fold, row_id, predicted, confidences });
    }
    Ok(records)
}
