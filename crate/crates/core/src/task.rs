//! Task types, tasks and the reproducible split protocol.

use std::collections::HashMap;
use std::fmt::Write as _;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arff::{self, AttributeSpec, Cell, Relation, Row};
use crate::rng::SplitRng;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TaskError {
    #[error("{0}")]
    Validation(String),
    #[error("too few instances: {folds} folds requested but only {instances} usable instances")]
    TooFewInstances { folds: usize, instances: usize },
    #[error("malformed split file: {0}")]
    SplitFile(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskTypeId {
    SupervisedClassification,
    SupervisedRegression,
}

impl TaskTypeId {
    pub fn numeric_id(self) -> u32 {
        match self {
            TaskTypeId::SupervisedClassification => 1,
            TaskTypeId::SupervisedRegression => 2,
        }
    }

    pub fn from_numeric_id(id: u32) -> Option<Self> {
        match id {
            1 => Some(TaskTypeId::SupervisedClassification),
            2 => Some(TaskTypeId::SupervisedRegression),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TaskTypeId::SupervisedClassification => "supervised_classification",
            TaskTypeId::SupervisedRegression => "supervised_regression",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "supervised_classification" | "classification" | "1" => Some(TaskTypeId::SupervisedClassification),
            "supervised_regression" | "regression" | "2" => Some(TaskTypeId::SupervisedRegression),
            _ => None,
        }
    }

    pub fn is_classification(self) -> bool {
        self == TaskTypeId::SupervisedClassification
    }

    pub fn default_measure(self) -> &'static str {
        match self {
            TaskTypeId::SupervisedClassification => "predictive_accuracy",
            TaskTypeId::SupervisedRegression => "root_mean_squared_error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IoDescriptor {
    pub name: String,
    pub data_type: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskType {
    pub task_type_id: u32,
    pub name: String,
    pub required_inputs: Vec<IoDescriptor>,
    pub required_outputs: Vec<IoDescriptor>,
    pub protocol_text: String,
}

fn io(name: &str, data_type: &str, description: &str) -> IoDescriptor {
    IoDescriptor { name: name.into(), data_type: data_type.into(), description: description.into() }
}

/// The task types this server knows about.
pub fn task_types() -> Vec<TaskType> {
    let inputs = |target_kind: &str| {
        vec![
            io("source_data", "dataset_id", "An active dataset"),
            io("target_feature", "attribute name", &format!("A {target_kind} attribute of the dataset")),
            io("estimation_procedure", "estimation procedure", "Cross-validation or holdout with a fixed seed"),
            io("evaluation_measure", "measure name", "The measure to optimize for"),
        ]
    };
    let outputs = |prediction: &str| {
        vec![io(
            "predictions",
            "ARFF",
            &format!(
                "Columns repeat, fold, row_id, prediction ({prediction}){}, one row per TEST instance",
                if prediction == "label" { " and confidence.<label> per class" } else { "" }
            ),
        )]
    };
    vec![
        TaskType {
            task_type_id: 1,
            name: TaskTypeId::SupervisedClassification.name().into(),
            required_inputs: inputs("nominal"),
            required_outputs: outputs("label"),
            protocol_text: "For every (repeat, fold) of the split file, train on the TRAIN rows and \
                            predict every TEST row. The server evaluates the uploaded predictions."
                .into(),
        },
        TaskType {
            task_type_id: 2,
            name: TaskTypeId::SupervisedRegression.name().into(),
            required_inputs: inputs("numeric"),
            required_outputs: outputs("numeric value"),
            protocol_text: "For every (repeat, fold) of the split file, train on the TRAIN rows and \
                            predict every TEST row. The server evaluates the uploaded predictions."
                .into(),
        },
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimationKind {
    Crossvalidation,
    Holdout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationProcedure {
    #[serde(rename = "type")]
    pub kind: EstimationKind,
    pub repeats: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub folds: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub holdout_fraction: Option<f64>,
    pub stratified: bool,
    pub seed: u64,
}

impl Default for EstimationProcedure {
    /// Stratified 10-fold cross-validation, one repeat, seed 0.
    fn default() -> Self {
        EstimationProcedure::cross_validation(10, true, 0)
    }
}

impl EstimationProcedure {
    pub fn cross_validation(folds: u32, stratified: bool, seed: u64) -> Self {
        EstimationProcedure {
            kind: EstimationKind::Crossvalidation,
            repeats: 1,
            folds: Some(folds),
            holdout_fraction: None,
            stratified,
            seed,
        }
    }

    pub fn holdout(fraction: f64, stratified: bool, seed: u64) -> Self {
        EstimationProcedure {
            kind: EstimationKind::Holdout,
            repeats: 1,
            folds: None,
            holdout_fraction: Some(fraction),
            stratified,
            seed,
        }
    }

    pub fn with_repeats(mut self, repeats: u32) -> Self {
        self.repeats = repeats;
        self
    }

    /// Folds per repeat in the split table (1 for holdout).
    pub fn fold_count(&self) -> usize {
        match self.kind {
            EstimationKind::Crossvalidation => self.folds.unwrap_or(0) as usize,
            EstimationKind::Holdout => 1,
        }
    }

    /// Checks the procedure against the task type and the number of usable rows.
    pub fn validate(&self, task_type: TaskTypeId, instances: usize) -> Result<(), TaskError> {
        if self.repeats < 1 {
            return Err(TaskError::Validation("repeats must be at least 1".into()));
        }
        if self.stratified && !task_type.is_classification() {
            return Err(TaskError::Validation("stratification is only valid for classification".into()));
        }
        match self.kind {
            EstimationKind::Crossvalidation => {
                if self.holdout_fraction.is_some() {
                    return Err(TaskError::Validation("holdout_fraction given for cross-validation".into()));
                }
                let folds = self
                    .folds
                    .ok_or_else(|| TaskError::Validation("cross-validation requires folds".into()))?;
                if folds < 2 {
                    return Err(TaskError::Validation("folds must be at least 2".into()));
                }
                if folds as usize > instances {
                    return Err(TaskError::TooFewInstances { folds: folds as usize, instances });
                }
            }
            EstimationKind::Holdout => {
                if self.folds.is_some() {
                    return Err(TaskError::Validation("folds given for holdout".into()));
                }
                let f = self
                    .holdout_fraction
                    .ok_or_else(|| TaskError::Validation("holdout requires holdout_fraction".into()))?;
                if !(f > 0.0 && f < 1.0) {
                    return Err(TaskError::Validation("holdout_fraction must lie in (0, 1)".into()));
                }
                if instances < 2 {
                    return Err(TaskError::TooFewInstances { folds: 2, instances });
                }
            }
        }
        Ok(())
    }

    /// Canonical string used for task deduplication.
    pub fn dedup_key(&self) -> String {
        serde_json::to_string(self).expect("estimation procedure serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SplitKind {
    #[serde(rename = "TRAIN")]
    Train,
    #[serde(rename = "TEST")]
    Test,
}

impl SplitKind {
    pub fn label(self) -> &'static str {
        match self {
            SplitKind::Train => "TRAIN",
            SplitKind::Test => "TEST",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SplitEntry {
    pub kind: SplitKind,
    pub rowid: usize,
    pub repeat: usize,
    pub fold: usize,
}

/// Explicit TRAIN/TEST membership per (repeat, fold).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitTable {
    pub repeats: usize,
    pub folds: usize,
    pub entries: Vec<SplitEntry>,
}

impl SplitTable {
    pub fn rows(&self, kind: SplitKind, repeat: usize, fold: usize) -> Vec<usize> {
        self.entries
            .iter()
            .filter(|e| e.kind == kind && e.repeat == repeat && e.fold == fold)
            .map(|e| e.rowid)
            .collect()
    }

    pub fn test_rows(&self, repeat: usize, fold: usize) -> Vec<usize> {
        self.rows(SplitKind::Test, repeat, fold)
    }

    pub fn train_rows(&self, repeat: usize, fold: usize) -> Vec<usize> {
        self.rows(SplitKind::Train, repeat, fold)
    }

    /// All (repeat, fold) pairs in canonical order.
    pub fn fold_keys(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.repeats).flat_map(move |r| (0..self.folds).map(move |f| (r, f)))
    }

    pub fn to_relation(&self) -> Relation {
        let attributes = vec![
            AttributeSpec::nominal("type", ["TRAIN", "TEST"]),
            AttributeSpec::numeric("rowid"),
            AttributeSpec::numeric("repeat"),
            AttributeSpec::numeric("fold"),
        ];
        let rows = self
            .entries
            .iter()
            .map(|e| {
                Row::new(vec![
                    Cell::Text(e.kind.label().into()),
                    Cell::Number(e.rowid as f64),
                    Cell::Number(e.repeat as f64),
                    Cell::Number(e.fold as f64),
                ])
            })
            .collect();
        Relation { name: "splits".into(), attributes, rows }
    }

    pub fn to_arff(&self) -> String {
        arff::write_arff(&self.to_relation())
    }

    pub fn from_arff(bytes: &[u8]) -> Result<SplitTable, TaskError> {
        let rel = arff::parse_arff(bytes).map_err(|e| TaskError::SplitFile(e.to_string()))?;
        SplitTable::from_relation(&rel)
    }

    pub fn from_relation(rel: &Relation) -> Result<SplitTable, TaskError> {
        let col = |name: &str| {
            rel.attribute_index(name)
                .ok_or_else(|| TaskError::SplitFile(format!("missing attribute '{name}'")))
        };
        let (t, r, rep, f) = (col("type")?, col("rowid")?, col("repeat")?, col("fold")?);
        let index = |cell: &Cell, what: &str| -> Result<usize, TaskError> {
            match cell {
                Cell::Number(v) if *v >= 0.0 && v.fract() == 0.0 => Ok(*v as usize),
                _ => Err(TaskError::SplitFile(format!("invalid {what} value"))),
            }
        };
        let mut entries = Vec::with_capacity(rel.rows.len());
        let (mut repeats, mut folds) = (0, 0);
        for row in &rel.rows {
            let kind = match row.cells[t].as_text() {
                Some("TRAIN") => SplitKind::Train,
                Some("TEST") => SplitKind::Test,
                _ => return Err(TaskError::SplitFile("invalid type value".into())),
            };
            let e = SplitEntry {
                kind,
                rowid: index(&row.cells[r], "rowid")?,
                repeat: index(&row.cells[rep], "repeat")?,
                fold: index(&row.cells[f], "fold")?,
            };
            repeats = repeats.max(e.repeat + 1);
            folds = folds.max(e.fold + 1);
            entries.push(e);
        }
        Ok(SplitTable { repeats, folds, entries })
    }
}

/// Rows whose target cell is missing; they take no part in splits or evaluation.
pub fn excluded_rowids(relation: &Relation, target: &str) -> Vec<usize> {
    let Some(idx) = relation.attribute_index(target) else { return Vec::new() };
    relation
        .rows
        .iter()
        .enumerate()
        .filter(|(_, r)| r.cells[idx].is_missing())
        .map(|(i, _)| i)
        .collect()
}

/// Generates the deterministic split table for a task.
///
/// Per repeat `r`: seed the generator with `seed + r`, Fisher–Yates shuffle
/// the usable row indices, optionally regroup the shuffled order by class
/// (classes in order of first appearance in the dataset), then deal positions
/// round-robin into folds. TRAIN is the complement of TEST within each fold.
pub fn generate_splits(
    relation: &Relation,
    target: &str,
    estimation: &EstimationProcedure,
) -> Result<SplitTable, TaskError> {
    let target_idx = relation
        .attribute_index(target)
        .ok_or_else(|| TaskError::Validation(format!("no such attribute: '{target}'")))?;
    let target_attr = &relation.attributes[target_idx];
    let task_type = if target_attr.is_nominal() {
        TaskTypeId::SupervisedClassification
    } else {
        TaskTypeId::SupervisedRegression
    };

    let usable: Vec<usize> =
        (0..relation.rows.len()).filter(|&i| !relation.rows[i].cells[target_idx].is_missing()).collect();
    estimation.validate(task_type, usable.len())?;

    // class key per row: index into order of first appearance
    let mut class_of = vec![usize::MAX; relation.rows.len()];
    let mut n_classes = 0;
    if estimation.stratified {
        let mut first_seen: HashMap<&str, usize> = HashMap::new();
        for &i in &usable {
            let label = relation.rows[i].cells[target_idx].as_text().unwrap_or_default();
            let next = first_seen.len();
            class_of[i] = *first_seen.entry(label).or_insert(next);
        }
        n_classes = first_seen.len();
    }

    let folds = estimation.fold_count();
    let mut entries = Vec::with_capacity(estimation.repeats as usize * folds * usable.len());
    for repeat in 0..estimation.repeats as usize {
        let mut order = usable.clone();
        SplitRng::new(estimation.seed.wrapping_add(repeat as u64)).shuffle(&mut order);

        let groups: Vec<Vec<usize>> = if estimation.stratified {
            let mut groups = vec![Vec::new(); n_classes];
            for &i in &order {
                groups[class_of[i]].push(i);
            }
            groups
        } else {
            vec![order]
        };

        // test_fold[rowid] for usable rows
        let mut test_fold = vec![usize::MAX; relation.rows.len()];
        match estimation.kind {
            EstimationKind::Crossvalidation => {
                for (j, &i) in groups.iter().flatten().enumerate() {
                    test_fold[i] = j % folds;
                }
            }
            EstimationKind::Holdout => {
                let fraction = estimation.holdout_fraction.unwrap_or_default();
                let mut n_test = 0;
                for group in &groups {
                    let take = (group.len() as f64 * fraction).round() as usize;
                    for &i in group.iter().take(take) {
                        test_fold[i] = 0;
                        n_test += 1;
                    }
                }
                if n_test == 0 || n_test == usable.len() {
                    return Err(TaskError::Validation(format!(
                        "holdout_fraction {fraction} leaves an empty train or test set"
                    )));
                }
            }
        }

        for fold in 0..folds {
            for kind in [SplitKind::Train, SplitKind::Test] {
                for &rowid in &usable {
                    let is_test = test_fold[rowid] == fold;
                    if is_test == (kind == SplitKind::Test) {
                        entries.push(SplitEntry { kind, rowid, repeat, fold });
                    }
                }
            }
        }
    }
    Ok(SplitTable { repeats: estimation.repeats as usize, folds, entries })
}

/// A task: an immutable instantiation of a task type on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub task_id: u64,
    pub task_type: TaskTypeId,
    pub dataset_id: u64,
    pub target: String,
    pub estimation: EstimationProcedure,
    pub evaluation_measure: String,
    /// SHA-256 of the split file in the blob store.
    pub splits: String,
    pub excluded_rowids: Vec<usize>,
    pub uploader: u64,
    pub uploaded_at: DateTime<Utc>,
    #[serde(default)]
    pub deleted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DescriptionFormat {
    Xml,
    Json,
}

impl DescriptionFormat {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "xml" => Some(DescriptionFormat::Xml),
            "json" => Some(DescriptionFormat::Json),
            _ => None,
        }
    }
}

/// Wire form of a task; XML and JSON render exactly these fields in this order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskDescription {
    pub task_id: u64,
    pub task_type: String,
    pub dataset_id: u64,
    pub target_feature: String,
    pub estimation_procedure: EstimationProcedure,
    pub evaluation_measure: String,
    pub splits_url: String,
    pub dataset_url: String,
    pub excluded_rowids: Vec<usize>,
}

impl TaskDescription {
    pub fn from_task(task: &Task) -> Self {
        TaskDescription {
            task_id: task.task_id,
            task_type: task.task_type.name().into(),
            dataset_id: task.dataset_id,
            target_feature: task.target.clone(),
            estimation_procedure: task.estimation.clone(),
            evaluation_measure: task.evaluation_measure.clone(),
            splits_url: format!("/api/v1/task/{}/splits", task.task_id),
            dataset_url: format!("/api/v1/data/{}/file", task.dataset_id),
            excluded_rowids: task.excluded_rowids.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("task description serializes")
    }

    pub fn to_xml(&self) -> String {
        let mut out = String::new();
        out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
        out.push_str("<oml:task xmlns:oml=\"http://openml.org/openml\">\n");
        let mut el = |name: &str, value: &str, indent: usize| {
            let _ = writeln!(out, "{:indent$}<oml:{name}>{}</oml:{name}>", "", xml_escape(value), indent = indent);
        };
        el("task_id", &self.task_id.to_string(), 2);
        el("task_type", &self.task_type, 2);
        el("dataset_id", &self.dataset_id.to_string(), 2);
        el("target_feature", &self.target_feature, 2);
        drop(el);
        out.push_str("  <oml:estimation_procedure>\n");
        let e = &self.estimation_procedure;
        let mut fields: Vec<(&str, String)> = vec![
            ("type", match e.kind {
                EstimationKind::Crossvalidation => "crossvalidation".into(),
                EstimationKind::Holdout => "holdout".into(),
            }),
            ("repeats", e.repeats.to_string()),
        ];
        if let Some(folds) = e.folds {
            fields.push(("folds", folds.to_string()));
        }
        if let Some(f) = e.holdout_fraction {
            fields.push(("holdout_fraction", arff::format_number(f)));
        }
        fields.push(("stratified", e.stratified.to_string()));
        fields.push(("seed", e.seed.to_string()));
        for (name, value) in fields {
            let _ = writeln!(out, "    <oml:{name}>{}</oml:{name}>", xml_escape(&value));
        }
        out.push_str("  </oml:estimation_procedure>\n");
        let mut el = |name: &str, value: &str| {
            let _ = writeln!(out, "  <oml:{name}>{}</oml:{name}>", xml_escape(value));
        };
        el("evaluation_measure", &self.evaluation_measure);
        el("splits_url", &self.splits_url);
        el("dataset_url", &self.dataset_url);
        drop(el);
        if self.excluded_rowids.is_empty() {
            out.push_str("  <oml:excluded_rowids/>\n");
        } else {
            out.push_str("  <oml:excluded_rowids>\n");
            for id in &self.excluded_rowids {
                let _ = writeln!(out, "    <oml:rowid>{id}</oml:rowid>");
            }
            out.push_str("  </oml:excluded_rowids>\n");
        }
        out.push_str("</oml:task>\n");
        out
    }
}

pub fn render_task_description(task: &Task, format: DescriptionFormat) -> String {
    let desc = TaskDescription::from_task(task);
    match format {
        DescriptionFormat::Xml => desc.to_xml(),
        DescriptionFormat::Json => desc.to_json(),
    }
}

fn xml_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}
