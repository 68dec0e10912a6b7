//! Small reference classifiers.
//!
//! They back the landmarker qualities and the CLI's reference flows. All of
//! them work on a [`LearningProblem`], an encoded view of a relation where
//! nominal values are label indices and only numeric and nominal attributes
//! other than the target take part.

mod knn;
mod majority;
mod naive_bayes;
mod stump;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arff::{AttributeKind, Cell, Relation};
use crate::eval::{Predicted, PredictionRecord};
use crate::task::SplitTable;

pub use knn::NearestNeighbor;
pub use majority::Majority;
pub use naive_bayes::NaiveBayes;
pub use stump::DecisionStump;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LearnerError {
    #[error("no such attribute: '{0}'")]
    UnknownTarget(String),
    #[error("target '{0}' is not nominal")]
    NotNominal(String),
    #[error("no training instances with a known class")]
    EmptyTraining,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("unknown learner '{0}'")]
    UnknownLearner(String),
    #[error("split row {0} is out of range for the dataset")]
    RowOutOfRange(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FeatureValue {
    Missing,
    Num(f64),
    Cat(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    Numeric,
    Nominal { labels: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Feature {
    pub name: String,
    pub attribute: usize,
    pub kind: FeatureKind,
}

/// A relation encoded for classification against one nominal target.
#[derive(Debug, Clone)]
pub struct LearningProblem {
    pub features: Vec<Feature>,
    pub classes: Vec<String>,
    instances: Vec<Vec<FeatureValue>>,
    targets: Vec<Option<usize>>,
}

impl LearningProblem {
    /// Encodes `relation`; `ignored` attributes (e.g. a row-id column) are skipped.
    pub fn new(relation: &Relation, target: &str, ignored: &[&str]) -> Result<Self, LearnerError> {
        let target_idx =
            relation.attribute_index(target).ok_or_else(|| LearnerError::UnknownTarget(target.into()))?;
        let target_attr = &relation.attributes[target_idx];
        let classes = target_attr.labels().ok_or_else(|| LearnerError::NotNominal(target.into()))?.to_vec();

        let features: Vec<Feature> = relation
            .attributes
            .iter()
            .enumerate()
            .filter(|(i, a)| *i != target_idx && !ignored.contains(&a.name.as_str()))
            .filter_map(|(i, a)| {
                let kind = match &a.kind {
                    AttributeKind::Numeric => FeatureKind::Numeric,
                    AttributeKind::Nominal { labels } => FeatureKind::Nominal { labels: labels.len() },
                    _ => return None,
                };
                Some(Feature { name: a.name.clone(), attribute: i, kind })
            })
            .collect();

        let instances = relation
            .rows
            .iter()
            .map(|row| {
                features
                    .iter()
                    .map(|f| match &row.cells[f.attribute] {
                        Cell::Missing => FeatureValue::Missing,
                        Cell::Number(v) => FeatureValue::Num(*v),
                        Cell::Text(t) => relation.attributes[f.attribute]
                            .label_index(t)
                            .map(FeatureValue::Cat)
                            .unwrap_or(FeatureValue::Missing),
                    })
                    .collect()
            })
            .collect();
        let targets = relation
            .rows
            .iter()
            .map(|row| row.cells[target_idx].as_text().and_then(|t| target_attr.label_index(t)))
            .collect();

        Ok(LearningProblem { features, classes, instances, targets })
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn num_rows(&self) -> usize {
        self.instances.len()
    }

    pub fn instance(&self, row: usize) -> &[FeatureValue] {
        &self.instances[row]
    }

    pub fn target(&self, row: usize) -> Option<usize> {
        self.targets[row]
    }

    /// Training rows that carry a class label, with that label.
    pub(crate) fn labelled<'a>(&'a self, rows: &'a [usize]) -> impl Iterator<Item = (usize, usize)> + 'a {
        rows.iter().filter_map(move |&r| self.targets[r].map(|c| (r, c)))
    }

    pub(crate) fn class_counts(&self, rows: &[usize]) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for (_, c) in self.labelled(rows) {
            counts[c] += 1;
        }
        counts
    }
}

/// Output of a model for one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub label: usize,
    /// One entry per class in declared order; nonnegative and summing to 1.
    pub confidences: Vec<f64>,
}

impl Prediction {
    /// Picks the highest-confidence class, lowest index on ties.
    pub fn from_confidences(confidences: Vec<f64>) -> Self {
        let label = argmax(&confidences);
        Prediction { label, confidences }
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn normalize(counts: &[usize]) -> Vec<f64> {
    let total: usize = counts.iter().sum();
    if total == 0 {
        let n = counts.len().max(1) as f64;
        return vec![1.0 / n; counts.len()];
    }
    counts.iter().map(|&c| c as f64 / total as f64).collect()
}

pub trait Model: Send + Sync {
    fn predict(&self, instance: &[FeatureValue]) -> Prediction;
}

pub trait Learner: Send + Sync {
    fn fit(&self, problem: &LearningProblem, train: &[usize]) -> Result<Box<dyn Model>, LearnerError>;
}

/// Trains on the TRAIN rows of every (repeat, fold) and predicts its TEST
/// rows, producing one prediction record per TEST row in split-file order.
pub fn predict_splits(
    problem: &LearningProblem,
    splits: &SplitTable,
    learner: &dyn Learner,
) -> Result<Vec<PredictionRecord>, LearnerError> {
    let mut records = Vec::new();
    for (repeat, fold) in splits.fold_keys() {
        let model = learner.fit(problem, &splits.train_rows(repeat, fold))?;
        for row_id in splits.test_rows(repeat, fold) {
            if row_id >= problem.num_rows() {
                return Err(LearnerError::RowOutOfRange(row_id));
            }
            let p = model.predict(problem.instance(row_id));
            records.push(PredictionRecord {
                repeat,
                fold,
                row_id,
                predicted: Predicted::Label(problem.classes[p.label].clone()),
                confidences: Some(p.confidences),
            });
        }
    }
    Ok(records)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    Stump,
    #[serde(rename = "1nn")]
    OneNn,
    NaiveBayes,
    Majority,
}

impl LearnerKind {
    pub const ALL: [LearnerKind; 4] =
        [LearnerKind::Stump, LearnerKind::OneNn, LearnerKind::NaiveBayes, LearnerKind::Majority];

    pub fn parse(s: &str) -> Result<Self, LearnerError> {
        match s {
            "stump" => Ok(LearnerKind::Stump),
            "1nn" => Ok(LearnerKind::OneNn),
            "naive_bayes" => Ok(LearnerKind::NaiveBayes),
            "majority" => Ok(LearnerKind::Majority),
            other => Err(LearnerError::UnknownLearner(other.into())),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LearnerKind::Stump => "stump",
            LearnerKind::OneNn => "1nn",
            LearnerKind::NaiveBayes => "naive_bayes",
            LearnerKind::Majority => "majority",
        }
    }

    /// Tunable parameters: (name, default, low, high).
    pub fn parameters(self) -> &'static [(&'static str, i64, i64, i64)] {
        match self {
            LearnerKind::OneNn => &[("k", 1, 1, 25)],
            _ => &[],
        }
    }

    /// Builds the learner with the default parameters.
    pub fn build(self) -> Box<dyn Learner> {
        self.build_with(&BTreeMap::new()).expect("defaults are valid")
    }

    /// Builds the learner; `params` maps parameter names to integer values.
    pub fn build_with(self, params: &BTreeMap<String, i64>) -> Result<Box<dyn Learner>, LearnerError> {
        let known = self.parameters();
        for name in params.keys() {
            if !known.iter().any(|(p, ..)| p == name) {
                return Err(LearnerError::InvalidParameter(format!(
                    "learner '{}' has no parameter '{name}'",
                    self.name()
                )));
            }
        }
        Ok(match self {
            LearnerKind::Stump => Box::new(DecisionStump),
            LearnerKind::OneNn => {
                let k = params.get("k").copied().unwrap_or(1);
                if k < 1 {
                    return Err(LearnerError::InvalidParameter("k must be at least 1".into()));
                }
                Box::new(NearestNeighbor::new(k as usize))
            }
            LearnerKind::NaiveBayes => Box::new(NaiveBayes),
            LearnerKind::Majority => Box::new(Majority),
        })
    }
}

#[cfg(test)]
pub(crate) mod test_support {
    use crate::arff::{AttributeSpec, Cell, Relation, Row};

    /// Relation with numeric columns `x0..`, then a nominal `class`.
    pub fn numeric_relation(points: &[(Vec<f64>, &str)], labels: &[&str]) -> Relation {
        let dims = points.first().map(|p| p.0.len()).unwrap_or(0);
        let mut attributes: Vec<AttributeSpec> = (0..dims).map(|d| AttributeSpec::numeric(format!("x{d}"))).collect();
        attributes.push(AttributeSpec::nominal("class", labels.iter().copied()));
        let rows = points
            .iter()
            .map(|(x, c)| {
                let mut cells: Vec<Cell> = x.iter().map(|&v| Cell::Number(v)).collect();
                cells.push(Cell::Text(c.to_string()));
                Row::new(cells)
            })
            .collect();
        Relation { name: "test".into(), attributes, rows }
    }
}

#[cfg(test)]
mod tests {
    use super::test_support::numeric_relation;
    use super::*;

    #[test]
    fn confidences_are_distributions() {
        let pts: Vec<(Vec<f64>, &str)> = (0..30)
            .map(|i| (vec![i as f64, (i * 7 % 11) as f64], ["a", "b", "c"][i % 3]))
            .collect();
        let rel = numeric_relation(&pts, &["a", "b", "c"]);
        let problem = LearningProblem::new(&rel, "class", &[]).unwrap();
        let train: Vec<usize> = (0..20).collect();
        for kind in LearnerKind::ALL {
            let model = kind.build().fit(&problem, &train).unwrap();
            for row in 20..30 {
                let p = model.predict(problem.instance(row));
                assert!(p.confidences.iter().all(|&c| c >= 0.0), "{kind:?}");
                assert!((p.confidences.iter().sum::<f64>() - 1.0).abs() < 1e-9, "{kind:?}");
                assert!(p.label < 3);
            }
        }
    }

    #[test]
    fn unknown_parameter_rejected() {
        let mut params = BTreeMap::new();
        params.insert("treez".to_string(), 3);
        assert!(LearnerKind::OneNn.build_with(&params).is_err());
        params.clear();
        params.insert("k".to_string(), 0);
        assert!(LearnerKind::OneNn.build_with(&params).is_err());
    }

    #[test]
    fn non_nominal_target_rejected() {
        let rel = numeric_relation(&[(vec![1.0, 2.0], "a")], &["a"]);
        assert!(matches!(LearningProblem::new(&rel, "x0", &[]), Err(LearnerError::NotNominal(_))));
    }
}
