//! Dataset characteristics: simple counts, statistical and
//! information-theoretic measures, and landmarkers.
//!
//! Every value is computed on a canonically sorted copy of the rows, so the
//! result depends only on the multiset of rows and never on file order.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arff::{AttributeKind, Cell, Relation};
use crate::learners::{LearnerError, LearnerKind, LearningProblem};
use crate::task::{generate_splits, EstimationProcedure, TaskError};

/// Equal-width bins used to discretize numeric attributes for entropies.
pub const DISCRETIZATION_BINS: usize = 10;
/// Seed of the internal cross-validation behind stored landmarker values.
pub const LANDMARKER_SEED: u64 = 1;
/// Instances needed before landmarkers are computed.
pub const LANDMARKER_MIN_INSTANCES: usize = 10;

pub const QUALITY_NAMES: [&str; 24] = [
    "NumberOfInstances",
    "NumberOfFeatures",
    "NumberOfNumericFeatures",
    "NumberOfNominalFeatures",
    "NumberOfClasses",
    "NumberOfMissingValues",
    "PercentageOfMissingValues",
    "NumberOfInstancesWithMissing",
    "Dimensionality",
    "MajorityClassPercentage",
    "MinorityClassPercentage",
    "DefaultAccuracy",
    "MeanSkewnessOfNumeric",
    "MeanKurtosisOfNumeric",
    "MeanStdDevOfNumeric",
    "ClassEntropy",
    "MeanAttributeEntropy",
    "MeanMutualInformation",
    "EquivalentNumberOfAttributes",
    "NoiseSignalRatio",
    "StumpLandmarker",
    "OneNNLandmarker",
    "NaiveBayesLandmarker",
    "MajorityLandmarker",
];

/// Qualities that only exist for a nominal target.
pub const CLASS_QUALITIES: [&str; 12] = [
    "NumberOfClasses",
    "MajorityClassPercentage",
    "MinorityClassPercentage",
    "DefaultAccuracy",
    "ClassEntropy",
    "MeanMutualInformation",
    "EquivalentNumberOfAttributes",
    "NoiseSignalRatio",
    "StumpLandmarker",
    "OneNNLandmarker",
    "NaiveBayesLandmarker",
    "MajorityLandmarker",
];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QualityError {
    #[error("relation has no rows")]
    Degenerate,
    #[error("no such attribute: '{0}'")]
    UnknownTarget(String),
    #[error("target '{0}' is not nominal")]
    NotNominal(String),
    #[error("landmarkers need at least {needed} labelled instances, found {found}")]
    TooFewInstances { needed: usize, found: usize },
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error(transparent)]
    Split(#[from] TaskError),
}

/// Quality name → value; `None` marks an undefined value (rendered "n/a").
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct QualityVector(pub BTreeMap<String, Option<f64>>);

impl QualityVector {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.0.get(name).copied().flatten()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.0.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    fn set(&mut self, name: &str, value: Option<f64>) {
        self.0.insert(name.to_string(), value);
    }
}

/// Shannon entropy in bits of a frequency table.
pub fn entropy(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let n = total as f64;
    let h: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum();
    h.max(0.0)
}

fn codes_entropy(codes: &[usize], cardinality: usize) -> f64 {
    let mut counts = vec![0; cardinality];
    for &c in codes {
        counts[c] += 1;
    }
    entropy(&counts)
}

/// I(X;C) = H(X) + H(C) − H(X,C) over rows where both are present.
pub fn mutual_information(x: &[Option<usize>], c: &[Option<usize>]) -> f64 {
    let pairs: Vec<(usize, usize)> = x.iter().zip(c).filter_map(|(a, b)| Some(((*a)?, (*b)?))).collect();
    if pairs.is_empty() {
        return 0.0;
    }
    let nx = pairs.iter().map(|p| p.0).max().unwrap_or(0) + 1;
    let nc = pairs.iter().map(|p| p.1).max().unwrap_or(0) + 1;
    let hx = codes_entropy(&pairs.iter().map(|p| p.0).collect::<Vec<_>>(), nx);
    let hc = codes_entropy(&pairs.iter().map(|p| p.1).collect::<Vec<_>>(), nc);
    let hxc = codes_entropy(&pairs.iter().map(|p| p.0 * nc + p.1).collect::<Vec<_>>(), nx * nc);
    (hx + hc - hxc).max(0.0)
}

/// Equal-width binning between the observed min and max.
pub fn discretize(values: &[Option<f64>], bins: usize) -> Vec<Option<usize>> {
    let present = values.iter().flatten();
    let lo = present.clone().copied().fold(f64::INFINITY, f64::min);
    let hi = present.copied().fold(f64::NEG_INFINITY, f64::max);
    values
        .iter()
        .map(|v| {
            v.map(|v| {
                if hi > lo {
                    (((v - lo) / (hi - lo) * bins as f64).floor() as usize).min(bins - 1)
                } else {
                    0
                }
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub std_dev: f64,
    /// `None` when the attribute is constant.
    pub skewness: Option<f64>,
    pub excess_kurtosis: Option<f64>,
}

/// Population moments: g1 = m3 / m2^1.5, g2 = m4 / m2^2 − 3.
pub fn moments(values: &[f64]) -> Option<Moments> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &v in values {
        let d = v - mean;
        m2 += d * d;
        m3 += d * d * d;
        m4 += d * d * d * d;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    if m2 <= 0.0 {
        return Some(Moments { std_dev: 0.0, skewness: None, excess_kurtosis: None });
    }
    Some(Moments {
        std_dev: m2.sqrt(),
        skewness: Some(m3 / m2.powf(1.5)),
        excess_kurtosis: Some(m4 / (m2 * m2) - 3.0),
    })
}

fn cmp_cells(a: &Cell, b: &Cell) -> Ordering {
    match (a, b) {
        (Cell::Missing, Cell::Missing) => Ordering::Equal,
        (Cell::Missing, _) => Ordering::Less,
        (_, Cell::Missing) => Ordering::Greater,
        (Cell::Number(x), Cell::Number(y)) => x.total_cmp(y),
        (Cell::Number(_), Cell::Text(_)) => Ordering::Less,
        (Cell::Text(_), Cell::Number(_)) => Ordering::Greater,
        (Cell::Text(x), Cell::Text(y)) => x.cmp(y),
    }
}

/// Copy of the relation with rows in a canonical total order.
pub fn canonical_order(relation: &Relation) -> Relation {
    let mut rows = relation.rows.clone();
    rows.sort_by(|a, b| {
        a.cells.iter().zip(&b.cells).map(|(x, y)| cmp_cells(x, y)).find(|o| o.is_ne()).unwrap_or(Ordering::Equal)
    });
    Relation { name: relation.name.clone(), attributes: relation.attributes.clone(), rows }
}

fn mean_of(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Computes all applicable qualities.
///
/// `target` may be absent (no class-based qualities). Attributes named in
/// `ignored` (such as a row-id column) take no part at all.
pub fn compute_qualities(
    relation: &Relation,
    target: Option<&str>,
    ignored: &[&str],
) -> Result<QualityVector, QualityError> {
    if relation.rows.is_empty() {
        return Err(QualityError::Degenerate);
    }
    let rel = canonical_order(relation);
    let target_idx = match target {
        Some(t) => Some(rel.attribute_index(t).ok_or_else(|| QualityError::UnknownTarget(t.into()))?),
        None => None,
    };
    let used: Vec<usize> =
        (0..rel.attributes.len()).filter(|&i| !ignored.contains(&rel.attributes[i].name.as_str())).collect();
    let features: Vec<usize> = used
        .iter()
        .copied()
        .filter(|&i| Some(i) != target_idx)
        .filter(|&i| matches!(rel.attributes[i].kind, AttributeKind::Numeric | AttributeKind::Nominal { .. }))
        .collect();

    let n = rel.rows.len();
    let mut q = QualityVector::default();

    let n_features = used.len();
    let missing: usize = rel.rows.iter().map(|r| used.iter().filter(|&&i| r.cells[i].is_missing()).count()).sum();
    let rows_with_missing = rel.rows.iter().filter(|r| used.iter().any(|&i| r.cells[i].is_missing())).count();
    q.set("NumberOfInstances", Some(n as f64));
    q.set("NumberOfFeatures", Some(n_features as f64));
    q.set("NumberOfNumericFeatures", Some(used.iter().filter(|&&i| rel.attributes[i].is_numeric()).count() as f64));
    q.set("NumberOfNominalFeatures", Some(used.iter().filter(|&&i| rel.attributes[i].is_nominal()).count() as f64));
    q.set("NumberOfMissingValues", Some(missing as f64));
    q.set(
        "PercentageOfMissingValues",
        Some(if n_features == 0 { 0.0 } else { 100.0 * missing as f64 / (n * n_features) as f64 }),
    );
    q.set("NumberOfInstancesWithMissing", Some(rows_with_missing as f64));
    q.set("Dimensionality", Some(n_features as f64 / n as f64));

    // per-feature codes (nominal label index or numeric bin)
    let mut codes: Vec<Vec<Option<usize>>> = Vec::new();
    let mut attribute_entropies = Vec::new();
    let (mut std_devs, mut skews, mut kurts) = (Vec::new(), Vec::new(), Vec::new());
    for &i in &features {
        let attr = &rel.attributes[i];
        let column: Vec<Option<usize>> = match &attr.kind {
            AttributeKind::Nominal { .. } => {
                rel.rows.iter().map(|r| r.cells[i].as_text().and_then(|t| attr.label_index(t))).collect()
            }
            _ => {
                let values: Vec<Option<f64>> = rel.rows.iter().map(|r| r.cells[i].as_number()).collect();
                let present: Vec<f64> = values.iter().flatten().copied().collect();
                if let Some(m) = moments(&present) {
                    std_devs.push(m.std_dev);
                    if let (Some(s), Some(k)) = (m.skewness, m.excess_kurtosis) {
                        skews.push(s);
                        kurts.push(k);
                    }
                }
                discretize(&values, DISCRETIZATION_BINS)
            }
        };
        let present: Vec<usize> = column.iter().flatten().copied().collect();
        if !present.is_empty() {
            let card = present.iter().max().unwrap_or(&0) + 1;
            attribute_entropies.push(codes_entropy(&present, card));
        }
        codes.push(column);
    }
    q.set("MeanSkewnessOfNumeric", mean_of(&skews));
    q.set("MeanKurtosisOfNumeric", mean_of(&kurts));
    q.set("MeanStdDevOfNumeric", mean_of(&std_devs));
    let mean_attr_entropy = mean_of(&attribute_entropies);
    q.set("MeanAttributeEntropy", mean_attr_entropy);

    let Some(ti) = target_idx else { return Ok(q) };
    let target_attr = &rel.attributes[ti];
    let Some(labels) = target_attr.labels() else { return Ok(q) };
    let target_codes: Vec<Option<usize>> =
        rel.rows.iter().map(|r| r.cells[ti].as_text().and_then(|t| target_attr.label_index(t))).collect();
    let mut class_counts = vec![0usize; labels.len()];
    for c in target_codes.iter().flatten() {
        class_counts[*c] += 1;
    }
    let labelled: usize = class_counts.iter().sum();
    q.set("NumberOfClasses", Some(labels.len() as f64));
    if labelled == 0 {
        for name in CLASS_QUALITIES.iter().skip(1) {
            q.set(name, None);
        }
        return Ok(q);
    }
    let max = *class_counts.iter().max().unwrap_or(&0);
    let min = class_counts.iter().copied().filter(|&c| c > 0).min().unwrap_or(0);
    q.set("MajorityClassPercentage", Some(100.0 * max as f64 / labelled as f64));
    q.set("MinorityClassPercentage", Some(100.0 * min as f64 / labelled as f64));
    q.set("DefaultAccuracy", Some(max as f64 / labelled as f64));
    let class_entropy = entropy(&class_counts);
    q.set("ClassEntropy", Some(class_entropy));

    let mis: Vec<f64> = codes.iter().map(|col| mutual_information(col, &target_codes)).collect();
    let mmi = mean_of(&mis);
    q.set("MeanMutualInformation", mmi);
    let (ena, nsr) = match (mmi, mean_attr_entropy) {
        (Some(m), Some(h)) if m > 0.0 => (Some(class_entropy / m), Some((h - m) / m)),
        _ => (None, None),
    };
    q.set("EquivalentNumberOfAttributes", ena);
    q.set("NoiseSignalRatio", nsr);

    let landmarks = [
        ("StumpLandmarker", LearnerKind::Stump),
        ("OneNNLandmarker", LearnerKind::OneNn),
        ("NaiveBayesLandmarker", LearnerKind::NaiveBayes),
        ("MajorityLandmarker", LearnerKind::Majority),
    ];
    for (name, kind) in landmarks {
        let value = if labelled >= LANDMARKER_MIN_INSTANCES {
            Some(landmark(&rel, &target_attr.name, ignored, kind, LANDMARKER_SEED)?)
        } else {
            None
        };
        q.set(name, value);
    }
    Ok(q)
}

/// Pooled accuracy of a reference learner under stratified 10-fold CV.
pub fn run_landmarker(relation: &Relation, target: &str, learner: LearnerKind, seed: u64) -> Result<f64, QualityError> {
    landmark(relation, target, &[], learner, seed)
}

fn landmark(
    relation: &Relation,
    target: &str,
    ignored: &[&str],
    learner: LearnerKind,
    seed: u64,
) -> Result<f64, QualityError> {
    let attr = relation.attribute(target).ok_or_else(|| QualityError::UnknownTarget(target.into()))?;
    if !attr.is_nominal() {
        return Err(QualityError::NotNominal(target.into()));
    }
    let problem = LearningProblem::new(relation, target, ignored)?;
    let labelled = (0..problem.num_rows()).filter(|&r| problem.target(r).is_some()).count();
    if labelled < LANDMARKER_MIN_INSTANCES {
        return Err(QualityError::TooFewInstances { needed: LANDMARKER_MIN_INSTANCES, found: labelled });
    }
    let splits = generate_splits(relation, target, &EstimationProcedure::cross_validation(10, true, seed))?;
    let learner = learner.build();
    let (mut correct, mut total) = (0usize, 0usize);
    for (repeat, fold) in splits.fold_keys() {
        let train = splits.train_rows(repeat, fold);
        let model = learner.fit(&problem, &train)?;
        for row in splits.test_rows(repeat, fold) {
            let truth = problem.target(row).expect("split rows carry labels");
            if model.predict(problem.instance(row)).label == truth {
                correct += 1;
            }
            total += 1;
        }
    }
    Ok(correct as f64 / total as f64)
}
