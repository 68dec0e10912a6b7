use super::{FeatureKind, FeatureValue, Learner, LearnerError, LearningProblem, Model, Prediction};

/// k-nearest-neighbour classifier (k = 1 by default).
///
/// Numeric attributes are rescaled to [0, 1] with the training min/max and
/// contribute squared differences; nominal attributes contribute 0/1
/// mismatches. A missing value on either side contributes 1. Equal distances
/// resolve to the lower training row index. Vote ties go to the class whose
/// member ranks nearest.
#[derive(Debug, Clone, Copy)]
pub struct NearestNeighbor {
    k: usize,
}

impl NearestNeighbor {
    pub fn new(k: usize) -> Self {
        NearestNeighbor { k: k.max(1) }
    }
}

impl Default for NearestNeighbor {
    fn default() -> Self {
        NearestNeighbor::new(1)
    }
}

#[derive(Debug)]
struct KnnModel {
    k: usize,
    classes: usize,
    kinds: Vec<FeatureKind>,
    /// (min, max) per feature; unused for nominal features
    ranges: Vec<(f64, f64)>,
    rows: Vec<(usize, Vec<FeatureValue>, usize)>,
}

impl KnnModel {
    fn distance_sq(&self, a: &[FeatureValue], b: &[FeatureValue]) -> f64 {
        let mut d = 0.0;
        for (f, kind) in self.kinds.iter().enumerate() {
            d += match (kind, a[f], b[f]) {
                (_, FeatureValue::Missing, _) | (_, _, FeatureValue::Missing) => 1.0,
                (FeatureKind::Numeric, FeatureValue::Num(x), FeatureValue::Num(y)) => {
                    let (lo, hi) = self.ranges[f];
                    let diff = if hi > lo {
                        (x - lo) / (hi - lo) - (y - lo) / (hi - lo)
                    } else if x == y {
                        0.0
                    } else {
                        1.0
                    };
                    diff * diff
                }
                (FeatureKind::Nominal { .. }, FeatureValue::Cat(x), FeatureValue::Cat(y))
                    if x == y => {
                        0.0
                    }
                _ => 1.0,
            };
        }
        d
    }
}

impl Model for KnnModel {
    fn predict(&self, instance: &[FeatureValue]) -> Prediction {
        let mut scored: Vec<(f64, usize, usize)> =
            self.rows.iter().map(|(row, x, c)| (self.distance_sq(instance, x), *row, *c)).collect();
        let k = self.k.min(scored.len());
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        scored.truncate(k);

        let mut votes = vec![0usize; self.classes];
        for &(_, _, c) in &scored {
            votes[c] += 1;
        }
        let top = *votes.iter().max().unwrap_or(&0);
        let label = scored.iter().map(|&(_, _, c)| c).find(|&c| votes[c] == top).unwrap_or(0);
        let confidences = votes.iter().map(|&v| v as f64 / k as f64).collect();
        Prediction { label, confidences }
    }
}

impl Learner for NearestNeighbor {
    fn fit(&self, problem: &LearningProblem, train: &[usize]) -> Result<Box<dyn Model>, LearnerError> {
        let rows: Vec<(usize, Vec<FeatureValue>, usize)> =
            problem.labelled(train).map(|(r, c)| (r, problem.instance(r).to_vec(), c)).collect();
        if rows.is_empty() {
            return Err(LearnerError::EmptyTraining);
        }
        let kinds: Vec<FeatureKind> = problem.features.iter().map(|f| f.kind).collect();
        let mut ranges = vec![(f64::INFINITY, f64::NEG_INFINITY); kinds.len()];
        for (_, x, _) in &rows {
            for (f, v) in x.iter().enumerate() {
                if let FeatureValue::Num(v) = *v {
                    ranges[f].0 = ranges[f].0.min(v);
                    ranges[f].1 = ranges[f].1.max(v);
                }
            }
        }
        Ok(Box::new(KnnModel { k: self.k, classes: problem.num_classes(), kinds, ranges, rows }))
    }
}
