use super::{normalize, FeatureKind, FeatureValue, Learner, LearnerError, LearningProblem, Model, Prediction};

/// One-level decision tree chosen by information gain.
///
/// Numeric candidates are midpoints between adjacent distinct training
/// values (`x <= t` goes left); nominal candidates are one-vs-rest per label.
/// Missing values always take the right branch. Ties go to the lowest
/// attribute index, then the lowest threshold or label index.
#[derive(Debug, Clone, Copy, Default)]
pub struct DecisionStump;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Test {
    AtMost(f64),
    Equals(usize),
}

#[derive(Debug)]
struct StumpModel {
    split: Option<(usize, Test)>,
    left: Vec<f64>,
    right: Vec<f64>,
}

impl Model for StumpModel {
    fn predict(&self, instance: &[FeatureValue]) -> Prediction {
        let goes_left = match self.split {
            None => true,
            Some((feature, test)) => match (test, instance[feature]) {
                (Test::AtMost(t), FeatureValue::Num(v)) => v <= t,
                (Test::Equals(l), FeatureValue::Cat(v)) => v == l,
                _ => false,
            },
        };
        Prediction::from_confidences(if goes_left { self.left.clone() } else { self.right.clone() })
    }
}

fn entropy(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let n = total as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

fn gain(parent_entropy: f64, left: &[usize], right: &[usize]) -> f64 {
    let nl: usize = left.iter().sum();
    let nr: usize = right.iter().sum();
    let n = (nl + nr) as f64;
    parent_entropy - (nl as f64 / n) * entropy(left) - (nr as f64 / n) * entropy(right)
}

fn sub(a: &[usize], b: &[usize]) -> Vec<usize> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

impl Learner for DecisionStump {
    fn fit(&self, problem: &LearningProblem, train: &[usize]) -> Result<Box<dyn Model>, LearnerError> {
        let labelled: Vec<(usize, usize)> = problem.labelled(train).collect();
        if labelled.is_empty() {
            return Err(LearnerError::EmptyTraining);
        }
        let k = problem.num_classes();
        let parent = problem.class_counts(train);
        let parent_entropy = entropy(&parent);

        let mut best: Option<(f64, usize, Test, Vec<usize>)> = None;
        let mut consider = |g: f64, feature: usize, test: Test, left: Vec<usize>| {
            if g > 0.0 && best.as_ref().is_none_or(|(bg, ..)| g > *bg) {
                best = Some((g, feature, test, left));
            }
        };

        for (fi, feature) in problem.features.iter().enumerate() {
            match feature.kind {
                FeatureKind::Numeric => {
                    let mut values: Vec<(f64, usize)> = labelled
                        .iter()
                        .filter_map(|&(r, c)| match problem.instance(r)[fi] {
                            FeatureValue::Num(v) => Some((v, c)),
                            _ => None,
                        })
                        .collect();
                    values.sort_by(|a, b| a.0.total_cmp(&b.0));
                    let mut left = vec![0; k];
                    let mut i = 0;
                    while i < values.len() {
                        let v = values[i].0;
                        while i < values.len() && values[i].0 == v {
                            left[values[i].1] += 1;
                            i += 1;
                        }
                        if i < values.len() {
                            let threshold = v + (values[i].0 - v) / 2.0;
                            let right = sub(&parent, &left);
                            consider(gain(parent_entropy, &left, &right), fi, Test::AtMost(threshold), left.clone());
                        }
                    }
                }
                FeatureKind::Nominal { labels } => {
                    let mut per_label = vec![vec![0; k]; labels];
                    for &(r, c) in &labelled {
                        if let FeatureValue::Cat(v) = problem.instance(r)[fi] {
                            per_label[v][c] += 1;
                        }
                    }
                    for (label, left) in per_label.into_iter().enumerate() {
                        let nl: usize = left.iter().sum();
                        if nl == 0 || nl == labelled.len() {
                            continue;
                        }
                        let right = sub(&parent, &left);
                        consider(gain(parent_entropy, &left, &right), fi, Test::Equals(label), left);
                    }
                }
            }
        }

        let model = match best {
            None => StumpModel { split: None, left: normalize(&parent), right: normalize(&parent) },
            Some((_, feature, test, left)) => {
                let right = sub(&parent, &left);
                StumpModel { split: Some((feature, test)), left: normalize(&left), right: normalize(&right) }
            }
        };
        Ok(Box::new(model))
    }
}
