use super::{FeatureKind, FeatureValue, Learner, LearnerError, LearningProblem, Model, Prediction};

const VARIANCE_FLOOR: f64 = 1e-9;

/// Naive Bayes: add-one smoothed multinomials for nominal attributes and
/// per-class Gaussians for numeric ones. Missing values are left out of the
/// likelihood product; scores are accumulated in log space.
#[derive(Debug, Clone, Copy, Default)]
pub struct NaiveBayes;

#[derive(Debug)]
enum Likelihood {
    /// log P(value | class), indexed [class][label]
    Nominal(Vec<Vec<f64>>),
    /// (mean, variance) per class
    Gaussian(Vec<(f64, f64)>),
}

#[derive(Debug)]
struct NaiveBayesModel {
    log_priors: Vec<f64>,
    likelihoods: Vec<Likelihood>,
}

impl Model for NaiveBayesModel {
    fn predict(&self, instance: &[FeatureValue]) -> Prediction {
        let mut scores = self.log_priors.clone();
        for (f, lik) in self.likelihoods.iter().enumerate() {
            match (lik, instance[f]) {
                (Likelihood::Nominal(table), FeatureValue::Cat(v)) => {
                    for (c, s) in scores.iter_mut().enumerate() {
                        *s += table[c][v];
                    }
                }
                (Likelihood::Gaussian(params), FeatureValue::Num(x)) => {
                    for (c, s) in scores.iter_mut().enumerate() {
                        let (mean, var) = params[c];
                        *s += -0.5 * (2.0 * std::f64::consts::PI * var).ln() - (x - mean).powi(2) / (2.0 * var);
                    }
                }
                _ => {}
            }
        }
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> =
            scores.iter().map(|&s| if s == f64::NEG_INFINITY { 0.0 } else { (s - max).exp() }).collect();
        let total: f64 = weights.iter().sum();
        Prediction::from_confidences(weights.into_iter().map(|w| w / total).collect())
    }
}

fn gaussian(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.max(VARIANCE_FLOOR)))
}

impl Learner for NaiveBayes {
    fn fit(&self, problem: &LearningProblem, train: &[usize]) -> Result<Box<dyn Model>, LearnerError> {
        let labelled: Vec<(usize, usize)> = problem.labelled(train).collect();
        if labelled.is_empty() {
            return Err(LearnerError::EmptyTraining);
        }
        let k = problem.num_classes();
        let counts = problem.class_counts(train);
        let n = labelled.len() as f64;
        let log_priors = counts
            .iter()
            .map(|&c| if c == 0 { f64::NEG_INFINITY } else { (c as f64 / n).ln() })
            .collect();

        let likelihoods = problem
            .features
            .iter()
            .enumerate()
            .map(|(fi, feature)| match feature.kind {
                FeatureKind::Nominal { labels } => {
                    let mut table = vec![vec![0usize; labels]; k];
                    for &(r, c) in &labelled {
                        if let FeatureValue::Cat(v) = problem.instance(r)[fi] {
                            table[c][v] += 1;
                        }
                    }
                    Likelihood::Nominal(
                        table
                            .into_iter()
                            .map(|row| {
                                let total: usize = row.iter().sum();
                                row.iter()
                                    .map(|&cnt| ((cnt + 1) as f64 / (total + labels) as f64).ln())
                                    .collect()
                            })
                            .collect(),
                    )
                }
                FeatureKind::Numeric => {
                    let mut per_class = vec![Vec::new(); k];
                    let mut all = Vec::new();
                    for &(r, c) in &labelled {
                        if let FeatureValue::Num(v) = problem.instance(r)[fi] {
                            per_class[c].push(v);
                            all.push(v);
                        }
                    }
                    // classes without observations fall back to the pooled estimate
                    let pooled = gaussian(&all).unwrap_or((0.0, 1.0));
                    Likelihood::Gaussian(per_class.iter().map(|v| gaussian(v).unwrap_or(pooled)).collect())
                }
            })
            .collect();

        Ok(Box::new(NaiveBayesModel { log_priors, likelihoods }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arff::{AttributeSpec, Cell, Relation, Row};

    fn nominal_relation(rows: &[(&str, &str)]) -> Relation {
        Relation {
            name: "nb".into(),
            attributes: vec![AttributeSpec::nominal("f", ["u", "v", "w"]), AttributeSpec::nominal("class", ["a", "b"])],
            rows: rows
                .iter()
                .map(|(f, c)| Row::new(vec![Cell::Text(f.to_string()), Cell::Text(c.to_string())]))
                .collect(),
        }
    }

    #[test]
    fn uninformative_feature_gives_priors() {
        // identical feature distribution in both classes; priors 0.5/0.5
        let rel = nominal_relation(&[("u", "a"), ("v", "a"), ("u", "b"), ("v", "b")]);
        let p = LearningProblem::new(&rel, "class", &[]).unwrap();
        let model = NaiveBayes.fit(&p, &[0, 1, 2, 3]).unwrap();
        for r in 0..4 {
            let c = model.predict(p.instance(r)).confidences;
            assert!((c[0] - 0.5).abs() < 1e-9 && (c[1] - 0.5).abs() < 1e-9);
        }
    }

    #[test]
    fn priors_without_features() {
        let rel = nominal_relation(&[("u", "a"), ("u", "a"), ("u", "a"), ("u", "b")]);
        let p = LearningProblem::new(&rel, "class", &["f"]).unwrap();
        let model = NaiveBayes.fit(&p, &[0, 1, 2, 3]).unwrap();
        let c = model.predict(&[]).confidences;
        assert!((c[0] - 0.75).abs() < 1e-9 && (c[1] - 0.25).abs() < 1e-9);
    }

    // Hand computation for train {u:a, u:a, v:b}:
    // P(a)=2/3, P(u|a)=(2+1)/(2+3)=3/5, P(u|b)=(0+1)/(1+3)=1/4
    // posterior(a|u) = (2/3*3/5)/(2/3*3/5 + 1/3*1/4) = 0.4/0.48333.. = 24/29
    #[test]
    fn closed_form_posterior() {
        let rel = nominal_relation(&[("u", "a"), ("u", "a"), ("v", "b"), ("w", "b")]);
        let p = LearningProblem::new(&rel, "class", &[]).unwrap();
        let model = NaiveBayes.fit(&p, &[0, 1, 2]).unwrap();
        let c = model.predict(p.instance(0)).confidences;
        assert!((c[0] - 24.0 / 29.0).abs() < 1e-12);
        // w never seen with either class: smoothing keeps it finite and nonzero
        let c = model.predict(p.instance(3)).confidences;
        // P(w|a)=1/5, P(w|b)=1/4 -> (2/15)/(2/15 + 1/12) = 8/13
        assert!(c[1] > 0.0);
        assert!((c[0] - 8.0 / 13.0).abs() < 1e-12);
    }

    #[test]
    fn deterministic_mapping_train_accuracy() {
        let rel = nominal_relation(&[("u", "a"), ("u", "a"), ("v", "b"), ("w", "b"), ("v", "b"), ("u", "a")]);
        let p = LearningProblem::new(&rel, "class", &[]).unwrap();
        let all: Vec<usize> = (0..6).collect();
        let model = NaiveBayes.fit(&p, &all).unwrap();
        assert!(all.iter().all(|&r| model.predict(p.instance(r)).label == p.target(r).unwrap()));
    }

    #[test]
    fn gaussian_separates_numeric() {
        let rel = Relation {
            name: "g".into(),
            attributes: vec![AttributeSpec::numeric("x"), AttributeSpec::nominal("class", ["a", "b"])],
            rows: [(0.0, "a"), (0.2, "a"), (5.0, "b"), (5.2, "b")]
                .iter()
                .map(|(x, c)| Row::new(vec![Cell::Number(*x), Cell::Text(c.to_string())]))
                .collect(),
        };
        let p = LearningProblem::new(&rel, "class", &[]).unwrap();
        let model = NaiveBayes.fit(&p, &[0, 1, 2, 3]).unwrap();
        assert_eq!(model.predict(&[FeatureValue::Num(0.1)]).label, 0);
        assert_eq!(model.predict(&[FeatureValue::Num(4.0)]).label, 1);
        let missing = model.predict(&[FeatureValue::Missing]).confidences;
        assert!((missing[0] - 0.5).abs() < 1e-12);
    }
}
