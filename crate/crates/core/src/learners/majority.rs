use super::{argmax, normalize, FeatureValue, Learner, LearnerError, LearningProblem, Model, Prediction};

/// Always predicts the most frequent training class, lowest index on ties.
#[derive(Debug, Clone, Copy, Default)]
pub struct Majority;

#[derive(Debug)]
struct MajorityModel {
    label: usize,
    frequencies: Vec<f64>,
}

impl Model for MajorityModel {
    fn predict(&self, _instance: &[FeatureValue]) -> Prediction {
        Prediction { label: self.label, confidences: self.frequencies.clone() }
    }
}

impl Learner for Majority {
    fn fit(&self, problem: &LearningProblem, train: &[usize]) -> Result<Box<dyn Model>, LearnerError> {
        let counts = problem.class_counts(train);
        if counts.iter().all(|&c| c == 0) {
            return Err(LearnerError::EmptyTraining);
        }
        let frequencies = normalize(&counts);
        Ok(Box::new(MajorityModel { label: argmax(&frequencies), frequencies }))
    }
}
