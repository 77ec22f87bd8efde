use serde::{Deserialize, Serialize};

use crate::data::{Severity, TimeSeriesWindow};
use crate::error::{Error, Result};

use super::arch::N_CLASSES;
use super::model::ClassifierModel;

/// Accuracy and macro-averaged scores over the four severity classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// `confusion[true][predicted]`.
    pub confusion: [[usize; N_CLASSES]; N_CLASSES],
    pub per_class_precision: [f64; N_CLASSES],
    pub per_class_recall: [f64; N_CLASSES],
    pub per_class_f1: [f64; N_CLASSES],
    /// Classes with no true samples; they count as zero in the macro averages.
    pub absent_classes: Vec<Severity>,
    pub total: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl ClassificationMetrics {
    pub fn from_predictions(truth: &[Severity], predicted: &[Severity]) -> Result<Self> {
        if truth.is_empty() {
            return Err(Error::contract("cannot score an empty set"));
        }
        if truth.len() != predicted.len() {
            return Err(Error::contract(format!("{} labels but {} predictions", truth.len(), predicted.len())));
        }
        let mut confusion = [[0usize; N_CLASSES]; N_CLASSES];
        for (t, p) in truth.iter().zip(predicted) {
            confusion[t.index()][p.index()] += 1;
        }
        let mut precision = [0.0; N_CLASSES];
        let mut recall = [0.0; N_CLASSES];
        let mut f1 = [0.0; N_CLASSES];
        let mut absent = Vec::new();
        for c in 0..N_CLASSES {
            let tp = confusion[c][c];
            let support: usize = confusion[c].iter().sum();
            let predicted_c: usize = (0..N_CLASSES).map(|r| confusion[r][c]).sum();
            if support == 0 {
                absent.push(Severity::ALL[c]);
            }
            precision[c] = ratio(tp, predicted_c);
            recall[c] = ratio(tp, support);
            let s = precision[c] + recall[c];
            f1[c] = if s > 0.0 { 2.0 * precision[c] * recall[c] / s } else { 0.0 };
        }
        let correct: usize = (0..N_CLASSES).map(|c| confusion[c][c]).sum();
        let mean = |v: &[f64; N_CLASSES]| v.iter().sum::<f64>() / N_CLASSES as f64;
        Ok(ClassificationMetrics {
            accuracy: ratio(correct, truth.len()),
            precision: mean(&precision),
            recall: mean(&recall),
            f1: mean(&f1),
            confusion,
            per_class_precision: precision,
            per_class_recall: recall,
            per_class_f1: f1,
            absent_classes: absent,
            total: truth.len(),
        })
    }
}

pub fn evaluate(model: &ClassifierModel, set: &[TimeSeriesWindow]) -> Result<ClassificationMetrics> {
    if set.is_empty() {
        return Err(Error::contract("cannot evaluate on an empty set"));
    }
    let predicted = model.predict_labels(set)?;
    let truth: Vec<Severity> = set.iter().map(|w| w.label).collect();
    ClassificationMetrics::from_predictions(&truth, &predicted)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sev(v: &[usize]) -> Vec<Severity> {
        v.iter().map(|&i| Severity::ALL[i]).collect()
    }

    #[test]
    fn perfect_predictions() {
        let y = sev(&[0, 1, 2, 3, 3, 2]);
        let m = ClassificationMetrics::from_predictions(&y, &y).unwrap();
        assert_eq!((m.accuracy, m.precision, m.recall, m.f1), (1.0, 1.0, 1.0, 1.0));
        for r in 0..4 {
            for c in 0..4 {
                assert_eq!(m.confusion[r][c] > 0, r == c);
            }
        }
    }

    #[test]
    fn two_class_reduction() {
        let m = ClassificationMetrics::from_predictions(&sev(&[0, 0, 1, 1]), &sev(&[0, 1, 1, 1])).unwrap();
        assert_eq!(m.accuracy, 0.75);
        assert_eq!(m.absent_classes, vec![Severity::Medium, Severity::High]);
        assert_eq!(m.confusion[0], [1, 1, 0, 0]);
    }

    #[test]
    fn constant_predictor_on_balanced_set() {
        let truth = sev(&[0, 1, 2, 3, 0, 1, 2, 3]);
        let m = ClassificationMetrics::from_predictions(&truth, &sev(&[2; 8])).unwrap();
        assert_eq!(m.accuracy, 0.25);
        assert!((m.f1 - 0.1).abs() < 1e-12);
        assert!((m.per_class_f1[2] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn row_sums_equal_support() {
        let truth = sev(&[0, 0, 0, 1, 2, 3, 3]);
        let m = ClassificationMetrics::from_predictions(&truth, &sev(&[1, 0, 3, 1, 2, 0, 3])).unwrap();
        let support: Vec<usize> = m.confusion.iter().map(|r| r.iter().sum()).collect();
        assert_eq!(support, vec![3, 1, 1, 2]);
        let diag: usize = (0..4).map(|c| m.confusion[c][c]).sum();
        assert_eq!(m.accuracy, diag as f64 / 7.0);
    }

    #[test]
    fn empty_set_is_refused() {
        assert!(matches!(ClassificationMetrics::from_predictions(&[], &[]), Err(Error::Contract(_))));
    }
}
