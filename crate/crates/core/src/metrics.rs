//! Classification metrics over the two output classes.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cnn::{CnnError, Model, Sample, CLASS_DRUMMING, CLASS_OTHER};

pub const CLASS_NAMES: [&str; 2] = ["other", "drumming"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRecall {
    /// None when the class was never predicted.
    pub precision: Option<f64>,
    /// None when the class never occurs.
    pub recall: Option<f64>,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerClass {
    pub other: PrecisionRecall,
    pub drumming: PrecisionRecall,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub accuracy: f64,
    /// Row = true class, column = predicted class, in `CLASS_NAMES` order.
    pub confusion_matrix: [[usize; 2]; 2],
    pub per_class_precision_recall: PerClass,
    pub skipped_unlabeled: usize,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Builds a report from (true, predicted) class pairs.
pub fn evaluate_pairs(pairs: impl IntoIterator<Item = (usize, usize)>) -> EvalReport {
    let mut cm = [[0usize; 2]; 2];
    for (t, p) in pairs {
        cm[t][p] += 1;
    }
    let n = cm.iter().flatten().sum::<usize>();
    let correct = cm[0][0] + cm[1][1];
    let pr = |c: usize| PrecisionRecall {
        precision: ratio(cm[c][c], cm[0][c] + cm[1][c]),
        recall: ratio(cm[c][c], cm[c][0] + cm[c][1]),
        support: cm[c][0] + cm[c][1],
    };
    EvalReport {
        n,
        accuracy: ratio(correct, n).unwrap_or(0.0),
        confusion_matrix: cm,
        per_class_precision_recall: PerClass {
            other: pr(CLASS_OTHER),
            drumming: pr(CLASS_DRUMMING),
        },
        skipped_unlabeled: 0,
    }
}

/// Predicted class indices for every sample, computed in parallel.
pub fn predict_classes(model: &Model<f32>, samples: &[Sample]) -> Result<Vec<usize>, CnnError> {
    samples
        .par_iter()
        .map(|s| {
            let logits = model.forward(&s.input)?;
            Ok(usize::from(logits[CLASS_DRUMMING] > logits[CLASS_OTHER]))
        })
        .collect()
}

pub fn evaluate_model(model: &Model<f32>, samples: &[Sample]) -> Result<EvalReport, CnnError> {
    let predicted = predict_classes(model, samples)?;
    Ok(evaluate_pairs(samples.iter().map(|s| s.label).zip(predicted)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictor() {
        let labels = [0, 1, 1, 0, 1, 0, 0, 1, 1, 0];
        let r = evaluate_pairs(labels.iter().map(|&l| (l, l)));
        assert_eq!(r.n, 10);
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.confusion_matrix, [[5, 0], [0, 5]]);
        assert_eq!(r.per_class_precision_recall.drumming.precision, Some(1.0));
        assert_eq!(r.per_class_precision_recall.other.recall, Some(1.0));
    }

    #[test]
    fn always_other_on_balanced_set() {
        let r = evaluate_pairs((0..10).map(|i| (i % 2, CLASS_OTHER)));
        assert_eq!(r.accuracy, 0.5);
        assert_eq!(r.confusion_matrix, [[5, 0], [5, 0]]);
        let d = r.per_class_precision_recall.drumming;
        assert_eq!((d.precision, d.recall), (None, Some(0.0)));
        assert_eq!(r.per_class_precision_recall.other.precision, Some(0.5));
    }

    #[test]
    fn json_shape() {
        let r = evaluate_pairs([(1, 1), (0, 1)]);
        let v = serde_json::to_value(&r).unwrap();
        for key in ["accuracy", "confusion_matrix", "per_class_precision_recall"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["confusion_matrix"], serde_json::json!([[0, 1], [0, 1]]));
        assert_eq!(v["per_class_precision_recall"]["drumming"]["precision"], 0.5);
    }
}
