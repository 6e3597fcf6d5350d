use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// In-control vs out-of-control scores; any nonzero class counts as positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinaryMetrics {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl BinaryMetrics {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize, tn: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            tp,
            fp,
            fn_,
            tn,
            precision,
            recall,
            f1,
        }
    }
}

/// Counts indexed `[true][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn new(truth: &[usize], predicted: &[usize]) -> Self {
        let k = truth.iter().chain(predicted).max().map_or(0, |m| m + 1);
        let mut counts = vec![vec![0; k]; k];
        for (&t, &p) in truth.iter().zip(predicted) {
            counts[t][p] += 1;
        }
        Self { counts }
    }

    pub fn n_classes(&self) -> usize {
        self.counts.len()
    }

    /// Mean one-vs-rest F1 over the classes that occur in either sequence.
    pub fn macro_f1(&self) -> f64 {
        let k = self.n_classes();
        let mut total = 0.0;
        let mut present = 0;
        for c in 0..k {
            let tp = self.counts[c][c];
            let row: usize = self.counts[c].iter().sum();
            let col: usize = self.counts.iter().map(|r| r[c]).sum();
            if row == 0 && col == 0 {
                continue;
            }
            present += 1;
            total += BinaryMetrics::from_counts(tp, col - tp, row - tp, 0).f1;
        }
        if present == 0 {
            0.0
        } else {
            total / present as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub binary: BinaryMetrics,
    pub macro_f1: f64,
    pub confusion: ConfusionMatrix,
}

pub fn compute_metrics(truth: &[usize], predicted: &[usize]) -> Result<Metrics> {
    if truth.len() != predicted.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            actual: predicted.len(),
        });
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (&t, &p) in truth.iter().zip(predicted) {
        match (t != 0, p != 0) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (true, false) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    let confusion = ConfusionMatrix::new(truth, predicted);
    Ok(Metrics {
        binary: BinaryMetrics::from_counts(tp, fp, fn_, tn),
        macro_f1: confusion.macro_f1(),
        confusion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn perfect_predictions() {
        let truth = [0, 0, 1, 1, 2, 0];
        let m = compute_metrics(&truth, &truth).unwrap();
        assert_eq!(m.binary.f1, 1.0);
        assert_eq!(m.macro_f1, 1.0);
    }

    #[test]
    fn all_in_control_predictions() {
        let m = compute_metrics(&[0, 1, 1, 0], &[0, 0, 0, 0]).unwrap();
        assert_eq!(m.binary.recall, 0.0);
        assert_eq!(m.binary.precision, 0.0);
        assert_eq!(m.binary.f1, 0.0);
    }

    #[test]
    fn hand_counts() {
        let m = BinaryMetrics::from_counts(8, 2, 4, 0);
        assert_abs_diff_eq!(m.precision, 0.8, epsilon = 1e-15);
        assert_abs_diff_eq!(m.recall, 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m.f1, 0.727_272_727_272_727_3, epsilon = 1e-12);
    }

    #[test]
    fn wrong_fault_class_still_counts_as_positive() {
        let m = compute_metrics(&[0, 1, 2], &[0, 2, 1]).unwrap();
        assert_eq!(m.binary.f1, 1.0);
        assert!(m.macro_f1 < 1.0);
        assert_eq!(m.confusion.counts[1][2], 1);
    }

    #[test]
    fn length_mismatch() {
        assert!(compute_metrics(&[0, 1], &[0]).is_err());
    }

    proptest! {
        #[test]
        fn scores_lie_in_unit_interval(pairs in prop::collection::vec((0usize..4, 0usize..5), 1..60)) {
            let (t, p): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
            let m = compute_metrics(&t, &p).unwrap();
            for v in [m.binary.precision, m.binary.recall, m.binary.f1, m.macro_f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            if m.binary.precision + m.binary.recall == 0.0 {
                prop_assert_eq!(m.binary.f1, 0.0);
            }
            let total: usize = m.confusion.counts.iter().flatten().sum();
            prop_assert_eq!(total, t.len());
            prop_assert_eq!(m.binary.tp + m.binary.fp + m.binary.fn_ + m.binary.tn, t.len());
        }
    }
}
