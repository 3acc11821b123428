//! Classification metrics.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_mismatch, Error, Result};

/// `counts[t * classes + p]` is the number of samples of class `t`
/// predicted as `p`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub classes: usize,
    pub counts: Vec<u64>,
}

/// Accuracy and macro-averaged precision, recall and F1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scores {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self { classes, counts: vec![0; classes * classes] }
    }

    pub fn from_predictions(truth: &[usize], predicted: &[usize], classes: usize) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(shape_mismatch(format!("{} labels, {} predictions", truth.len(), predicted.len())));
        }
        let mut m = Self::new(classes);
        for (&t, &p) in truth.iter().zip(predicted) {
            if let Some(&label) = [t, p].iter().find(|&&l| l >= classes) {
                return Err(Error::BadLabel { label, classes });
            }
            m.counts[t * classes + p] += 1;
        }
        Ok(m)
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.classes + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let correct: u64 = (0..self.classes).map(|c| self.get(c, c)).sum();
        ratio(correct, self.total())
    }

    /// Zero when nothing was predicted as `class`.
    pub fn precision(&self, class: usize) -> f64 {
        let predicted: u64 = (0..self.classes).map(|t| self.get(t, class)).sum();
        ratio(self.get(class, class), predicted)
    }

    /// Zero when `class` never occurs.
    pub fn recall(&self, class: usize) -> f64 {
        let actual: u64 = (0..self.classes).map(|p| self.get(class, p)).sum();
        ratio(self.get(class, class), actual)
    }

    pub fn f1(&self, class: usize) -> f64 {
        let (p, r) = (self.precision(class), self.recall(class));
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    /// Macro averages weight every class equally; F1 is the mean of the
    /// per-class F1 scores.
    pub fn scores(&self) -> Scores {
        let mean = |f: &dyn Fn(usize) -> f64| (0..self.classes).map(f).sum::<f64>() / self.classes as f64;
        Scores {
            accuracy: self.accuracy(),
            precision: mean(&|c| self.precision(c)),
            recall: mean(&|c| self.recall(c)),
            f1: mean(&|c| self.f1(c)),
        }
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn accuracy(truth: &[usize], predicted: &[usize]) -> f64 {
    let correct = truth.iter().zip(predicted).filter(|(t, p)| t == p).count();
    if truth.is_empty() {
        0.0
    } else {
        correct as f64 / truth.len() as f64
    }
}

/// Mean and sample standard deviation (`n - 1`); the deviation of a single
/// value is zero.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, libm::sqrt(ss / (n - 1.0)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_computed_three_class_matrix() {
        // truth \ predicted
        //   0: [5, 1, 0]
        //   1: [2, 3, 1]
        //   2: [0, 0, 4]
        let mut truth = Vec::new();
        let mut pred = Vec::new();
        for (t, row) in [[5, 1, 0], [2, 3, 1], [0, 0, 4]].iter().enumerate() {
            for (p, &count) in row.iter().enumerate() {
                for _ in 0..count {
                    truth.push(t);
                    pred.push(p);
                }
            }
        }
        let m = ConfusionMatrix::from_predictions(&truth, &pred, 3).unwrap();
        let s = m.scores();
        assert!((s.accuracy - 12.0 / 16.0).abs() < 1e-15);
        let precision = (5.0 / 7.0 + 3.0 / 4.0 + 4.0 / 5.0) / 3.0;
        let recall = (5.0 / 6.0 + 3.0 / 6.0 + 1.0) / 3.0;
        let f1 = |p: f64, r: f64| 2.0 * p * r / (p + r);
        let f1_macro = (f1(5.0 / 7.0, 5.0 / 6.0) + f1(0.75, 0.5) + f1(0.8, 1.0)) / 3.0;
        assert!((s.precision - precision).abs() < 1e-15);
        assert!((s.recall - recall).abs() < 1e-15);
        assert!((s.f1 - f1_macro).abs() < 1e-15);
    }

    #[test]
    fn missing_classes_score_zero() {
        let m = ConfusionMatrix::from_predictions(&[0, 0, 1], &[0, 0, 0], 3).unwrap();
        assert_eq!(m.precision(1), 0.0);
        assert_eq!(m.recall(2), 0.0);
        assert_eq!(m.f1(2), 0.0);
        assert_eq!(ConfusionMatrix::from_predictions(&[0], &[3], 3).unwrap_err().code(), "bad-label");
    }

    #[test]
    fn mean_and_spread() {
        assert_eq!(mean_std(&[0.7]), (0.7, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert!((m - 2.5).abs() < 1e-15 && (s - libm::sqrt(5.0 / 3.0)).abs() < 1e-15);
        assert_eq!(accuracy(&[1, 2, 3, 4], &[1, 0, 3, 0]), 0.5);
    }
}
