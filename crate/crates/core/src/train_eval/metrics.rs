use serde::{Deserialize, Serialize};

use crate::signal_io::ArrhythmiaClass;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    Image,
    Record,
}

/// `counts[true][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn new(n_classes: usize) -> Self {
        Self { counts: vec![vec![0; n_classes]; n_classes] }
    }

    /// Panics if a label or prediction is out of range or lengths differ.
    pub fn from_pairs(n_classes: usize, labels: &[usize], predictions: &[usize]) -> Self {
        assert_eq!(labels.len(), predictions.len(), "labels and predictions differ in length");
        let mut cm = Self::new(n_classes);
        for (&t, &p) in labels.iter().zip(predictions) {
            cm.counts[t][p] += 1;
        }
        cm
    }

    pub fn n_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n_classes()).map(|i| self.counts[i][i]).sum()
    }

    /// One-vs-rest counts for `class`.
    pub fn class_counts(&self, class: usize) -> ClassCounts {
        let tp = self.counts[class][class];
        let row: u64 = self.counts[class].iter().sum();
        let col: u64 = self.counts.iter().map(|r| r[class]).sum();
        ClassCounts {
            tp,
            fp: col - tp,
            fn_: row - tp,
            tn: self.total() + tp - row - col,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub support: u64,
    pub precision: f64,
    pub recall: f64,
    pub specificity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub granularity: Granularity,
    pub n_items: u64,
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_specificity: f64,
    pub per_class: Vec<ClassMetrics>,
    pub confusion: ConfusionMatrix,
}

/// `num / den`, with an undefined `0 / 0` scored 1 when the class has no
/// errors at all and 0 otherwise.
fn ratio(num: u64, den: u64, c: ClassCounts) -> f64 {
    if den > 0 {
        num as f64 / den as f64
    } else if c.fp == 0 && c.fn_ == 0 {
        1.0
    } else {
        0.0
    }
}

fn class_name(i: usize, n: usize) -> String {
    match ArrhythmiaClass::from_index(i) {
        Some(c) if n == ArrhythmiaClass::COUNT => c.to_string(),
        _ => i.to_string(),
    }
}

impl MetricsReport {
    pub fn from_confusion(confusion: ConfusionMatrix, granularity: Granularity) -> Self {
        let n = confusion.n_classes();
        let per_class: Vec<ClassMetrics> = (0..n)
            .map(|i| {
                let c = confusion.class_counts(i);
                ClassMetrics {
                    class: class_name(i, n),
                    support: c.tp + c.fn_,
                    precision: ratio(c.tp, c.tp + c.fp, c),
                    recall: ratio(c.tp, c.tp + c.fn_, c),
                    specificity: ratio(c.tn, c.tn + c.fp, c),
                }
            })
            .collect();
        let mean = |f: fn(&ClassMetrics) -> f64| {
            if n == 0 {
                0.0
            } else {
                per_class.iter().map(f).sum::<f64>() / n as f64
            }
        };
        let total = confusion.total();
        Self {
            granularity,
            n_items: total,
            accuracy: if total == 0 { 0.0 } else { confusion.trace() as f64 / total as f64 },
            macro_precision: mean(|m| m.precision),
            macro_recall: mean(|m| m.recall),
            macro_specificity: mean(|m| m.specificity),
            per_class,
            confusion,
        }
    }

    pub fn from_pairs(n_classes: usize, labels: &[usize], predictions: &[usize], granularity: Granularity) -> Self {
        Self::from_confusion(ConfusionMatrix::from_pairs(n_classes, labels, predictions), granularity)
    }
}
