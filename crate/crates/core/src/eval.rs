//! Classification metrics, bootstrap standard errors and report rendering.

use std::collections::BTreeMap;
use std::fmt::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Class;
use crate::error::{Error, Result};
use crate::rng::{self, derive_seed, streams};

/// Counts with rows indexed by the true class and columns by the prediction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 3]; 3],
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn add(&mut self, truth: Class, predicted: Class) {
        self.counts[truth.index()][predicted.index()] += 1;
    }
}

pub fn confusion(y_true: &[Class], y_pred: &[Class]) -> Result<ConfusionMatrix> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Dimension(format!(
            "{} true labels for {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    if y_true.is_empty() {
        return Err(Error::Validation("no predictions to evaluate".into()));
    }
    let mut cm = ConfusionMatrix::default();
    for (t, p) in y_true.iter().zip(y_pred) {
        cm.add(*t, *p);
    }
    Ok(cm)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Number of test items whose true class is this one.
    pub support: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub per_class: [ClassMetrics; 3],
    pub macro_avg: Averages,
    pub weighted_avg: Averages,
    /// Metrics whose denominator was zero and were reported as 0, e.g.
    /// `precision_3`.
    pub undefined: Vec<String>,
}

fn ratio(num: u64, den: u64, name: String, undefined: &mut Vec<String>) -> f64 {
    if den == 0 {
        undefined.push(name);
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Accuracy, per-class precision/recall/F1 and their macro and
/// support-weighted averages. Zero denominators give 0 and are flagged.
pub fn metrics(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let n = cm.total();
    if n == 0 {
        return Err(Error::Validation("confusion matrix is empty".into()));
    }
    let c = &cm.counts;
    let mut undefined = Vec::new();
    let per_class: [ClassMetrics; 3] = std::array::from_fn(|j| {
        let label = Class::from_index(j).label();
        let tp = c[j][j];
        let predicted: u64 = (0..3).map(|i| c[i][j]).sum();
        let support: u64 = c[j].iter().sum();
        let precision = ratio(tp, predicted, format!("precision_{label}"), &mut undefined);
        let recall = ratio(tp, support, format!("recall_{label}"), &mut undefined);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            undefined.push(format!("f1_{label}"));
            0.0
        };
        ClassMetrics {
            precision,
            recall,
            f1,
            support,
        }
    });
    let tp: u64 = (0..3).map(|j| c[j][j]).sum();
    let accuracy = tp as f64 / n as f64;
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / 3.0;
    let weighted =
        |f: fn(&ClassMetrics) -> f64| per_class.iter().map(|m| m.support as f64 * f(m)).sum::<f64>() / n as f64;
    Ok(MetricsReport {
        accuracy,
        per_class,
        macro_avg: Averages {
            precision: mean(|m| m.precision),
            recall: mean(|m| m.recall),
            f1: mean(|m| m.f1),
        },
        weighted_avg: Averages {
            precision: weighted(|m| m.precision),
            // support_j * tp_j / support_j summed over classes, cancelled
            // before dividing so that it equals the accuracy exactly.
            recall: accuracy,
            f1: weighted(|m| m.f1),
        },
        undefined,
    })
}

impl MetricsReport {
    /// Every scalar under a stable name, in a fixed order.
    pub fn named_values(&self) -> Vec<(String, f64)> {
        let mut out = vec![("accuracy".to_string(), self.accuracy)];
        for (prefix, a) in [("macro", &self.macro_avg), ("weighted", &self.weighted_avg)] {
            out.push((format!("{prefix}_f1"), a.f1));
            out.push((format!("{prefix}_precision"), a.precision));
            out.push((format!("{prefix}_recall"), a.recall));
        }
        for (j, m) in self.per_class.iter().enumerate() {
            let label = Class::from_index(j).label();
            out.push((format!("f1_{label}"), m.f1));
            out.push((format!("precision_{label}"), m.precision));
            out.push((format!("recall_{label}"), m.recall));
        }
        out
    }
}

pub const BOOTSTRAP_RESAMPLES: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    /// Sample standard deviation across resamples.
    pub std_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapReport {
    pub seed: u64,
    pub resamples: usize,
    pub metrics: BTreeMap<String, Estimate>,
}

/// Resamples the test pairs with replacement `resamples` times and reports
/// the mean and standard deviation of every metric.
pub fn bootstrap(y_true: &[Class], y_pred: &[Class], resamples: usize, seed: u64) -> Result<BootstrapReport> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Dimension(format!(
            "{} true labels for {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    if y_true.len() < 2 || resamples < 2 {
        return Err(Error::Validation(format!(
            "bootstrap needs at least 2 samples and 2 resamples, got {} and {resamples}",
            y_true.len()
        )));
    }
    let m = y_true.len();
    let base = derive_seed(seed, streams::BOOTSTRAP);
    let replicates: Vec<Vec<(String, f64)>> = (0..resamples)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng::stream(base, r as u64);
            let mut cm = ConfusionMatrix::default();
            for _ in 0..m {
                let i = rng.random_range(0..m);
                cm.add(y_true[i], y_pred[i]);
            }
            metrics(&cm).map(|rep| rep.named_values())
        })
        .collect::<Result<_>>()?;

    let mut out = BTreeMap::new();
    for (k, (name, _)) in replicates[0].iter().enumerate() {
        let values: Vec<f64> = replicates.iter().map(|r| r[k].1).collect();
        let mean = values.iter().sum::<f64>() / resamples as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (resamples - 1) as f64;
        out.insert(
            name.clone(),
            Estimate {
                mean,
                std_error: var.sqrt(),
            },
        );
    }
    Ok(BootstrapReport {
        seed,
        resamples,
        metrics: out,
    })
}

/// Always predicts the most frequent training class (lowest index on ties).
pub fn majority_class(train_labels: &[Class]) -> Class {
    let mut counts = [0usize; 3];
    for y in train_labels {
        counts[y.index()] += 1;
    }
    let mut best = 0;
    for j in 1..3 {
        if counts[j] > counts[best] {
            best = j;
        }
    }
    Class::from_index(best)
}

/// One evaluated classifier / text representation pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRow {
    pub classifier: String,
    pub features: String,
    pub confusion: ConfusionMatrix,
    pub metrics: MetricsReport,
    pub bootstrap: BootstrapReport,
}

impl EvaluationRow {
    pub fn new(
        classifier: &str,
        features: &str,
        y_true: &[Class],
        y_pred: &[Class],
        resamples: usize,
        seed: u64,
    ) -> Result<Self> {
        let confusion = confusion(y_true, y_pred)?;
        Ok(EvaluationRow {
            classifier: classifier.to_string(),
            features: features.to_string(),
            metrics: metrics(&confusion)?,
            bootstrap: bootstrap(y_true, y_pred, resamples, seed)?,
            confusion,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub test_size: usize,
    pub rows: Vec<EvaluationRow>,
}

const COLUMNS: [(&str, &str); 7] = [
    ("Accuracy", "accuracy"),
    ("Macro F1", "macro_f1"),
    ("Macro P", "macro_precision"),
    ("Macro R", "macro_recall"),
    ("Wtd F1", "weighted_f1"),
    ("Wtd P", "weighted_precision"),
    ("Wtd R", "weighted_recall"),
];

impl EvaluationReport {
    /// Aligned table: one row per classifier, each cell `score ± SE`.
    pub fn to_text(&self) -> String {
        let mut header = vec!["Classifier".to_string(), "Features".to_string()];
        header.extend(COLUMNS.iter().map(|(h, _)| h.to_string()));
        let mut rows = vec![header];
        for r in &self.rows {
            let values: BTreeMap<String, f64> = r.metrics.named_values().into_iter().collect();
            let mut row = vec![r.classifier.clone(), r.features.clone()];
            for (_, key) in COLUMNS {
                let se = r.bootstrap.metrics.get(key).map_or(0.0, |e| e.std_error);
                row.push(format!("{:.2} ± {:.2}", values[key], se));
            }
            rows.push(row);
        }
        let widths: Vec<usize> = (0..rows[0].len())
            .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (i, row) in rows.iter().enumerate() {
            let cells: Vec<String> = row
                .iter()
                .zip(&widths)
                .map(|(cell, w)| format!("{cell:<w$}", w = *w))
                .collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
            if i == 0 {
                let _ = writeln!(
                    out,
                    "{}",
                    "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1))
                );
            }
        }
        let _ = writeln!(out, "\ntest proceedings: {}", self.test_size);
        for r in &self.rows {
            if !r.metrics.undefined.is_empty() {
                let _ = writeln!(
                    out,
                    "{} / {}: undefined (reported as 0): {}",
                    r.classifier,
                    r.features,
                    r.metrics.undefined.join(", ")
                );
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn classes(v: &[usize]) -> Vec<Class> {
        v.iter().map(|&i| Class::from_index(i)).collect()
    }

    #[test]
    fn confusion_cases() {
        let y = classes(&[0, 1, 2, 1]);
        let cm = confusion(&y, &y).unwrap();
        assert_eq!(cm.counts, [[1, 0, 0], [0, 2, 0], [0, 0, 1]]);
        let cm = confusion(&classes(&[0]), &classes(&[1])).unwrap();
        assert_eq!(cm.counts, [[0, 1, 0], [0, 0, 0], [0, 0, 0]]);
        assert!(confusion(&y, &y[..2]).is_err());
    }

    #[test]
    fn perfect_classifier() {
        let y = classes(&[0, 1, 2, 0]);
        let m = metrics(&confusion(&y, &y).unwrap()).unwrap();
        for (_, v) in m.named_values() {
            assert_eq!(v, 1.0);
        }
        assert!(m.undefined.is_empty());
    }

    #[test]
    fn undefined_metrics_flagged() {
        let cm = ConfusionMatrix {
            counts: [[3, 1, 0], [0, 2, 0], [0, 0, 0]],
        };
        let m = metrics(&cm).unwrap();
        assert_eq!(m.per_class[2].precision, 0.0);
        assert_eq!(m.undefined, vec!["precision_3", "recall_3", "f1_3"]);
    }

    #[test]
    fn majority_baseline() {
        assert_eq!(majority_class(&classes(&[0, 1, 1, 2])), Class::Active);
        assert_eq!(majority_class(&classes(&[0, 1])), Class::Archived);
    }

    #[test]
    fn bootstrap_of_perfect_predictions() {
        let y = classes(&[0, 1, 2, 0, 1, 2, 0, 0]);
        let b = bootstrap(&y, &y, 100, 1).unwrap();
        assert_eq!(b.metrics["accuracy"].mean, 1.0);
        assert_eq!(b.metrics["accuracy"].std_error, 0.0);
        assert_eq!(b, bootstrap(&y, &y, 100, 1).unwrap());
        assert!(bootstrap(&y[..1], &y[..1], 100, 1).is_err());
    }

    #[test]
    fn text_table_aligns() {
        let y = classes(&[0, 1, 2, 0, 1]);
        let p = classes(&[0, 1, 1, 0, 0]);
        let report = EvaluationReport {
            test_size: 5,
            rows: vec![
                EvaluationRow::new("LSTM", "W2V (CNN)", &y, &p, 100, 3).unwrap(),
                EvaluationRow::new("Majority", "-", &y, &[Class::Archived; 5], 100, 3).unwrap(),
            ],
        };
        let text = report.to_text();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with("Classifier"));
        assert!(lines[2].starts_with("LSTM"));
        assert!(text.contains("Majority / -: undefined (reported as 0): precision_2"));
    }

    proptest! {
        #[test]
        fn report_invariants(counts in prop::array::uniform9(0u64..50)) {
            prop_assume!(counts.iter().sum::<u64>() > 0);
            let cm = ConfusionMatrix { counts: [
                [counts[0], counts[1], counts[2]],
                [counts[3], counts[4], counts[5]],
                [counts[6], counts[7], counts[8]],
            ]};
            let m = metrics(&cm).unwrap();
            prop_assert_eq!(m.weighted_avg.recall, m.accuracy);
            for (_, v) in m.named_values() {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            let f1s: Vec<f64> = m.per_class.iter().map(|c| c.f1).collect();
            let lo = f1s.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = f1s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(m.macro_avg.f1 >= lo - 1e-15 && m.macro_avg.f1 <= hi + 1e-15);
        }

        #[test]
        fn confusion_order_invariant(pairs in prop::collection::vec((0usize..3, 0usize..3), 1..60), seed in any::<u64>()) {
            let (t, p): (Vec<usize>, Vec<usize>) = pairs.iter().cloned().unzip();
            let a = confusion(&classes(&t), &classes(&p)).unwrap();
            let mut shuffled = pairs.clone();
            crate::rng::fisher_yates(&mut shuffled, seed);
            let (t2, p2): (Vec<usize>, Vec<usize>) = shuffled.into_iter().unzip();
            prop_assert_eq!(a, confusion(&classes(&t2), &classes(&p2)).unwrap());
        }
    }
}
