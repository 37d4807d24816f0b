//! Confusion matrices, one-vs-rest metrics and report rendering.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    /// `counts[true][predicted]`.
    pub counts: Vec<Vec<u64>>,
    pub class_names: Vec<String>,
}

impl ConfusionMatrix {
    pub fn n_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n_classes()).map(|i| self.counts[i][i]).sum()
    }

    /// `(tp, fp, fn, tn)` for class `c` against all others.
    pub fn one_vs_rest(&self, c: usize) -> (u64, u64, u64, u64) {
        let tp = self.counts[c][c];
        let col: u64 = self.counts.iter().map(|r| r[c]).sum();
        let row: u64 = self.counts[c].iter().sum();
        let (fp, fn_) = (col - tp, row - tp);
        (tp, fp, fn_, self.total() - tp - fp - fn_)
    }

    pub fn micro_accuracy(&self) -> Option<f64> {
        let t = self.total();
        (t > 0).then(|| self.trace() as f64 / t as f64)
    }
}

/// Builds the matrix with generic class names `class0..`; see [`confusion_named`].
pub fn confusion(y_true: &[usize], y_pred: &[usize], n_classes: usize) -> Result<ConfusionMatrix> {
    let names = (0..n_classes).map(|i| format!("class{i}")).collect();
    confusion_named(y_true, y_pred, names)
}

pub fn confusion_named(y_true: &[usize], y_pred: &[usize], class_names: Vec<String>) -> Result<ConfusionMatrix> {
    if y_true.len() != y_pred.len() {
        return Err(Error::shape(format!(
            "{} true labels but {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    let n = class_names.len();
    let mut counts = vec![vec![0u64; n]; n];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        for l in [t, p] {
            if l >= n {
                return Err(Error::LabelOutOfRange { label: l, n_classes: n });
            }
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix { counts, class_names })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub class: String,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Set when a zero denominator forced precision, recall or F1 to 0.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub zero_division: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroScores {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub per_class: Vec<ClassScores>,
    #[serde(rename = "macro")]
    pub macro_avg: MacroScores,
    /// Fraction of rows on the diagonal.
    pub overall_accuracy: f64,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

pub fn metrics(cm: &ConfusionMatrix) -> Result<ClassMetrics> {
    let total = cm.total();
    if total == 0 || cm.n_classes() == 0 {
        return Err(Error::invalid("cannot compute metrics on an empty confusion matrix"));
    }
    let per_class: Vec<ClassScores> = (0..cm.n_classes())
        .map(|c| {
            let (tp, fp, fn_, tn) = cm.one_vs_rest(c);
            let (precision, zp) = ratio(tp, tp + fp);
            let (recall, zr) = ratio(tp, tp + fn_);
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassScores {
                class: cm.class_names[c].clone(),
                accuracy: (tp + tn) as f64 / total as f64,
                precision,
                recall,
                f1,
                zero_division: zp || zr || precision + recall == 0.0,
            }
        })
        .collect();
    let n = per_class.len() as f64;
    let mean = |f: fn(&ClassScores) -> f64| per_class.iter().map(f).sum::<f64>() / n;
    let macro_avg = MacroScores {
        accuracy: mean(|s| s.accuracy),
        precision: mean(|s| s.precision),
        recall: mean(|s| s.recall),
        f1: mean(|s| s.f1),
    };
    Ok(ClassMetrics {
        per_class,
        macro_avg,
        overall_accuracy: cm.trace() as f64 / total as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelResult {
    pub name: String,
    pub metrics: ClassMetrics,
    pub train_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub train_seconds: f64,
    pub accuracy: f64,
    pub f1: f64,
}

/// Same classifier trained with default and with tuned hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub classifier: String,
    pub without_hpo: ComparisonRow,
    pub with_hpo: ComparisonRow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportModel {
    pub name: String,
    pub per_class: Vec<ClassScores>,
    #[serde(rename = "macro")]
    pub macro_avg: MacroScores,
    pub overall_accuracy: f64,
    pub train_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub models: Vec<ReportModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comparison: Option<Comparison>,
}

impl Report {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut footnote = false;
        for m in &self.models {
            let width = m
                .per_class
                .iter()
                .map(|c| c.class.len())
                .chain(["Average".len(), "Class".len()])
                .max()
                .unwrap_or(7);
            let _ = writeln!(out, "{} (train {:.3}s)", m.name, m.train_seconds);
            let _ = writeln!(
                out,
                "{:<width$}  {:>9}  {:>9}  {:>9}  {:>9}",
                "Class", "Accuracy", "Precision", "Recall", "F1"
            );
            for c in &m.per_class {
                footnote |= c.zero_division;
                let mark = if c.zero_division { "*" } else { "" };
                let _ = writeln!(
                    out,
                    "{:<width$}  {:>9.4}  {:>9.4}  {:>9.4}  {:>9.4}{mark}",
                    c.class, c.accuracy, c.precision, c.recall, c.f1
                );
            }
            let a = &m.macro_avg;
            let _ = writeln!(
                out,
                "{:<width$}  {:>9.4}  {:>9.4}  {:>9.4}  {:>9.4}\n",
                "Average", a.accuracy, a.precision, a.recall, a.f1
            );
        }
        if footnote {
            out.push_str("* zero denominator; value reported as 0\n\n");
        }
        if let Some(c) = &self.comparison {
            let _ = writeln!(out, "Classifier performance with and without HPO: {}", c.classifier);
            let _ = writeln!(out, "{:<7}  {:>12}  {:>9}  {:>9}", "", "Train time", "Accuracy", "F1");
            for (label, r) in [("W/oHOP", &c.without_hpo), ("W/HOP", &c.with_hpo)] {
                let _ = writeln!(
                    out,
                    "{label:<7}  {:>11.3}s  {:>8.2}%  {:>8.2}%",
                    r.train_seconds,
                    r.accuracy * 100.0,
                    r.f1 * 100.0
                );
            }
        }
        out
    }
}

pub fn render_report(results: &[ModelResult], comparison: Option<Comparison>) -> Result<Report> {
    if results.is_empty() {
        return Err(Error::invalid("report needs at least one model result"));
    }
    Ok(Report {
        models: results
            .iter()
            .map(|r| ReportModel {
                name: r.name.clone(),
                per_class: r.metrics.per_class.clone(),
                macro_avg: r.metrics.macro_avg.clone(),
                overall_accuracy: r.metrics.overall_accuracy,
                train_seconds: r.train_seconds,
            })
            .collect(),
        comparison,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cm(counts: Vec<Vec<u64>>) -> ConfusionMatrix {
        let n = counts.len();
        ConfusionMatrix {
            counts,
            class_names: (0..n).map(|i| format!("c{i}")).collect(),
        }
    }

    #[test]
    fn confusion_examples() {
        assert_eq!(confusion(&[0, 1], &[0, 1], 2).unwrap().counts, vec![vec![1, 0], vec![0, 1]]);
        assert_eq!(confusion(&[0, 0], &[1, 1], 2).unwrap().counts, vec![vec![0, 2], vec![0, 0]]);
        let empty = confusion(&[], &[], 3).unwrap();
        assert_eq!(empty.total(), 0);
        assert!(metrics(&empty).is_err());
        assert!(confusion(&[0], &[0, 1], 2).is_err());
        assert!(confusion(&[0], &[2], 2).is_err());
    }

    #[test]
    fn perfect_predictions() {
        let m = metrics(&confusion(&[0, 1, 2, 2], &[0, 1, 2, 2], 3).unwrap()).unwrap();
        for c in &m.per_class {
            assert_eq!((c.accuracy, c.precision, c.recall, c.f1), (1.0, 1.0, 1.0, 1.0));
        }
    }

    #[test]
    fn zero_denominators_are_flagged() {
        // class 1 never appears and is never predicted
        let m = metrics(&cm(vec![vec![3, 0], vec![0, 0]])).unwrap();
        assert_eq!(m.per_class[1].f1, 0.0);
        assert!(m.per_class[1].zero_division);
        assert!(!m.per_class[0].zero_division);
    }

    #[test]
    fn text_report_structure() {
        let m = metrics(&cm(vec![vec![3, 1], vec![0, 2]])).unwrap();
        let r = render_report(
            &[ModelResult {
                name: "rf".into(),
                metrics: m,
                train_seconds: 0.5,
            }],
            Some(Comparison {
                classifier: "rf".into(),
                without_hpo: ComparisonRow { train_seconds: 0.1, accuracy: 0.8, f1: 0.7 },
                with_hpo: ComparisonRow { train_seconds: 0.2, accuracy: 0.9, f1: 0.85 },
            }),
        )
        .unwrap();
        let text = r.to_text();
        assert!(text.lines().any(|l| l.starts_with("Average")));
        assert!(text.lines().any(|l| l.starts_with("W/oHOP")));
        assert!(text.lines().any(|l| l.starts_with("W/HOP")));
        let json: serde_json::Value = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(json["models"][0]["per_class"].as_array().unwrap().len(), 2);
        assert!(json["models"][0]["macro"]["f1"].is_number());
        assert!(render_report(&[], None).is_err());
    }

    fn matrix_strategy() -> impl Strategy<Value = ConfusionMatrix> {
        (2usize..6)
            .prop_flat_map(|n| proptest::collection::vec(proptest::collection::vec(0u64..20, n), n))
            .prop_filter("non-empty", |c| c.iter().flatten().sum::<u64>() > 0)
            .prop_map(cm)
    }

    proptest! {
        #[test]
        fn outcomes_partition_total(m in matrix_strategy()) {
            for c in 0..m.n_classes() {
                let (tp, fp, fn_, tn) = m.one_vs_rest(c);
                prop_assert_eq!(tp + fp + fn_ + tn, m.total());
            }
        }

        #[test]
        fn values_in_unit_interval_and_f1_between(m in matrix_strategy()) {
            let r = metrics(&m).unwrap();
            for c in &r.per_class {
                for v in [c.accuracy, c.precision, c.recall, c.f1] {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
                if c.precision > 0.0 && c.recall > 0.0 {
                    prop_assert!(c.f1 <= c.precision.max(c.recall) + 1e-12);
                    prop_assert!(c.f1 >= c.precision.min(c.recall) - 1e-12);
                }
            }
        }

        #[test]
        fn permutation_invariance(m in matrix_strategy(), rot in 0usize..5) {
            let n = m.n_classes();
            let perm: Vec<usize> = (0..n).map(|i| (i + rot) % n).collect();
            let mut counts = vec![vec![0; n]; n];
            for i in 0..n {
                for j in 0..n {
                    counts[perm[i]][perm[j]] = m.counts[i][j];
                }
            }
            let a = metrics(&m).unwrap();
            let b = metrics(&cm(counts)).unwrap();
            for i in 0..n {
                prop_assert_eq!(a.per_class[i].f1, b.per_class[perm[i]].f1);
                prop_assert_eq!(a.per_class[i].accuracy, b.per_class[perm[i]].accuracy);
            }
            prop_assert!((a.macro_avg.f1 - b.macro_avg.f1).abs() < 1e-12);
        }

        #[test]
        fn binary_micro_accuracy_matches_one_vs_rest(tp in 0u64..50, fp in 0u64..50, fn_ in 0u64..50, tn in 1u64..50) {
            let m = cm(vec![vec![tn, fp], vec![fn_, tp]]);
            let r = metrics(&m).unwrap();
            prop_assert!((m.micro_accuracy().unwrap() - r.per_class[1].accuracy).abs() < 1e-15);
        }
    }
}
