//! Confusion matrices, per-class precision / recall / F1, and the
//! side-by-side condition comparison table.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::ClassLabel;
use crate::error::{Error, Result};

/// Training-set condition under evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Condition {
    XferOnly,
    GeometricAug,
    DeganAug,
}

impl Condition {
    pub const ALL: [Condition; 3] = [Condition::XferOnly, Condition::GeometricAug, Condition::DeganAug];

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::XferOnly => "xfer-only",
            Condition::GeometricAug => "geometric-aug",
            Condition::DeganAug => "degan-aug",
        }
    }

    pub fn valid_names() -> String {
        Condition::ALL.map(|c| c.as_str()).join(", ")
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Condition::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown condition {s:?}; expected one of {}",
                    Condition::valid_names()
                ))
            })
    }
}

/// Rows are true classes, columns predicted classes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<ClassLabel>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(labels: Vec<ClassLabel>) -> Self {
        let k = labels.len();
        ConfusionMatrix {
            labels,
            counts: vec![vec![0; k]; k],
        }
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    pub fn col_sum(&self, j: usize) -> u64 {
        self.counts.iter().map(|r| r[j]).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.labels.len()).map(|i| self.counts[i][i]).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Harmonic mean, defined as 0 when both inputs are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

impl ClassMetrics {
    pub fn from_precision_recall(precision: f64, recall: f64) -> Self {
        ClassMetrics {
            precision,
            recall,
            f1: f1_score(precision, recall),
        }
    }
}

pub fn confusion(truth: &[ClassLabel], predicted: &[ClassLabel], catalog: &[ClassLabel]) -> Result<ConfusionMatrix> {
    if truth.len() != predicted.len() {
        return Err(Error::LengthMismatch(truth.len(), predicted.len()));
    }
    let position = |l: ClassLabel| {
        catalog
            .iter()
            .position(|&c| c == l)
            .ok_or_else(|| Error::UnknownLabel(l.code().to_string()))
    };
    let mut cm = ConfusionMatrix::zeros(catalog.to_vec());
    for (&t, &p) in truth.iter().zip(predicted) {
        let (i, j) = (position(t)?, position(p)?);
        cm.counts[i][j] += 1;
    }
    Ok(cm)
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class metrics and overall accuracy. Zero denominators yield 0.
pub fn metrics(cm: &ConfusionMatrix) -> Result<(BTreeMap<ClassLabel, ClassMetrics>, f64)> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::InvalidArgument("confusion matrix is empty".into()));
    }
    let per_class = cm
        .labels
        .iter()
        .enumerate()
        .map(|(c, &label)| {
            let tp = cm.counts[c][c];
            let m = ClassMetrics::from_precision_recall(ratio(tp, cm.col_sum(c)), ratio(tp, cm.row_sum(c)));
            (label, m)
        })
        .collect();
    Ok((per_class, ratio(cm.trace(), total)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub condition: Condition,
    pub matrix: ConfusionMatrix,
    pub per_class: BTreeMap<ClassLabel, ClassMetrics>,
    /// Test samples per true class.
    pub support: BTreeMap<ClassLabel, u64>,
    pub accuracy: f64,
}

impl EvaluationReport {
    pub fn from_matrix(condition: Condition, matrix: ConfusionMatrix) -> Result<Self> {
        let (per_class, accuracy) = metrics(&matrix)?;
        let support = matrix
            .labels
            .iter()
            .enumerate()
            .map(|(i, &l)| (l, matrix.row_sum(i)))
            .collect();
        Ok(EvaluationReport {
            condition,
            matrix,
            per_class,
            support,
            accuracy,
        })
    }

    pub fn from_predictions(
        condition: Condition,
        truth: &[ClassLabel],
        predicted: &[ClassLabel],
        catalog: &[ClassLabel],
    ) -> Result<Self> {
        Self::from_matrix(condition, confusion(truth, predicted, catalog)?)
    }

    pub fn scores(&self) -> ConditionScores {
        ConditionScores {
            condition: self.condition,
            per_class: self.per_class.clone(),
        }
    }
}

/// One column of a comparison table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionScores {
    pub condition: Condition,
    pub per_class: BTreeMap<ClassLabel, ClassMetrics>,
}

/// Per-class scores for several conditions, with F1 changes measured against
/// the first column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub labels: Vec<ClassLabel>,
    pub columns: Vec<ConditionScores>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub class: ClassLabel,
    pub condition: Condition,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub f1_delta: f64,
}

fn display_value(v: f64) -> String {
    format!("{v:.2}")
}

/// Signed two-decimal delta; never prints `-0.00`.
pub fn display_delta(d: f64) -> String {
    let rounded = (d * 100.0).round() / 100.0;
    let rounded = if rounded == 0.0 { 0.0 } else { rounded };
    format!("{rounded:+.2}")
}

impl ComparisonTable {
    pub fn from_scores(columns: Vec<ConditionScores>) -> Result<Self> {
        if columns.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "a comparison needs at least two conditions, got {}",
                columns.len()
            )));
        }
        let labels: Vec<ClassLabel> = columns[0].per_class.keys().copied().collect();
        for col in &columns[1..] {
            let other: Vec<ClassLabel> = col.per_class.keys().copied().collect();
            if other != labels {
                return Err(Error::InvalidArgument(format!(
                    "catalog mismatch: {} has classes {:?}, {} has {:?}",
                    columns[0].condition, labels, col.condition, other
                )));
            }
        }
        Ok(ComparisonTable { labels, columns })
    }

    /// F1 of `column` minus F1 of the first column, in absolute points.
    pub fn f1_delta(&self, label: ClassLabel, column: usize) -> f64 {
        self.columns[column].per_class[&label].f1 - self.columns[0].per_class[&label].f1
    }

    pub fn rows(&self) -> Vec<ComparisonRow> {
        let mut rows = Vec::new();
        for &class in &self.labels {
            for (j, col) in self.columns.iter().enumerate() {
                let m = col.per_class[&class];
                rows.push(ComparisonRow {
                    class,
                    condition: col.condition,
                    precision: m.precision,
                    recall: m.recall,
                    f1: m.f1,
                    f1_delta: self.f1_delta(class, j),
                });
            }
        }
        rows
    }

    pub fn to_json_lines(&self) -> Result<String> {
        let mut out = String::new();
        for row in self.rows() {
            out.push_str(&serde_json::to_string(&row)?);
            out.push('\n');
        }
        Ok(out)
    }

    /// Class blocks of Precision / Recall / F1 rows with one column per
    /// condition, followed by the F1 deltas against the baseline column.
    pub fn render_text(&self) -> String {
        let header: Vec<String> = self.columns.iter().map(|c| c.condition.to_string()).collect();
        let width = header.iter().map(String::len).max().unwrap_or(0).max(6);
        let mut out = String::new();
        let _ = write!(out, "{:<7}{:<11}", "Class", "Score");
        for h in &header {
            let _ = write!(out, "{h:>width$}  ");
        }
        out.push('\n');
        for &class in &self.labels {
            for (name, pick) in [
                ("Precision", (|m: &ClassMetrics| m.precision) as fn(&ClassMetrics) -> f64),
                ("Recall", |m| m.recall),
                ("F1", |m| m.f1),
            ] {
                let lead = if name == "Precision" { class.code() } else { "" };
                let _ = write!(out, "{lead:<7}{name:<11}");
                for col in &self.columns {
                    let _ = write!(out, "{:>width$}  ", display_value(pick(&col.per_class[&class])));
                }
                out.push('\n');
            }
        }
        out.push('\n');
        let _ = writeln!(out, "F1 delta vs {}", self.columns[0].condition);
        let _ = write!(out, "{:<18}", "Class");
        for h in &header[1..] {
            let _ = write!(out, "{h:>width$}  ");
        }
        out.push('\n');
        for &class in &self.labels {
            let _ = write!(out, "{:<18}", class.code());
            for j in 1..self.columns.len() {
                let _ = write!(out, "{:>width$}  ", display_delta(self.f1_delta(class, j)));
            }
            out.push('\n');
        }
        out
    }
}

pub fn compare(reports: &[EvaluationReport]) -> Result<ComparisonTable> {
    ComparisonTable::from_scores(reports.iter().map(EvaluationReport::scores).collect())
}
