//! Confusion matrices, classification reports and training curves.

mod curves;

pub use curves::{export_curves, read_curves_csv, CurveFiles};

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::manifest::write_atomic;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("no samples")]
    NoSamples,
    #[error("length mismatch: {truths} true labels vs {predictions} predictions")]
    LengthMismatch { truths: usize, predictions: usize },
    #[error("label index {index} outside {classes} classes")]
    UnknownLabel { index: usize, classes: usize },
    #[error("matrix must be square with one row per class name")]
    BadMatrix,
    #[error("sample {0} predicted more than once")]
    DuplicateSample(String),
    #[error("empty history")]
    EmptyHistory,
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

pub(crate) fn io_err(path: &Path, e: impl std::fmt::Display) -> MetricsError {
    MetricsError::Io { path: path.display().to_string(), message: e.to_string() }
}

/// `counts[i][j]` = samples of true class `i` predicted as class `j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub class_names: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn from_counts(counts: Vec<Vec<u64>>, class_names: &[&str]) -> Result<Self, MetricsError> {
        let k = class_names.len();
        if counts.len() != k || counts.iter().any(|row| row.len() != k) {
            return Err(MetricsError::BadMatrix);
        }
        Ok(ConfusionMatrix { class_names: class_names.iter().map(|s| s.to_string()).collect(), counts })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.counts.len()).map(|i| self.counts[i][i]).sum()
    }

    fn row_sum(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    fn col_sum(&self, j: usize) -> u64 {
        self.counts.iter().map(|row| row[j]).sum()
    }

    /// CSV laid out with true classes as rows and predictions as columns.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("true\\predicted");
        for name in &self.class_names {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for (name, row) in self.class_names.iter().zip(&self.counts) {
            out.push_str(name);
            for c in row {
                let _ = write!(out, ",{c}");
            }
            out.push('\n');
        }
        out
    }

    pub fn add(&mut self, other: &ConfusionMatrix) -> Result<(), MetricsError> {
        if other.class_names != self.class_names {
            return Err(MetricsError::BadMatrix);
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        Ok(())
    }
}

pub fn confusion(truths: &[usize], predictions: &[usize], class_names: &[&str]) -> Result<ConfusionMatrix, MetricsError> {
    if truths.len() != predictions.len() {
        return Err(MetricsError::LengthMismatch { truths: truths.len(), predictions: predictions.len() });
    }
    if truths.is_empty() {
        return Err(MetricsError::NoSamples);
    }
    let k = class_names.len();
    let mut counts = vec![vec![0u64; k]; k];
    for (&t, &p) in truths.iter().zip(predictions) {
        for index in [t, p] {
            if index >= k {
                return Err(MetricsError::UnknownLabel { index, classes: k });
            }
        }
        counts[t][p] += 1;
    }
    ConfusionMatrix::from_counts(counts, class_names)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub name: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    /// Metrics that were 0/0 and reported as 0.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub undefined: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub classes: Vec<ClassMetrics>,
    pub macro_avg: Averages,
    pub weighted_avg: Averages,
    pub accuracy: f64,
    pub total_support: u64,
    pub confusion: ConfusionMatrix,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

pub fn classification_report(matrix: &ConfusionMatrix) -> Result<EvalReport, MetricsError> {
    let total = matrix.total();
    if total == 0 {
        return Err(MetricsError::NoSamples);
    }
    let k = matrix.counts.len();
    let mut classes = Vec::with_capacity(k);
    for c in 0..k {
        let tp = matrix.counts[c][c];
        let support = matrix.row_sum(c);
        let (precision, p_undef) = ratio(tp, matrix.col_sum(c));
        let (recall, r_undef) = ratio(tp, support);
        let (f1, f_undef) = if precision + recall == 0.0 {
            (0.0, true)
        } else {
            (2.0 * precision * recall / (precision + recall), false)
        };
        let undefined = [("precision", p_undef), ("recall", r_undef), ("f1", f_undef)]
            .into_iter()
            .filter(|(_, flag)| *flag)
            .map(|(name, _)| name.to_string())
            .collect();
        classes.push(ClassMetrics { name: matrix.class_names[c].clone(), precision, recall, f1, support, undefined });
    }
    let mean = |f: fn(&ClassMetrics) -> f64| classes.iter().map(f).sum::<f64>() / k as f64;
    let weighted = |f: fn(&ClassMetrics) -> f64| {
        classes.iter().map(|m| m.support as f64 * f(m)).sum::<f64>() / total as f64
    };
    let accuracy = matrix.trace() as f64 / total as f64;
    let macro_avg = Averages { precision: mean(|m| m.precision), recall: mean(|m| m.recall), f1: mean(|m| m.f1) };
    // Σ support_c · tp_c / support_c collapses to trace / total.
    let weighted_avg = Averages { precision: weighted(|m| m.precision), recall: accuracy, f1: weighted(|m| m.f1) };
    Ok(EvalReport { classes, macro_avg, weighted_avg, accuracy, total_support: total, confusion: matrix.clone() })
}

/// One (true, predicted) pair from a cross-validation fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePrediction {
    pub sample_id: String,
    pub truth: usize,
    pub predicted: usize,
    #[serde(default)]
    pub probabilities: Vec<f64>,
}

/// Pools every fold's predictions into a single report.
pub fn aggregate_fold_reports(folds: &[Vec<SamplePrediction>], class_names: &[&str]) -> Result<EvalReport, MetricsError> {
    let mut seen = HashSet::new();
    let mut truths = Vec::new();
    let mut predictions = Vec::new();
    for fold in folds {
        for p in fold {
            if !seen.insert(p.sample_id.as_str()) {
                return Err(MetricsError::DuplicateSample(p.sample_id.clone()));
            }
            truths.push(p.truth);
            predictions.push(p.predicted);
        }
    }
    classification_report(&confusion(&truths, &predictions, class_names)?)
}

fn display_name(name: &str) -> String {
    match name {
        "cyberbullying" => "Cyberbullying".into(),
        "non_cyberbullying" => "Non-cyberbullying".into(),
        other => other.to_string(),
    }
}

impl EvalReport {
    /// Aligned table, four decimals: accuracy row, one row per class, then
    /// macro and weighted averages.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<20}{:>10}{:>10}{:>10}{:>10}", "Accuracy", "", format!("{:.4}", self.accuracy), "", "");
        let _ = writeln!(out, "{:<20}{:>10}{:>10}{:>10}{:>10}", "Class", "Precision", "Recall", "F1-score", "Support");
        for c in &self.classes {
            let _ = writeln!(
                out,
                "{:<20}{:>10.4}{:>10.4}{:>10.4}{:>10}",
                display_name(&c.name),
                c.precision,
                c.recall,
                c.f1,
                c.support
            );
        }
        for (name, avg) in [("Macro Avg", &self.macro_avg), ("Weighted Avg", &self.weighted_avg)] {
            let _ = writeln!(
                out,
                "{name:<20}{:>10.4}{:>10.4}{:>10.4}{:>10}",
                avg.precision, avg.recall, avg.f1, self.total_support
            );
        }
        out
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Writes `report.json`, `report.txt` and `confusion.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), MetricsError> {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        for (file, body) in [
            ("report.json", self.to_json()),
            ("report.txt", self.to_text()),
            ("confusion.csv", self.confusion.to_csv()),
        ] {
            let path = dir.join(file);
            write_atomic(&path, body.as_bytes()).map_err(|e| io_err(&path, e))?;
        }
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self, MetricsError> {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        serde_json::from_str(&text).map_err(|e| io_err(path, e))
    }
}
