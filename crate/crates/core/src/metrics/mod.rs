//! Classification metrics (macro-averaged) and paired significance tests.

pub mod wilcoxon;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use wilcoxon::{format_p_value, wilcoxon_signed_rank, WilcoxonMethod, WilcoxonResult};

/// Rows are true classes, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(predictions: &[usize], labels: &[usize], class_count: usize) -> Result<Self> {
        if predictions.len() != labels.len() {
            return Err(Error::input(format!(
                "{} predictions for {} labels",
                predictions.len(),
                labels.len()
            )));
        }
        if labels.is_empty() {
            return Err(Error::input("no samples to score"));
        }
        let mut counts = vec![vec![0u64; class_count]; class_count];
        for (&p, &t) in predictions.iter().zip(labels) {
            if p >= class_count || t >= class_count {
                return Err(Error::input(format!("class index {} outside 0..{class_count}", p.max(t))));
            }
            counts[t][p] += 1;
        }
        Ok(Self { counts })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    /// No predictions of this class; precision reported as 0.
    pub precision_undefined: bool,
    /// No samples of this class; recall reported as 0.
    pub recall_undefined: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    pub confusion: ConfusionMatrix,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

/// Metrics over classes `0..=max(label, prediction)`.
pub fn compute_metrics(predictions: &[usize], labels: &[usize]) -> Result<MetricsReport> {
    let c = predictions.iter().chain(labels).max().map_or(0, |m| m + 1);
    compute_metrics_with_classes(predictions, labels, c)
}

pub fn compute_metrics_with_classes(predictions: &[usize], labels: &[usize], class_count: usize) -> Result<MetricsReport> {
    let cm = ConfusionMatrix::new(predictions, labels, class_count)?;
    let total = cm.total();
    let correct: u64 = (0..class_count).map(|i| cm.counts[i][i]).sum();
    let per_class: Vec<ClassMetrics> = (0..class_count)
        .map(|k| {
            let tp = cm.counts[k][k];
            let predicted: u64 = (0..class_count).map(|t| cm.counts[t][k]).sum();
            let support: u64 = cm.counts[k].iter().sum();
            let (precision, precision_undefined) = ratio(tp, predicted);
            let (recall, recall_undefined) = ratio(tp, support);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassMetrics {
                precision,
                recall,
                f1,
                support,
                precision_undefined,
                recall_undefined,
            }
        })
        .collect();
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / class_count as f64;
    Ok(MetricsReport {
        accuracy: correct as f64 / total as f64,
        macro_precision: mean(|m| m.precision),
        macro_recall: mean(|m| m.recall),
        macro_f1: mean(|m| m.f1),
        per_class,
        confusion: cm,
    })
}

impl MetricsReport {
    /// `[ACC, PR, RE, F1]` as fractions.
    pub fn headline(&self) -> [f64; 4] {
        [self.accuracy, self.macro_precision, self.macro_recall, self.macro_f1]
    }
}

/// Markdown table with one row per `(name, report)`, values in percent with
/// two decimals. PR/RE/F1 are macro averages.
pub fn render_table(rows: &[(String, MetricsReport)]) -> String {
    let header = ["Method", "ACC (%)", "PR macro (%)", "RE macro (%)", "F1 macro (%)"];
    let body: Vec<[String; 5]> = rows
        .iter()
        .map(|(name, r)| {
            let [a, p, re, f] = r.headline().map(|v| format!("{:.2}", v * 100.0));
            [name.clone(), a, p, re, f]
        })
        .collect();
    let widths: Vec<usize> = (0..5)
        .map(|i| body.iter().map(|r| r[i].len()).chain([header[i].len()]).max().unwrap_or(0))
        .collect();
    let line = |cells: &[String]| {
        let parts: Vec<String> = cells
            .iter()
            .enumerate()
            .map(|(i, c)| if i == 0 { format!("{c:<w$}", w = widths[i]) } else { format!("{c:>w$}", w = widths[i]) })
            .collect();
        format!("| {} |\n", parts.join(" | "))
    };
    let mut out = line(&header.map(String::from));
    let rule: Vec<String> = widths
        .iter()
        .enumerate()
        .map(|(i, &w)| if i == 0 { "-".repeat(w) } else { format!("{}:", "-".repeat(w - 1)) })
        .collect();
    out.push_str(&format!("| {} |\n", rule.join(" | ")));
    for r in &body {
        out.push_str(&line(r));
    }
    out
}
