use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::LabelVocab;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Gold instances of this class.
    pub support: usize,
}

/// Micro accuracy plus macro precision, recall and F1 over every class of
/// the label vocabulary. A ratio with a zero denominator is 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    pub total: usize,
}

/// Rows are gold labels, columns predictions, both in vocabulary order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    /// Tab-separated table with a header row of predicted labels.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("gold\\pred");
        for l in &self.labels {
            out.push('\t');
            out.push_str(l);
        }
        out.push('\n');
        for (l, row) in self.labels.iter().zip(&self.counts) {
            out.push_str(l);
            for c in row {
                out.push('\t');
                out.push_str(&c.to_string());
            }
            out.push('\n');
        }
        out
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn compute_metrics(gold: &[usize], pred: &[usize], labels: &LabelVocab) -> Result<(MetricsReport, ConfusionMatrix)> {
    if gold.is_empty() {
        return Err(Error::EmptyDataset("evaluation"));
    }
    if gold.len() != pred.len() {
        return Err(Error::Input {
            field: "predictions",
            reason: format!("{} predictions for {} gold labels", pred.len(), gold.len()),
        });
    }
    let k = labels.len();
    if let Some(&bad) = gold.iter().chain(pred).find(|&&l| l >= k) {
        return Err(Error::LabelSpace(format!("label id {bad} outside {k} labels")));
    }
    let mut counts = vec![vec![0usize; k]; k];
    for (&g, &p) in gold.iter().zip(pred) {
        counts[g][p] += 1;
    }
    let correct: usize = (0..k).map(|c| counts[c][c]).sum();
    let per_class: Vec<ClassMetrics> = (0..k)
        .map(|c| {
            let tp = counts[c][c];
            let support: usize = counts[c].iter().sum();
            let predicted: usize = counts.iter().map(|row| row[c]).sum();
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassMetrics {
                label: labels.names()[c].clone(),
                precision,
                recall,
                f1,
                support,
            }
        })
        .collect();
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / k as f64;
    let report = MetricsReport {
        accuracy: ratio(correct, gold.len()),
        macro_precision: mean(|c| c.precision),
        macro_recall: mean(|c| c.recall),
        macro_f1: mean(|c| c.f1),
        per_class,
        total: gold.len(),
    };
    Ok((
        report,
        ConfusionMatrix {
            labels: labels.names().to_vec(),
            counts,
        },
    ))
}
