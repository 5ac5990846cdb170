//! Classification metrics, bootstrap intervals, paired t-tests, dataset
//! manifests, label remapping and seeded splits.

mod dataset;
mod metrics;
mod stats;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::Label;

pub use dataset::{
    join_predictions, load_predictions, load_rules, read_predictions, remap_labels, split,
    train_count, write_predictions, Manifest, ManifestRecord, MatchKind, RemapOutcome, RemapRule,
};
pub use metrics::{
    accuracy, balanced_accuracy, confusion_matrix, degenerate_flags, kappa, macro_f1, mcc,
    per_class_f1, weighted_f1, ConfusionMatrix, LabeledPrediction, Metric,
};
pub use stats::{
    bootstrap_ci, correctness, paired_ttest, percentile_sorted, resample_rng, TTest, MIN_RESAMPLES,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("sample {sample_id}: label {label:?} is not in the label space")]
    UnknownLabel { sample_id: String, label: Label },
    #[error("label space is empty")]
    EmptyLabelSpace,
    #[error("label {0:?} appears twice in the label space")]
    DuplicateLabel(Label),
    #[error("count matrix shape does not match the label space")]
    ShapeMismatch,
    #[error("no samples to evaluate")]
    EmptyInput,
    #[error("too few samples (n={n}, resamples={resamples})")]
    TooFewSamples { n: usize, resamples: usize },
    #[error("confidence level must lie in (0, 1), got {0}")]
    InvalidLevel(f64),
    #[error("score vectors differ in length: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("manifest is empty")]
    EmptyManifest,
    #[error("train ratio must lie in (0, 1), got {0}")]
    InvalidRatio(f64),
    #[error("no prediction for sample {0}")]
    MissingPrediction(String),
    #[error("prediction for unknown sample {0}")]
    UnknownSample(String),
    #[error("malformed input: {0}")]
    Malformed(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub name: String,
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ci_low: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ci_high: Option<f64>,
}

impl MetricValue {
    /// True when there is no interval or the point estimate lies inside it.
    pub fn ci_contains_value(&self) -> bool {
        match (self.ci_low, self.ci_high) {
            (Some(lo), Some(hi)) => lo <= self.value && self.value <= hi,
            _ => true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSpec {
    pub resamples: usize,
    pub seed: u64,
    pub level: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub n: usize,
    pub label_space_size: usize,
    pub metrics: Vec<MetricValue>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bootstrap: Option<BootstrapSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub comparison: Option<TTest>,
}

impl MetricReport {
    pub fn get(&self, name: &str) -> Option<&MetricValue> {
        self.metrics.iter().find(|m| m.name == name)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn to_table(&self) -> String {
        let with_ci = self.metrics.iter().any(|m| m.ci_low.is_some());
        let width = self.metrics.iter().map(|m| m.name.len()).max().unwrap_or(6).max(6);
        let mut out = String::new();
        let _ = writeln!(out, "n = {}, classes = {}", self.n, self.label_space_size);
        if with_ci {
            let _ = writeln!(out, "{:<width$}  {:>8}  {:>8}  {:>8}", "metric", "value", "ci_low", "ci_high");
        } else {
            let _ = writeln!(out, "{:<width$}  {:>8}", "metric", "value");
        }
        for m in &self.metrics {
            let _ = write!(out, "{:<width$}  {:>8.4}", m.name, m.value);
            if let (Some(lo), Some(hi)) = (m.ci_low, m.ci_high) {
                let _ = write!(out, "  {lo:>8.4}  {hi:>8.4}");
            }
            out.push('\n');
        }
        if let Some(t) = &self.comparison {
            let _ = writeln!(
                out,
                "paired t-test: t = {:.4}, p = {:.4}, df = {}{}",
                t.t_stat,
                t.p_value,
                t.df,
                if t.zero_variance { " (zero variance)" } else { "" }
            );
        }
        for f in &self.flags {
            let _ = writeln!(out, "note: {f}");
        }
        out
    }
}

/// Computes every metric, plus percentile intervals when `bootstrap` is set.
pub fn evaluate(
    preds: &[LabeledPrediction],
    labels: &[Label],
    bootstrap: Option<BootstrapSpec>,
) -> Result<MetricReport, EvalError> {
    let m = confusion_matrix(preds, labels)?;
    let mut flags = degenerate_flags(&m);
    let mut metrics = Vec::new();
    for metric in Metric::ALL {
        let value = metric.compute(&m)?;
        let (ci_low, ci_high) = match bootstrap {
            Some(b) => {
                let (lo, hi) = bootstrap_ci(preds, labels, metric, b.resamples, b.seed, b.level)?;
                (Some(lo), Some(hi))
            }
            None => (None, None),
        };
        let mv = MetricValue {
            name: metric.name().to_owned(),
            value,
            ci_low,
            ci_high,
        };
        if !mv.ci_contains_value() {
            flags.push(format!("{}: point estimate outside percentile interval", mv.name));
        }
        metrics.push(mv);
    }
    Ok(MetricReport {
        n: preds.len(),
        label_space_size: labels.len(),
        metrics,
        bootstrap,
        flags,
        comparison: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_table_and_json() {
        let preds = vec![
            LabeledPrediction::new("1", "a", "a"),
            LabeledPrediction::new("2", "b", "b"),
            LabeledPrediction::new("3", "b", "a"),
        ];
        let labels = vec![Label::new("a"), Label::new("b")];
        let r = evaluate(
            &preds,
            &labels,
            Some(BootstrapSpec {
                resamples: 200,
                seed: 1,
                level: 0.95,
            }),
        )
        .unwrap();
        assert_eq!(r.n, 3);
        assert_eq!(r.metrics.len(), 6);
        let table = r.to_table();
        assert!(table.contains("ci_high"));
        assert!(table.lines().any(|l| l.starts_with("accuracy")));
        let back: MetricReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }
}
