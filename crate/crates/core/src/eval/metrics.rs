use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::domain::Label;
use crate::eval::EvalError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledPrediction {
    pub sample_id: String,
    pub gold: Label,
    pub predicted: Label,
}

impl LabeledPrediction {
    pub fn new(sample_id: impl Into<String>, gold: impl Into<Label>, predicted: impl Into<Label>) -> Self {
        LabeledPrediction {
            sample_id: sample_id.into(),
            gold: gold.into(),
            predicted: predicted.into(),
        }
    }
}

/// `counts[g][p]` = samples with gold label `g` predicted as `p`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    labels: Vec<Label>,
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(labels: Vec<Label>) -> Result<Self, EvalError> {
        if labels.is_empty() {
            return Err(EvalError::EmptyLabelSpace);
        }
        let mut seen = std::collections::BTreeSet::new();
        if let Some(dup) = labels.iter().find(|l| !seen.insert(*l)) {
            return Err(EvalError::DuplicateLabel(dup.clone()));
        }
        let n = labels.len();
        Ok(ConfusionMatrix {
            labels,
            counts: vec![vec![0; n]; n],
        })
    }

    pub fn from_counts(labels: Vec<Label>, counts: Vec<Vec<u64>>) -> Result<Self, EvalError> {
        let mut m = Self::zeros(labels)?;
        let n = m.labels.len();
        if counts.len() != n || counts.iter().any(|r| r.len() != n) {
            return Err(EvalError::ShapeMismatch);
        }
        m.counts = counts;
        Ok(m)
    }

    pub(crate) fn from_index_pairs(labels: &[Label], pairs: impl Iterator<Item = (usize, usize)>) -> Self {
        let n = labels.len();
        let mut counts = vec![vec![0u64; n]; n];
        for (g, p) in pairs {
            counts[g][p] += 1;
        }
        ConfusionMatrix {
            labels: labels.to_vec(),
            counts,
        }
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn k(&self) -> usize {
        self.labels.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k()).map(|i| self.counts[i][i]).sum()
    }

    /// Gold counts per class.
    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    /// Predicted counts per class.
    pub fn col_sums(&self) -> Vec<u64> {
        (0..self.k())
            .map(|j| self.counts.iter().map(|r| r[j]).sum())
            .collect()
    }

    pub fn is_diagonal(&self) -> bool {
        (0..self.k()).all(|i| (0..self.k()).all(|j| i == j || self.counts[i][j] == 0))
    }

    fn nonempty(&self) -> Result<f64, EvalError> {
        match self.total() {
            0 => Err(EvalError::EmptyInput),
            n => Ok(n as f64),
        }
    }
}

/// Maps label to its position in `labels`.
pub(crate) fn label_index(labels: &[Label]) -> HashMap<&Label, usize> {
    labels.iter().enumerate().map(|(i, l)| (l, i)).collect()
}

pub fn confusion_matrix(preds: &[LabeledPrediction], labels: &[Label]) -> Result<ConfusionMatrix, EvalError> {
    let mut m = ConfusionMatrix::zeros(labels.to_vec())?;
    let idx = label_index(labels);
    for p in preds {
        let lookup = |l: &Label| {
            idx.get(l).copied().ok_or_else(|| EvalError::UnknownLabel {
                sample_id: p.sample_id.clone(),
                label: l.clone(),
            })
        };
        let g = lookup(&p.gold)?;
        let q = lookup(&p.predicted)?;
        m.counts[g][q] += 1;
    }
    Ok(m)
}

pub fn accuracy(m: &ConfusionMatrix) -> Result<f64, EvalError> {
    let n = m.nonempty()?;
    Ok(m.trace() as f64 / n)
}

/// Per-class F1, zero when precision + recall is zero or undefined.
pub fn per_class_f1(m: &ConfusionMatrix) -> Vec<f64> {
    let rows = m.row_sums();
    let cols = m.col_sums();
    (0..m.k())
        .map(|i| {
            let tp = m.counts[i][i] as f64;
            // 2TP / (2TP + FP + FN) is F1 without dividing by zero precision.
            let denom = rows[i] as f64 + cols[i] as f64;
            if tp == 0.0 || denom == 0.0 {
                0.0
            } else {
                2.0 * tp / denom
            }
        })
        .collect()
}

pub fn macro_f1(m: &ConfusionMatrix) -> Result<f64, EvalError> {
    m.nonempty()?;
    let f = per_class_f1(m);
    Ok(f.iter().sum::<f64>() / f.len() as f64)
}

pub fn weighted_f1(m: &ConfusionMatrix) -> Result<f64, EvalError> {
    let n = m.nonempty()?;
    let rows = m.row_sums();
    Ok(per_class_f1(m)
        .iter()
        .zip(rows)
        .map(|(f, ni)| f * ni as f64 / n)
        .sum())
}

/// Multiclass Matthews correlation; 0 when a denominator factor vanishes.
pub fn mcc(m: &ConfusionMatrix) -> Result<f64, EvalError> {
    let s = m.nonempty()?;
    let c = m.trace() as f64;
    let t = m.row_sums();
    let p = m.col_sums();
    let pt: f64 = t.iter().zip(&p).map(|(a, b)| *a as f64 * *b as f64).sum();
    let pp: f64 = p.iter().map(|x| (*x as f64).powi(2)).sum();
    let tt: f64 = t.iter().map(|x| (*x as f64).powi(2)).sum();
    let denom_p = s * s - pp;
    let denom_t = s * s - tt;
    if denom_p == 0.0 || denom_t == 0.0 {
        return Ok(0.0);
    }
    Ok((c * s - pt) / (denom_p.sqrt() * denom_t.sqrt()))
}

/// Cohen's kappa; 0 when chance agreement is 1.
pub fn kappa(m: &ConfusionMatrix) -> Result<f64, EvalError> {
    let n = m.nonempty()?;
    let po = m.trace() as f64 / n;
    let pe: f64 = m
        .row_sums()
        .iter()
        .zip(m.col_sums())
        .map(|(r, c)| *r as f64 * c as f64)
        .sum::<f64>()
        / (n * n);
    if pe == 1.0 {
        return Ok(0.0);
    }
    Ok((po - pe) / (1.0 - pe))
}

/// Mean recall over classes present in the gold labels.
pub fn balanced_accuracy(m: &ConfusionMatrix) -> Result<f64, EvalError> {
    m.nonempty()?;
    let rows = m.row_sums();
    let recalls: Vec<f64> = (0..m.k())
        .filter(|&i| rows[i] > 0)
        .map(|i| m.counts[i][i] as f64 / rows[i] as f64)
        .collect();
    Ok(recalls.iter().sum::<f64>() / recalls.len() as f64)
}

/// Notes on zero-division conventions that fired for this matrix.
pub fn degenerate_flags(m: &ConfusionMatrix) -> Vec<String> {
    let mut flags = Vec::new();
    let rows = m.row_sums();
    let cols = m.col_sums();
    let n = m.total();
    let empty: Vec<&str> = (0..m.k())
        .filter(|&i| rows[i] + cols[i] == 0)
        .map(|i| m.labels[i].as_str())
        .collect();
    if !empty.is_empty() {
        flags.push(format!("f1_zero_division: {}", empty.join(", ")));
    }
    if n > 0 {
        let one_pred = cols.iter().filter(|c| **c > 0).count() <= 1;
        let one_gold = rows.iter().filter(|r| **r > 0).count() <= 1;
        if one_pred || one_gold {
            flags.push("mcc_zero_denominator".into());
        }
        if one_pred && one_gold && cols == rows {
            flags.push("kappa_chance_agreement_one".into());
        }
    }
    flags
}

/// Metrics the harness reports, in display order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    MacroF1,
    WeightedF1,
    Mcc,
    Kappa,
    BalancedAccuracy,
}

impl Metric {
    pub const ALL: [Metric; 6] = [
        Metric::Accuracy,
        Metric::MacroF1,
        Metric::WeightedF1,
        Metric::Mcc,
        Metric::Kappa,
        Metric::BalancedAccuracy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::MacroF1 => "macro_f1",
            Metric::WeightedF1 => "weighted_f1",
            Metric::Mcc => "mcc",
            Metric::Kappa => "kappa",
            Metric::BalancedAccuracy => "balanced_accuracy",
        }
    }

    pub fn compute(self, m: &ConfusionMatrix) -> Result<f64, EvalError> {
        match self {
            Metric::Accuracy => accuracy(m),
            Metric::MacroF1 => macro_f1(m),
            Metric::WeightedF1 => weighted_f1(m),
            Metric::Mcc => mcc(m),
            Metric::Kappa => kappa(m),
            Metric::BalancedAccuracy => balanced_accuracy(m),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ab() -> Vec<Label> {
        vec!["a".into(), "b".into()]
    }

    fn binary(tp: u64, fn_: u64, fp: u64, tn: u64) -> ConfusionMatrix {
        ConfusionMatrix::from_counts(ab(), vec![vec![tp, fn_], vec![fp, tn]]).unwrap()
    }

    #[test]
    fn counts_and_accuracy() {
        let preds = vec![
            LabeledPrediction::new("1", "a", "a"),
            LabeledPrediction::new("2", "a", "b"),
            LabeledPrediction::new("3", "b", "b"),
        ];
        let m = confusion_matrix(&preds, &ab()).unwrap();
        assert_eq!(m.counts(), &[vec![1, 1], vec![0, 1]]);
        assert_eq!(accuracy(&m).unwrap(), 2.0 / 3.0);
        assert_eq!(m.total(), 3);
    }

    #[test]
    fn empty_and_unknown() {
        let m = confusion_matrix(&[], &ab()).unwrap();
        assert_eq!(m.counts(), &[vec![0, 0], vec![0, 0]]);
        assert!(matches!(accuracy(&m), Err(EvalError::EmptyInput)));
        let bad = [LabeledPrediction::new("s9", "a", "c")];
        match confusion_matrix(&bad, &ab()) {
            Err(EvalError::UnknownLabel { sample_id, label }) => {
                assert_eq!(sample_id, "s9");
                assert_eq!(label.as_str(), "c");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn symmetric_binary() {
        let m = binary(25, 25, 25, 25);
        assert_eq!(accuracy(&m).unwrap(), 0.5);
        assert_eq!(mcc(&m).unwrap(), 0.0);
    }

    #[test]
    fn f1_binary_example() {
        let m = binary(4, 1, 1, 4);
        let f = per_class_f1(&m);
        assert!((f[0] - 0.8).abs() < 1e-15 && (f[1] - 0.8).abs() < 1e-15);
        assert!((macro_f1(&m).unwrap() - 0.8).abs() < 1e-15);
        assert!((weighted_f1(&m).unwrap() - 0.8).abs() < 1e-15);
    }

    #[test]
    fn absent_class_zero_f1() {
        let m = ConfusionMatrix::from_counts(
            vec!["a".into(), "b".into(), "c".into()],
            vec![vec![2, 0, 0], vec![0, 2, 0], vec![0, 0, 0]],
        )
        .unwrap();
        assert!((macro_f1(&m).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(weighted_f1(&m).unwrap(), 1.0);
        assert!(degenerate_flags(&m)[0].contains('c'));
    }

    #[test]
    fn mcc_binary_formula() {
        // (30·40 − 10·20) / sqrt(40·50·50·60)
        let m = binary(30, 20, 10, 40);
        let want = 1000.0 / (6.0e6f64).sqrt();
        assert!((mcc(&m).unwrap() - want).abs() < 1e-12);
        assert!((want - 0.408_248_290_463_863).abs() < 1e-12);
    }

    #[test]
    fn kappa_examples() {
        // p_o = 0.8 and p_e = 0.5 → 0.6
        let m = binary(40, 10, 10, 40);
        assert!((kappa(&m).unwrap() - 0.6).abs() < 1e-12);
        // Everything predicted "a", gold split 5/5: p_o = 0.5, p_e = 0.5.
        let m = binary(5, 0, 5, 0);
        assert_eq!(kappa(&m).unwrap(), 0.0);
        let m = binary(10, 0, 0, 0);
        assert_eq!(kappa(&m).unwrap(), 0.0);
        assert!(degenerate_flags(&m).iter().any(|f| f.starts_with("kappa")));
    }

    #[test]
    fn perfect_predictions() {
        let m = ConfusionMatrix::from_counts(
            vec!["a".into(), "b".into(), "c".into()],
            vec![vec![3, 0, 0], vec![0, 5, 0], vec![0, 0, 2]],
        )
        .unwrap();
        for metric in Metric::ALL {
            assert_eq!(metric.compute(&m).unwrap(), 1.0, "{}", metric.name());
        }
    }

    #[test]
    fn duplicate_labels_rejected() {
        assert!(matches!(
            ConfusionMatrix::zeros(vec!["a".into(), "a".into()]),
            Err(EvalError::DuplicateLabel(_))
        ));
    }
}
