use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::domain::Label;
use crate::eval::metrics::{label_index, ConfusionMatrix, LabeledPrediction, Metric};
use crate::eval::EvalError;

pub const MIN_RESAMPLES: usize = 100;

/// RNG for one bootstrap resample: ChaCha20 seeded from `seed`, with the
/// resample index as the stream id. Each draw is `gen_range(0..n)`.
pub fn resample_rng(seed: u64, resample: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(resample);
    rng
}

/// Linear-interpolation percentile over sorted data, `q` in `[0, 1]`.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile bootstrap interval for `metric` over sample-level resampling.
pub fn bootstrap_ci(
    preds: &[LabeledPrediction],
    labels: &[Label],
    metric: Metric,
    resamples: usize,
    seed: u64,
    level: f64,
) -> Result<(f64, f64), EvalError> {
    let n = preds.len();
    if n < 2 || resamples < MIN_RESAMPLES {
        return Err(EvalError::TooFewSamples { n, resamples });
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(EvalError::InvalidLevel(level));
    }
    // Validates the label space and every prediction up front.
    crate::eval::metrics::confusion_matrix(preds, labels)?;
    let idx = label_index(labels);
    let pairs: Vec<(usize, usize)> = preds
        .iter()
        .map(|p| (idx[&p.gold], idx[&p.predicted]))
        .collect();

    let mut stats = (0..resamples as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = resample_rng(seed, r);
            let m = ConfusionMatrix::from_index_pairs(
                labels,
                (0..n).map(|_| pairs[rng.gen_range(0..n)]),
            );
            metric.compute(&m)
        })
        .collect::<Result<Vec<f64>, _>>()?;
    stats.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    Ok((
        percentile_sorted(&stats, alpha),
        percentile_sorted(&stats, 1.0 - alpha),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t_stat: f64,
    pub p_value: f64,
    pub df: f64,
    pub mean_diff: f64,
    pub zero_variance: bool,
}

/// Two-sided paired t-test on `a - b`.
pub fn paired_ttest(a: &[f64], b: &[f64]) -> Result<TTest, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let n = a.len();
    if n < 2 {
        return Err(EvalError::TooFewSamples { n, resamples: 0 });
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let nf = n as f64;
    let mean = diffs.iter().sum::<f64>() / nf;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    let sd = var.sqrt();
    let df = nf - 1.0;
    if sd <= 1e-12 * mean.abs().max(1.0) {
        return Ok(TTest {
            t_stat: 0.0,
            p_value: 1.0,
            df,
            mean_diff: mean,
            zero_variance: true,
        });
    }
    let t = mean / (sd / nf.sqrt());
    let dist = StudentsT::new(0.0, 1.0, df).expect("df >= 1");
    let p = (2.0 * dist.sf(t.abs())).min(1.0);
    Ok(TTest {
        t_stat: t,
        p_value: p,
        df,
        mean_diff: mean,
        zero_variance: false,
    })
}

/// Per-sample 0/1 correctness, the paired score used for model comparison.
pub fn correctness(preds: &[LabeledPrediction]) -> Vec<f64> {
    preds
        .iter()
        .map(|p| if p.gold == p.predicted { 1.0 } else { 0.0 })
        .collect()
}
