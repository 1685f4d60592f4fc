use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;

/// `(1 − ε)·onehot + ε/C`.
pub fn label_smooth(label: usize, eps: f64, n_classes: usize) -> Vec<f64> {
    let mut row = vec![eps / n_classes as f64; n_classes];
    row[label] += 1.0 - eps;
    row
}

/// Twice the Mann–Whitney numerator, `2·#concordant + #tied`, and the
/// positive/negative counts.
fn mann_whitney_twice(scores: &[f64], positive: &[bool]) -> Result<(u128, u64, u64)> {
    if scores.len() != positive.len() {
        return Err(Error::shape("auroc", format!("{} scores vs {} labels", scores.len(), positive.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::UndefinedMetric("scores contain NaN".into()));
    }
    let n_pos = positive.iter().filter(|&&p| p).count() as u64;
    let n_neg = positive.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric("AUROC needs both positive and negative samples".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of doubled mid-ranks (1-based) over positives.
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let twice_mid = (i + 1 + j + 1) as u128;
        let pos_in_group = order[i..=j].iter().filter(|&&k| positive[k]).count() as u128;
        twice_rank_sum += twice_mid * pos_in_group;
        i = j + 1;
    }
    let p = n_pos as u128;
    Ok((twice_rank_sum - p * (p + 1), n_pos, n_neg))
}

/// Probability that a positive outranks a negative, ties counted ½.
pub fn auroc_binary(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (twice_u, p, n) = mann_whitney_twice(scores, labels)?;
    Ok(twice_u as f64 / (2 * p as u128 * n as u128) as f64)
}

fn check_probs(probs: &[Vec<f64>], labels: &[usize]) -> Result<usize> {
    let c = probs.first().map_or(0, Vec::len);
    if probs.len() != labels.len() || probs.iter().any(|r| r.len() != c) || c < 2 {
        return Err(Error::shape("metric", "probabilities must be an n×C table with C ≥ 2 matching the labels"));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::UndefinedMetric(format!("label {bad} is outside {c} classes")));
    }
    let missing: Vec<usize> = (0..c).filter(|k| !labels.contains(k)).collect();
    if !missing.is_empty() {
        return Err(Error::UndefinedMetric(format!("classes {missing:?} are absent from the labels")));
    }
    Ok(c)
}

/// Per-class one-vs-rest AUROC.
pub fn auroc_per_class(probs: &[Vec<f64>], labels: &[usize]) -> Result<Vec<f64>> {
    let c = check_probs(probs, labels)?;
    (0..c)
        .map(|k| {
            let scores: Vec<f64> = probs.iter().map(|r| r[k]).collect();
            let pos: Vec<bool> = labels.iter().map(|&l| l == k).collect();
            auroc_binary(&scores, &pos)
        })
        .collect()
}

/// Mean of the per-class one-vs-rest AUROCs.
pub fn auroc_macro_ovr(probs: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    let per = auroc_per_class(probs, labels)?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Macro one-vs-rest sensitivity and specificity of argmax predictions.
pub fn sens_spec_macro(probs: &[Vec<f64>], labels: &[usize]) -> Result<(f64, f64)> {
    let c = check_probs(probs, labels)?;
    let preds: Vec<usize> = probs.iter().map(|r| argmax(r)).collect();
    sens_spec_from_predictions(&preds, labels, c)
}

pub fn sens_spec_from_predictions(preds: &[usize], labels: &[usize], c: usize) -> Result<(f64, f64)> {
    let (mut sens, mut spec) = (0.0, 0.0);
    for k in 0..c {
        let (mut tp, mut fn_, mut tn, mut fp) = (0u64, 0u64, 0u64, 0u64);
        for (&p, &l) in preds.iter().zip(labels) {
            match (l == k, p == k) {
                (true, true) => tp += 1,
                (true, false) => fn_ += 1,
                (false, false) => tn += 1,
                (false, true) => fp += 1,
            }
        }
        if tp + fn_ == 0 || tn + fp == 0 {
            return Err(Error::UndefinedMetric(format!("class {k} lacks positives or negatives")));
        }
        sens += tp as f64 / (tp + fn_) as f64;
        spec += tn as f64 / (tn + fp) as f64;
    }
    Ok((sens / c as f64, spec / c as f64))
}

/// Type-7 (linear interpolation) empirical quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Clone, Debug, PartialEq)]
pub struct BootstrapCi {
    pub low: f64,
    pub high: f64,
    /// Resamples discarded because the metric was undefined on them.
    pub redrawn: usize,
    /// The metric on each accepted resample, in draw order.
    pub values: Vec<f64>,
}

/// Endless stream of bootstrap resamples of `0..n`.
pub fn resamples(n: usize, seed: u64) -> impl Iterator<Item = Vec<usize>> {
    let mut r = rng::stream(seed, "bootstrap", 0);
    std::iter::repeat_with(move || (0..n).map(|_| r.random_range(0..n)).collect())
}

/// Percentile bootstrap interval of `metric` over resampled row indices.
/// Resamples on which the metric is undefined are redrawn; more than half
/// undefined is an error.
pub fn bootstrap_ci(
    n: usize,
    metric: impl Fn(&[usize]) -> Result<f64>,
    n_resamples: usize,
    alpha: f64,
    seed: u64,
) -> Result<BootstrapCi> {
    if n_resamples < 100 {
        return Err(Error::Config(format!("bootstrap needs at least 100 resamples, got {n_resamples}")));
    }
    if n == 0 {
        return Err(Error::UndefinedMetric("bootstrap over an empty test set".into()));
    }
    let mut values = Vec::with_capacity(n_resamples);
    let mut redrawn = 0usize;
    for idx in resamples(n, seed) {
        match metric(&idx) {
            Ok(v) => values.push(v),
            Err(Error::UndefinedMetric(_)) => redrawn += 1,
            Err(e) => return Err(e),
        }
        if values.len() == n_resamples {
            break;
        }
        if redrawn > n_resamples {
            break;
        }
    }
    if 2 * redrawn > values.len() + redrawn {
        return Err(Error::UndefinedMetric(format!(
            "metric undefined on {redrawn} of {} bootstrap resamples",
            values.len() + redrawn
        )));
    }
    let mut sorted = values.clone();
    sorted.sort_by(f64::total_cmp);
    Ok(BootstrapCi {
        low: quantile_sorted(&sorted, alpha / 2.0),
        high: quantile_sorted(&sorted, 1.0 - alpha / 2.0),
        redrawn,
        values,
    })
}
