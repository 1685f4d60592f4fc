use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

fn paired_differences(a: &[f64], b: &[f64]) -> Result<(Vec<f64>, f64, f64)> {
    if a.len() != b.len() {
        return Err(Error::shape("paired test", format!("{} vs {} runs", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::DegenerateTest(format!("need at least 2 paired runs, got {}", a.len())));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let k = d.len() as f64;
    let mean = d.iter().sum::<f64>() / k;
    let var = d.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (k - 1.0);
    if var <= 0.0 || !var.is_finite() {
        return Err(Error::DegenerateTest("paired differences have zero variance".into()));
    }
    Ok((d, mean, var.sqrt()))
}

/// Two-sided paired t-test; returns `(t, p)`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    let (d, mean, sd) = paired_differences(a, b)?;
    let k = d.len() as f64;
    // computed as d·√k so the effect-size identity holds bit for bit
    let t = (mean / sd) * k.sqrt();
    let dist = StudentsT::new(0.0, 1.0, k - 1.0).map_err(|e| Error::DegenerateTest(e.to_string()))?;
    let p = (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0);
    Ok((t, p))
}

/// Paired effect size `mean(d) / sd(d)`, so that `d·√k = t`.
pub fn cohens_d(a: &[f64], b: &[f64]) -> Result<f64> {
    let (_, mean, sd) = paired_differences(a, b)?;
    Ok(mean / sd)
}

/// `0.2 + 0.8·(x − min)/(max − min)`.
pub fn radar_normalize(values: &[f64]) -> Result<Vec<f64>> {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if values.is_empty() || !(max > min) {
        return Err(Error::DegenerateTest("radar normalization needs max > min".into()));
    }
    Ok(values.iter().map(|x| 0.2 + 0.8 * ((x - min) / (max - min))).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairedComparison {
    pub mean_diff: f64,
    pub pct_diff: f64,
    pub t: f64,
    pub p: f64,
    pub cohens_d: f64,
    pub n_runs: usize,
}

pub const COMPARISON_HEADER: &str = "task,model_a,model_b,mean_diff,pct_diff,t,p,cohens_d,n_runs";

/// Compares paired runs of model `a` against model `b`.
pub fn compare(a: &[f64], b: &[f64]) -> Result<PairedComparison> {
    let (t, p) = paired_t_test(a, b)?;
    let d = cohens_d(a, b)?;
    let k = a.len() as f64;
    let mean_a = a.iter().sum::<f64>() / k;
    let mean_b = b.iter().sum::<f64>() / k;
    let mean_diff = mean_a - mean_b;
    Ok(PairedComparison { mean_diff, pct_diff: 100.0 * mean_diff / mean_b, t, p, cohens_d: d, n_runs: a.len() })
}
