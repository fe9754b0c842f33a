//! Run aggregation and the two-tailed Wilcoxon signed-rank test.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest effective sample size that [`WilcoxonMode::Auto`] tests exactly.
pub const EXACT_AUTO_MAX_N: usize = 12;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("no values to aggregate")]
    Empty,
    #[error("non-finite value at position {0}")]
    NonFinite(usize),
    #[error("alpha must lie in (0, 1), got {0}")]
    InvalidAlpha(f64),
}

pub type Result<T> = std::result::Result<T, StatsError>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation; absent for a single value.
    pub std: Option<f64>,
    pub n: usize,
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.std {
            Some(s) => write!(f, "{:.4} ± {:.4} (n={})", self.mean, s, self.n),
            None => write!(f, "{:.4} (n={})", self.mean, self.n),
        }
    }
}

pub fn summarize(values: &[f64]) -> Result<Summary> {
    if values.is_empty() {
        return Err(StatsError::Empty);
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite(i));
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = (n > 1).then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt());
    Ok(Summary { mean, std, n })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedSample {
    pub pairs: Vec<(f64, f64)>,
    pub labels: (String, String),
}

impl PairedSample {
    pub fn new(a: &[f64], b: &[f64], labels: (&str, &str)) -> Self {
        assert_eq!(a.len(), b.len(), "paired samples must have equal length");
        PairedSample {
            pairs: a.iter().copied().zip(b.iter().copied()).collect(),
            labels: (labels.0.to_string(), labels.1.to_string()),
        }
    }

    pub fn swapped(&self) -> Self {
        PairedSample {
            pairs: self.pairs.iter().map(|&(a, b)| (b, a)).collect(),
            labels: (self.labels.1.clone(), self.labels.0.clone()),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WilcoxonMode {
    /// Exact for small samples, normal approximation above.
    #[default]
    Auto,
    Exact,
    NormalApprox,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbTestResult {
    pub labels: (String, String),
    /// W = min(W+, W-).
    pub w_statistic: f64,
    pub w_plus: f64,
    pub w_minus: f64,
    pub p_value: f64,
    pub alpha: f64,
    pub reject_h0: bool,
    pub n_effective: usize,
    /// Resolved mode (never `Auto`).
    pub mode: WilcoxonMode,
    /// Every difference was zero, so no decision is possible.
    pub degenerate: bool,
}

/// Average ranks of `values` (1-based), ties sharing their mean rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// P(W+ <= w) under H0, found by enumerating sign assignments through a
/// subset-sum table over doubled ranks.
fn exact_lower_tail(ranks: &[f64], w: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let max: usize = doubled.iter().sum();
    let mut dist = vec![0.0f64; max + 1];
    dist[0] = 1.0;
    let mut reach = 0;
    for &r in &doubled {
        reach += r;
        for s in (0..=reach).rev() {
            let with = if s >= r { dist[s - r] } else { 0.0 };
            dist[s] = 0.5 * dist[s] + 0.5 * with;
        }
    }
    let limit = (2.0 * w).round() as usize;
    dist[..=limit.min(max)].iter().sum()
}

pub fn wilcoxon_signed_rank(sample: &PairedSample, alpha: f64, mode: WilcoxonMode) -> Result<AbTestResult> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(StatsError::InvalidAlpha(alpha));
    }
    if sample.pairs.is_empty() {
        return Err(StatsError::Empty);
    }
    if let Some(i) = sample.pairs.iter().position(|(a, b)| !a.is_finite() || !b.is_finite()) {
        return Err(StatsError::NonFinite(i));
    }
    let diffs: Vec<f64> = sample.pairs.iter().map(|(a, b)| a - b).filter(|d| *d != 0.0).collect();
    let n = diffs.len();
    let resolved = match mode {
        WilcoxonMode::Auto if n <= EXACT_AUTO_MAX_N => WilcoxonMode::Exact,
        WilcoxonMode::Auto => WilcoxonMode::NormalApprox,
        m => m,
    };
    if n == 0 {
        return Ok(AbTestResult {
            labels: sample.labels.clone(),
            w_statistic: 0.0,
            w_plus: 0.0,
            w_minus: 0.0,
            p_value: 1.0,
            alpha,
            reject_h0: false,
            n_effective: 0,
            mode: resolved,
            degenerate: true,
        });
    }
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = average_ranks(&abs);
    let w_plus: f64 = diffs.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).fold(0.0, |acc, (_, r)| acc + r);
    let w_minus: f64 = diffs.iter().zip(&ranks).filter(|(d, _)| **d < 0.0).fold(0.0, |acc, (_, r)| acc + r);
    let w = w_plus.min(w_minus);
    let p = match resolved {
        WilcoxonMode::Exact => 2.0 * exact_lower_tail(&ranks, w),
        _ => {
            let nf = n as f64;
            let mut ties = 0.0;
            let mut sorted = abs.clone();
            sorted.sort_by(f64::total_cmp);
            let mut i = 0;
            while i < sorted.len() {
                let j = sorted[i..].iter().take_while(|v| **v == sorted[i]).count();
                let t = j as f64;
                ties += t * t * t - t;
                i += j;
            }
            let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - ties / 48.0;
            let z = (w - nf * (nf + 1.0) / 4.0 + 0.5) / var.sqrt();
            2.0 * normal_cdf(z)
        }
    };
    let p_value = p.clamp(0.0, 1.0);
    Ok(AbTestResult {
        labels: sample.labels.clone(),
        w_statistic: w,
        w_plus,
        w_minus,
        p_value,
        alpha,
        reject_h0: p_value < alpha,
        n_effective: n,
        mode: resolved,
        degenerate: false,
    })
}
