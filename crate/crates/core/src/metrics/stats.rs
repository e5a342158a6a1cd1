//! Quartiles, IQR outlier removal, rank and linear correlation, and paired
//! condition comparisons.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use super::MetricsError;

/// Per-persona scalar, e.g. average BAiLP or a suggested CPC bid.
pub type ValueSeries = BTreeMap<String, f64>;

/// How the first and third quartiles are computed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuartileMethod {
    /// Medians of the lower and upper halves; with an odd count the median
    /// itself belongs to neither half.
    #[default]
    MedianExclusive,
    /// As above, but an odd count's median belongs to both halves.
    MedianInclusive,
    /// Linear interpolation between order statistics at `(n - 1) p`.
    Linear,
}

fn median_sorted(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

fn linear_quantile(xs: &[f64], p: f64) -> f64 {
    let h = (xs.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    xs[lo] + (h - lo as f64) * (xs[hi] - xs[lo])
}

/// `(q1, median, q3)` of `values`.
pub fn quartiles(values: &[f64], method: QuartileMethod) -> Result<(f64, f64, f64), MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::DegenerateSeries("no values".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(MetricsError::DegenerateSeries("non-finite value".into()));
    }
    let mut xs = values.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    let med = median_sorted(&xs);
    if n == 1 {
        return Ok((xs[0], med, xs[0]));
    }
    Ok(match method {
        QuartileMethod::MedianExclusive => (median_sorted(&xs[..n / 2]), med, median_sorted(&xs[n.div_ceil(2)..])),
        QuartileMethod::MedianInclusive => (median_sorted(&xs[..n.div_ceil(2)]), med, median_sorted(&xs[n / 2..])),
        QuartileMethod::Linear => (linear_quantile(&xs, 0.25), med, linear_quantile(&xs, 0.75)),
    })
}

/// Boxplot summary.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiveNumber {
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub iqr: f64,
}

impl FiveNumber {
    pub fn of(values: &[f64], method: QuartileMethod) -> Result<Self, MetricsError> {
        let (q1, median, q3) = quartiles(values, method)?;
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(FiveNumber { n: values.len(), min, q1, median, q3, max, iqr: q3 - q1 })
    }

    /// `[Q1 - 1.5 IQR, Q3 + 1.5 IQR]`.
    pub fn fences(&self) -> (f64, f64) {
        (self.q1 - 1.5 * self.iqr, self.q3 + 1.5 * self.iqr)
    }
}

/// Average ranks, 1-based; ties share the mean of their positions.
pub fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, MetricsError> {
    if x.len() != y.len() {
        return Err(MetricsError::KeyMismatch(format!("series lengths {} and {}", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(MetricsError::DegenerateSeries("fewer than 2 pairs".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricsError::DegenerateSeries("constant series".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Pearson correlation of the average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64, MetricsError> {
    if x.len() != y.len() {
        return Err(MetricsError::KeyMismatch(format!("series lengths {} and {}", x.len(), y.len())));
    }
    pearson(&ranks(x), &ranks(y))
}

/// Two-sided p-value of a Pearson coefficient from the t distribution with
/// `n - 2` degrees of freedom.
pub fn pearson_p_value(r: f64, n: usize) -> Option<f64> {
    if n < 3 {
        return None;
    }
    if r.abs() >= 1.0 {
        return Some(0.0);
    }
    let df = (n - 2) as f64;
    let t = r * (df / (1.0 - r * r)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).ok()?;
    Some(2.0 * (1.0 - dist.cdf(t.abs())))
}

/// Two-sided p-value of a Spearman coefficient, normal approximation
/// `z = r sqrt(n - 1)`.
pub fn spearman_p_value(r: f64, n: usize) -> Option<f64> {
    if n < 2 {
        return None;
    }
    let z = r * ((n - 1) as f64).sqrt();
    let dist = Normal::new(0.0, 1.0).ok()?;
    Some(2.0 * (1.0 - dist.cdf(z.abs())))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub n: usize,
    pub spearman: f64,
    pub pearson: f64,
    pub spearman_p: Option<f64>,
    pub pearson_p: Option<f64>,
    /// Personas dropped by the IQR rule on the value series.
    pub removed: Vec<String>,
    pub fences: (f64, f64),
}

fn check_keys(a: &ValueSeries, b: &ValueSeries) -> Result<(), MetricsError> {
    if a.keys().ne(b.keys()) {
        let ka: BTreeSet<&String> = a.keys().collect();
        let kb: BTreeSet<&String> = b.keys().collect();
        let diff: Vec<&&String> = ka.symmetric_difference(&kb).collect();
        return Err(MetricsError::KeyMismatch(format!("keys present in only one series: {diff:?}")));
    }
    Ok(())
}

/// Correlation between per-persona BAiLP and a value series (CPC bids), after
/// dropping personas whose value lies outside the IQR fences.
pub fn value_correlation(
    bailp: &ValueSeries,
    value: &ValueSeries,
    method: QuartileMethod,
) -> Result<CorrelationReport, MetricsError> {
    check_keys(bailp, value)?;
    let values: Vec<f64> = value.values().copied().collect();
    let summary = FiveNumber::of(&values, method)?;
    let (lo, hi) = summary.fences();
    let mut removed = Vec::new();
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for (persona, v) in value {
        if *v < lo || *v > hi {
            removed.push(persona.clone());
        } else {
            x.push(bailp[persona]);
            y.push(*v);
        }
    }
    if x.len() < 3 {
        return Err(MetricsError::TooFewPairs(x.len()));
    }
    let spearman_r = spearman(&x, &y)?;
    let pearson_r = pearson(&x, &y)?;
    Ok(CorrelationReport {
        n: x.len(),
        spearman: spearman_r,
        pearson: pearson_r,
        spearman_p: spearman_p_value(spearman_r, x.len()),
        pearson_p: pearson_p_value(pearson_r, x.len()),
        removed,
        fences: (lo, hi),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    /// `a - b` per persona.
    pub differences: ValueSeries,
    pub summary: FiveNumber,
}

/// Per-persona differences between two conditions, with their boxplot summary.
pub fn comparison_stats(
    a: &ValueSeries,
    b: &ValueSeries,
    method: QuartileMethod,
) -> Result<ComparisonReport, MetricsError> {
    check_keys(a, b)?;
    let differences: ValueSeries = a.iter().map(|(k, va)| (k.clone(), va - b[k])).collect();
    let values: Vec<f64> = differences.values().copied().collect();
    let summary = FiveNumber::of(&values, method)?;
    Ok(ComparisonReport { differences, summary })
}
