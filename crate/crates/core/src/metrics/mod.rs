//! Targeting metrics and detection scoring.
//!
//! * TTK: share of training keywords that appear among landing-page keywords.
//! * BAiLP: share of displayed ads whose landing page carries at least one
//!   training keyword.
//!
//! Both use exact keyword match.

pub mod stats;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::AdKind;
use crate::taxonomy::Keyword;

pub use self::stats::{
    comparison_stats, value_correlation, ComparisonReport, CorrelationReport, FiveNumber, QuartileMethod, ValueSeries,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("training keyword set is empty")]
    EmptyTrainingSet,
    #[error("no displayed ads")]
    NoImpressions,
    #[error("impression without a ground-truth label")]
    MissingGroundTruth,
    #[error("degenerate series: {0}")]
    DegenerateSeries(String),
    #[error("series keys do not align: {0}")]
    KeyMismatch(String),
    #[error("need at least 3 pairs after outlier removal, got {0}")]
    TooFewPairs(usize),
}

/// `|K_T ∩ K_L| / |K_T|`.
pub fn ttk(training: &BTreeSet<Keyword>, landing: &BTreeSet<Keyword>) -> Result<f64, MetricsError> {
    if training.is_empty() {
        return Err(MetricsError::EmptyTrainingSet);
    }
    let hit = training.intersection(landing).count();
    Ok(hit as f64 / training.len() as f64)
}

/// Whether a landing page shares a keyword with the training set.
pub fn matches_training(training: &BTreeSet<Keyword>, landing: &BTreeSet<Keyword>) -> bool {
    // Iterate the smaller set; both are ordered so either direction works.
    if training.len() <= landing.len() {
        training.iter().any(|k| landing.contains(k))
    } else {
        landing.iter().any(|k| training.contains(k))
    }
}

/// ntimes-weighted share of landing pages matching the training keywords.
/// `pages` yields each landing page's keywords with its display count.
pub fn bailp<'a, I>(training: &BTreeSet<Keyword>, pages: I) -> Result<f64, MetricsError>
where
    I: IntoIterator<Item = (&'a BTreeSet<Keyword>, u64)>,
{
    let (mut hit, mut total) = (0u64, 0u64);
    for (keywords, ntimes) in pages {
        total += ntimes;
        if matches_training(training, keywords) {
            hit += ntimes;
        }
    }
    if total == 0 {
        return Err(MetricsError::NoImpressions);
    }
    Ok(hit as f64 / total as f64)
}

/// Confusion counts with oba as the positive class. Rates whose denominator
/// is zero are `None`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PerformanceReport {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub recall: Option<f64>,
    pub accuracy: Option<f64>,
    pub fpr: Option<f64>,
    pub fnr: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl PerformanceReport {
    pub fn from_counts(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        PerformanceReport {
            tp,
            fp,
            tn,
            fn_,
            recall: ratio(tp, tp + fn_),
            accuracy: ratio(tp + tn, tp + tn + fp + fn_),
            fpr: ratio(fp, fp + tn),
            fnr: ratio(fn_, tp + fn_),
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn merge(&self, other: &PerformanceReport) -> Self {
        Self::from_counts(self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn_ + other.fn_)
    }
}

/// Scores predictions against ground truth. Each item is
/// `(predicted_oba, label, ntimes)`; counts are weighted by ntimes.
pub fn detection_performance<I>(items: I) -> Result<PerformanceReport, MetricsError>
where
    I: IntoIterator<Item = (bool, Option<AdKind>, u64)>,
{
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (predicted, label, n) in items {
        let actual = label.ok_or(MetricsError::MissingGroundTruth)? == AdKind::Oba;
        match (predicted, actual) {
            (true, true) => tp += n,
            (true, false) => fp += n,
            (false, false) => tn += n,
            (false, true) => fn_ += n,
        }
    }
    Ok(PerformanceReport::from_counts(tp, fp, tn, fn_))
}

/// Mean and sample standard deviation (`None` below two values).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub n: usize,
    pub mean: f64,
    pub sd: Option<f64>,
}

impl MeanSd {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = (n > 1).then(|| {
            let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
            (ss / (n - 1) as f64).sqrt()
        });
        Some(MeanSd { n, mean, sd })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kws(list: &[&str]) -> BTreeSet<Keyword> {
        list.iter().map(|s| Keyword::new(s).unwrap()).collect()
    }

    #[test]
    fn ttk_examples() {
        assert_eq!(ttk(&kws(&["a", "b", "c", "d"]), &kws(&["b", "d", "x"])).unwrap(), 0.5);
        assert_eq!(ttk(&kws(&["a"]), &kws(&["b"])).unwrap(), 0.0);
        assert_eq!(ttk(&BTreeSet::new(), &kws(&["b"])), Err(MetricsError::EmptyTrainingSet));
    }

    #[test]
    fn bailp_weighted_example() {
        let t = kws(&["pools"]);
        let (hit, miss) = (kws(&["pools", "spas"]), kws(&["weather"]));
        let pages = [(&hit, 5), (&miss, 3), (&hit, 2)];
        assert!((bailp(&t, pages).unwrap() - 0.7).abs() < 1e-15);
        assert_eq!(bailp(&t, []), Err(MetricsError::NoImpressions));
    }

    #[test]
    fn confusion_arithmetic() {
        let r = PerformanceReport::from_counts(8, 1, 9, 2);
        assert_eq!(r.recall, Some(0.8));
        assert_eq!(r.accuracy, Some(0.85));
        assert_eq!(r.fpr, Some(0.1));
        assert_eq!(r.fnr, Some(0.2));
        assert_eq!(r.total(), 20);
        let none = PerformanceReport::from_counts(0, 0, 5, 0);
        assert_eq!(none.recall, None);
        assert_eq!(none.fpr, Some(0.0));
    }

    #[test]
    fn detection_needs_labels() {
        let items = [(true, Some(AdKind::Oba), 2), (false, None, 1)];
        assert_eq!(detection_performance(items), Err(MetricsError::MissingGroundTruth));
        let perfect = [(true, Some(AdKind::Oba), 2), (false, Some(AdKind::Static), 3)];
        let r = detection_performance(perfect).unwrap();
        assert_eq!((r.recall, r.accuracy, r.fpr, r.fnr), (Some(1.0), Some(1.0), Some(0.0), Some(0.0)));
    }

    #[test]
    fn mean_sd() {
        let m = MeanSd::of(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(m.mean, 2.0);
        assert_eq!(m.sd, Some(1.0));
        assert_eq!(MeanSd::of(&[4.0]).unwrap().sd, None);
        assert!(MeanSd::of(&[]).is_none());
    }
}
