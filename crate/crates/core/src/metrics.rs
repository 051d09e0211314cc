//! Classification metrics and the paired Wilcoxon signed-rank test.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Significance level used for model comparisons unless overridden.
pub const DEFAULT_ALPHA: f64 = 0.05;

/// Above this many non-zero differences the p-value uses the normal approximation.
pub const EXACT_LIMIT: usize = 25;

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn from_labels(truth: &[usize], predicted: &[usize], classes: usize) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::Input(format!(
                "{} true labels but {} predictions",
                truth.len(),
                predicted.len()
            )));
        }
        if truth.is_empty() {
            return Err(Error::Input("no labels to score".into()));
        }
        let mut counts = vec![0u64; classes * classes];
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= classes || p >= classes {
                return Err(Error::Input(format!("label pair ({t}, {p}) outside 0..{classes}")));
            }
            counts[t * classes + p] += 1;
        }
        Ok(Self { classes, counts })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.classes + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|c| self.get(c, c)).sum()
    }

    pub fn accuracy(&self) -> f64 {
        self.trace() as f64 / self.total() as f64
    }

    pub fn support(&self, class: usize) -> u64 {
        (0..self.classes).map(|p| self.get(class, p)).sum()
    }

    pub fn predicted_count(&self, class: usize) -> u64 {
        (0..self.classes).map(|t| self.get(t, class)).sum()
    }

    /// Per-class precision; zero when the class is never predicted.
    pub fn precision(&self, class: usize) -> f64 {
        ratio(self.get(class, class), self.predicted_count(class))
    }

    /// Per-class recall; zero when the class never occurs.
    pub fn recall(&self, class: usize) -> f64 {
        ratio(self.get(class, class), self.support(class))
    }

    pub fn f1(&self, class: usize) -> f64 {
        let (p, r) = (self.precision(class), self.recall(class));
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    /// Unweighted mean over all classes.
    #[default]
    Macro,
    /// Mean weighted by class support.
    Weighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl ClassificationReport {
    pub const METRIC_NAMES: [&'static str; 4] = ["accuracy", "precision", "recall", "f1"];

    pub fn values(&self) -> [f64; 4] {
        [self.accuracy, self.precision, self.recall, self.f1]
    }
}

/// Macro-averaged accuracy, precision, recall and F1.
pub fn classify_metrics(truth: &[usize], predicted: &[usize], classes: usize) -> Result<ClassificationReport> {
    classify_metrics_with(truth, predicted, classes, Averaging::Macro)
}

pub fn classify_metrics_with(
    truth: &[usize],
    predicted: &[usize],
    classes: usize,
    averaging: Averaging,
) -> Result<ClassificationReport> {
    let cm = ConfusionMatrix::from_labels(truth, predicted, classes)?;
    let total = cm.total() as f64;
    let avg = |f: &dyn Fn(usize) -> f64| match averaging {
        Averaging::Macro => (0..classes).map(f).sum::<f64>() / classes as f64,
        Averaging::Weighted => (0..classes).map(|c| cm.support(c) as f64 * f(c)).sum::<f64>() / total,
    };
    Ok(ClassificationReport {
        accuracy: cm.accuracy(),
        precision: avg(&|c| cm.precision(c)),
        recall: avg(&|c| cm.recall(c)),
        f1: avg(&|c| cm.f1(c)),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PValueMethod {
    Exact,
    Normal,
    /// Every paired difference was zero.
    Degenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonOutcome {
    /// `min(W+, W-)`.
    pub statistic: f64,
    pub w_plus: f64,
    pub w_minus: f64,
    /// Pairs left after discarding zero differences.
    pub n_effective: usize,
    /// Two-sided p-value.
    pub p_value: f64,
    pub alpha: f64,
    pub significant: bool,
    pub method: PValueMethod,
}

impl WilcoxonOutcome {
    pub fn degenerate(&self) -> bool {
        self.method == PValueMethod::Degenerate
    }
}

/// Average ranks (1-based) of `values`, ties sharing the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start+1 ..= end
        let rank = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

/// Two-sided paired Wilcoxon signed-rank test on `a - b`.
///
/// Zero differences are dropped and tied magnitudes get average ranks. For up
/// to [`EXACT_LIMIT`] remaining pairs the p-value comes from the exact null
/// distribution of `W+`; beyond that a tie-corrected normal approximation with
/// continuity correction is used.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64], alpha: f64) -> Result<WilcoxonOutcome> {
    if a.len() != b.len() {
        return Err(Error::Pairing(format!("samples have {} and {} entries", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::Input("Wilcoxon test needs at least one pair".into()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::Input("Wilcoxon samples must be finite".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("alpha must lie in (0, 1), got {alpha}")));
    }

    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    let n = diffs.len();
    if n == 0 {
        return Ok(WilcoxonOutcome {
            statistic: 0.0,
            w_plus: 0.0,
            w_minus: 0.0,
            n_effective: 0,
            p_value: 1.0,
            alpha,
            significant: false,
            method: PValueMethod::Degenerate,
        });
    }
    let magnitudes: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = average_ranks(&magnitudes);
    let w_plus: f64 = diffs.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();
    let w_minus: f64 = diffs.iter().zip(&ranks).filter(|(d, _)| **d < 0.0).map(|(_, r)| r).sum();
    let statistic = w_plus.min(w_minus);

    let (p_value, method) = if n <= EXACT_LIMIT {
        (exact_p_value(&ranks, statistic), PValueMethod::Exact)
    } else {
        (normal_p_value(&magnitudes, &ranks, statistic), PValueMethod::Normal)
    };
    Ok(WilcoxonOutcome {
        statistic,
        w_plus,
        w_minus,
        n_effective: n,
        p_value,
        alpha,
        significant: p_value < alpha,
        method,
    })
}

/// `2 * P(W+ <= w)` under the null, by dynamic programming over doubled ranks.
fn exact_p_value(ranks: &[f64], w: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let max_sum: usize = doubled.iter().sum();
    let mut counts = vec![0u64; max_sum + 1];
    counts[0] = 1;
    let mut reach = 0;
    for &r in &doubled {
        for s in (0..=reach).rev() {
            if counts[s] != 0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let limit = (2.0 * w).round() as usize;
    let tail: u64 = counts[..=limit.min(max_sum)].iter().sum();
    let total = 2f64.powi(ranks.len() as i32);
    (2.0 * tail as f64 / total).min(1.0)
}

fn normal_p_value(magnitudes: &[f64], ranks: &[f64], w: f64) -> f64 {
    let n = ranks.len() as f64;
    let mean = n * (n + 1.0) / 4.0;
    let mut sorted = magnitudes.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        let t = (j - i) as f64;
        tie_term += t * t * t - t;
        i = j;
    }
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
    if var <= 0.0 {
        return 1.0;
    }
    let z = ((w - mean).abs() - 0.5).max(0.0) / var.sqrt();
    erfc(z / std::f64::consts::SQRT_2).min(1.0)
}

/// Mean and sample standard deviation of repeated runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
    /// Set when fewer than two runs were given and `std` is reported as 0.
    pub degenerate: bool,
}

impl std::fmt::Display for Summary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.4} ± {:.4}", self.mean, self.std)
    }
}

/// Welford accumulation; `n - 1` denominator.
pub fn aggregate_runs(values: &[f64]) -> Result<Summary> {
    if values.is_empty() {
        return Err(Error::Input("no runs to aggregate".into()));
    }
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for (i, &v) in values.iter().enumerate() {
        let delta = v - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (v - mean);
    }
    let n = values.len();
    let (std, degenerate) = if n < 2 {
        (0.0, true)
    } else {
        ((m2 / (n - 1) as f64).sqrt(), false)
    };
    Ok(Summary {
        mean,
        std,
        n,
        degenerate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub accuracy: Summary,
    pub precision: Summary,
    pub recall: Summary,
    pub f1: Summary,
}

impl ReportSummary {
    pub fn values(&self) -> [Summary; 4] {
        [self.accuracy, self.precision, self.recall, self.f1]
    }
}

pub fn summarize_reports(reports: &[ClassificationReport]) -> Result<ReportSummary> {
    let column = |f: fn(&ClassificationReport) -> f64| aggregate_runs(&reports.iter().map(f).collect::<Vec<_>>());
    Ok(ReportSummary {
        accuracy: column(|r| r.accuracy)?,
        precision: column(|r| r.precision)?,
        recall: column(|r| r.recall)?,
        f1: column(|r| r.f1)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let y = [0, 1, 2, 2, 1];
        let r = classify_metrics(&y, &y, 3).unwrap();
        assert_eq!(r.values(), [1.0; 4]);
    }

    #[test]
    fn binary_hand_count() {
        let r = classify_metrics(&[0, 0, 1, 1], &[0, 1, 1, 1], 2).unwrap();
        assert_eq!(r.accuracy, 0.75);
        assert!((r.precision - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(r.recall, 0.75);
        // F1 per class: 2/3 and 4/5
        assert!((r.f1 - (2.0 / 3.0 + 0.8) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn constant_predictor() {
        let r = classify_metrics(&[0, 1, 0, 1], &[1, 1, 1, 1], 2).unwrap();
        assert_eq!(r.accuracy, 0.5);
        assert_eq!(r.recall, 0.5);
        assert_eq!(r.precision, 0.25);
    }

    #[test]
    fn weighted_averaging() {
        let r = classify_metrics_with(&[0, 0, 0, 1], &[0, 0, 1, 1], 2, Averaging::Weighted).unwrap();
        // recall per class 2/3 and 1, supports 3 and 1
        assert!((r.recall - (0.75 * 2.0 / 3.0 + 0.25)).abs() < 1e-15);
        assert_eq!(r.recall, r.accuracy);
    }

    #[test]
    fn metric_errors() {
        assert!(matches!(classify_metrics(&[0, 1], &[0], 2), Err(Error::Input(_))));
        assert!(matches!(classify_metrics(&[0, 2], &[0, 1], 2), Err(Error::Input(_))));
    }

    #[test]
    fn wilcoxon_identical_samples() {
        let a = [0.5, 0.6, 0.7];
        let out = wilcoxon_signed_rank(&a, &a, DEFAULT_ALPHA).unwrap();
        assert_eq!(out.n_effective, 0);
        assert_eq!(out.p_value, 1.0);
        assert!(!out.significant);
        assert!(out.degenerate());
    }

    #[test]
    fn wilcoxon_constant_shift_of_six() {
        let b = [0.1, 0.4, 0.2, 0.9, 0.3, 0.5];
        let a: Vec<f64> = b.iter().map(|v| v + 1.0).collect();
        let out = wilcoxon_signed_rank(&a, &b, DEFAULT_ALPHA).unwrap();
        assert_eq!(out.statistic, 0.0);
        assert_eq!(out.n_effective, 6);
        assert_eq!(out.p_value, 2.0 / 64.0);
        assert!(out.significant);
    }

    #[test]
    fn wilcoxon_tied_pair() {
        let out = wilcoxon_signed_rank(&[1.0, 0.0], &[0.0, 1.0], DEFAULT_ALPHA).unwrap();
        assert_eq!(out.statistic, 1.5);
        assert_eq!(out.p_value, 1.0);
    }

    #[test]
    fn wilcoxon_normal_branch() {
        let b = vec![0.0; 40];
        let a: Vec<f64> = (1..=40).map(|i| i as f64).collect();
        let out = wilcoxon_signed_rank(&a, &b, DEFAULT_ALPHA).unwrap();
        assert_eq!(out.method, PValueMethod::Normal);
        assert!(out.p_value < 1e-6);
        // W = 0 against mean 410 and sd sqrt(5535): z = 409.5 / 74.397..
        let z: f64 = 409.5 / (40.0f64 * 41.0 * 81.0 / 24.0).sqrt();
        assert!((out.p_value - erfc(z / std::f64::consts::SQRT_2)).abs() < 1e-15);
    }

    #[test]
    fn wilcoxon_errors() {
        assert!(matches!(wilcoxon_signed_rank(&[1.0], &[1.0, 2.0], 0.05), Err(Error::Pairing(_))));
        assert!(wilcoxon_signed_rank(&[], &[], 0.05).is_err());
    }

    #[test]
    fn average_ranks_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn aggregate_examples() {
        let s = aggregate_runs(&[0.5, 0.5, 0.5]).unwrap();
        assert_eq!((s.mean, s.std), (0.5, 0.0));
        let s = aggregate_runs(&[0.0, 1.0]).unwrap();
        assert_eq!(s.mean, 0.5);
        assert!((s.std - 0.5f64.sqrt()).abs() < 1e-15);
        let s = aggregate_runs(&[0.7]).unwrap();
        assert!(s.degenerate && s.std == 0.0);
    }
}
