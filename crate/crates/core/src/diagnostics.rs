//! Curve-shape checks: trend slopes and monotone fits over bin sequences.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SlopeFit {
    pub n: usize,
    pub slope: f64,
    pub intercept: f64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl SlopeFit {
    pub fn ci_contains_zero(&self) -> bool {
        self.ci_low <= 0.0 && 0.0 <= self.ci_high
    }
}

/// Ordinary least-squares slope of `y` against its index with a two-sided
/// `level` confidence interval. Needs at least three points.
pub fn slope_vs_index(y: &[f64], level: f64) -> Option<SlopeFit> {
    let n = y.len();
    if n < 3 || !(0.0..1.0).contains(&level) {
        return None;
    }
    let nf = n as f64;
    let x_mean = (nf - 1.0) / 2.0;
    let y_mean = y.iter().sum::<f64>() / nf;
    let sxx: f64 = (0..n).map(|i| (i as f64 - x_mean).powi(2)).sum();
    let sxy: f64 = y.iter().enumerate().map(|(i, v)| (i as f64 - x_mean) * (v - y_mean)).sum();
    let slope = sxy / sxx;
    let intercept = y_mean - slope * x_mean;
    let ssr: f64 = y
        .iter()
        .enumerate()
        .map(|(i, v)| (v - intercept - slope * i as f64).powi(2))
        .sum();
    let std_error = (ssr / (nf - 2.0) / sxx).sqrt();
    let t = StudentsT::new(0.0, 1.0, nf - 2.0)
        .expect("degrees of freedom are positive")
        .inverse_cdf(0.5 + level / 2.0);
    Some(SlopeFit {
        n,
        slope,
        intercept,
        std_error,
        ci_low: slope - t * std_error,
        ci_high: slope + t * std_error,
    })
}

/// Weighted least-squares non-decreasing fit (pool adjacent violators).
pub fn isotonic_increasing(y: &[f64], w: &[f64]) -> Vec<f64> {
    assert_eq!(y.len(), w.len(), "values and weights must align");
    // blocks of (weighted mean, total weight, length)
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(y.len());
    for (&v, &wt) in y.iter().zip(w) {
        blocks.push((v, wt, 1));
        while blocks.len() > 1 {
            let (m2, w2, l2) = blocks[blocks.len() - 1];
            let (m1, w1, l1) = blocks[blocks.len() - 2];
            if m1 <= m2 {
                break;
            }
            blocks.truncate(blocks.len() - 2);
            let wsum = w1 + w2;
            let mean = if wsum > 0.0 { (m1 * w1 + m2 * w2) / wsum } else { (m1 + m2) / 2.0 };
            blocks.push((mean, wsum, l1 + l2));
        }
    }
    blocks
        .into_iter()
        .flat_map(|(m, _, l)| std::iter::repeat(m).take(l))
        .collect()
}

pub fn isotonic_decreasing(y: &[f64], w: &[f64]) -> Vec<f64> {
    let neg: Vec<f64> = y.iter().map(|v| -v).collect();
    isotonic_increasing(&neg, w).into_iter().map(|v| -v).collect()
}

fn weighted_sse(y: &[f64], fit: &[f64], w: &[f64]) -> f64 {
    y.iter().zip(fit).zip(w).map(|((a, b), wt)| wt * (a - b).powi(2)).sum()
}

/// How well a sequence is described by a non-decreasing versus a
/// non-increasing step function.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonotoneComparison {
    pub increasing_fit: Vec<f64>,
    pub increasing_sse: f64,
    pub decreasing_sse: f64,
}

impl MonotoneComparison {
    /// The non-decreasing fit is strictly better and actually rises.
    pub fn favours_increasing(&self) -> bool {
        let rises = match (self.increasing_fit.first(), self.increasing_fit.last()) {
            (Some(a), Some(b)) => b > a,
            _ => false,
        };
        rises && self.increasing_sse < self.decreasing_sse
    }
}

pub fn compare_monotone(y: &[f64], w: &[f64]) -> MonotoneComparison {
    let inc = isotonic_increasing(y, w);
    let dec = isotonic_decreasing(y, w);
    MonotoneComparison {
        increasing_sse: weighted_sse(y, &inc, w),
        decreasing_sse: weighted_sse(y, &dec, w),
        increasing_fit: inc,
    }
}

/// Score at which test starts to beat control: the mean score of the first
/// bin whose non-decreasing fit of `test - control` is positive.
pub fn crossover_score(mean_scores: &[f64], diffs: &[f64], weights: &[f64]) -> Option<f64> {
    assert_eq!(mean_scores.len(), diffs.len(), "scores and differences must align");
    let fit = isotonic_increasing(diffs, weights);
    fit.iter().position(|&v| v > 0.0).map(|i| mean_scores[i])
}
