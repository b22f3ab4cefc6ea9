//! Paired significance testing of evaluation records.

use soupsr_core::metrics::{paired_differences, Metric, MetricRecord, SignificanceResult, Stars};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::Result;

/// Two-sided one-sample t-test of `d` against zero. All-zero differences
/// give `p = 1`; identical non-zero differences (zero variance) give `p = 0`.
pub fn paired_t_test(d: &[f64]) -> f64 {
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    if var == 0.0 {
        return if mean == 0.0 { 1.0 } else { 0.0 };
    }
    let t = mean / (var / n).sqrt();
    let dist = StudentsT::new(0.0, 1.0, n - 1.0).expect("n >= 2");
    (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0)
}

pub fn paired_significance(records: &[MetricRecord], metric: Metric, method_a: &str, method_b: &str, scale: f64) -> Result<SignificanceResult> {
    let d = paired_differences(records, metric, method_a, method_b, scale)?;
    let p = paired_t_test(&d);
    Ok(SignificanceResult {
        method_a: method_a.into(),
        method_b: method_b.into(),
        scale,
        metric,
        p_value: p,
        stars: Stars::from_p(p),
        n: d.len(),
        mean_difference: d.iter().sum::<f64>() / d.len() as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_differences() {
        assert_eq!(paired_t_test(&[0.0, 0.0, 0.0]), 1.0);
        assert_eq!(paired_t_test(&[1.0, 1.0, 1.0]), 0.0);
    }

    #[test]
    fn matches_reference_value() {
        // scipy.stats.ttest_1samp([1, 2, 3, 4, 6], 0): t = 3.71992, p = 0.0204759
        let p = paired_t_test(&[1.0, 2.0, 3.0, 4.0, 6.0]);
        assert!((p - 0.020475874420910676).abs() < 1e-9, "{p}");
        assert_eq!(Stars::from_p(p), Stars::One);
    }
}
