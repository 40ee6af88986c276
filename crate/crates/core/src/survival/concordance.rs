use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::util::normal_quantile;

/// `P{V1 > V0}` with a 95% normal-approximation interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Concordance {
    pub estimate: f64,
    pub std_error: f64,
    pub lower: f64,
    pub upper: f64,
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    v
}

/// Placement of `x` among `sorted`: count below plus half the ties.
fn placement(x: f64, sorted: &[f64]) -> f64 {
    let below = sorted.partition_point(|&v| v < x);
    let not_above = sorted.partition_point(|&v| v <= x);
    below as f64 + 0.5 * (not_above - below) as f64
}

/// Mann–Whitney probability that a draw from group 1 exceeds a draw from
/// group 0 (ties count 1/2).
///
/// The variance is the two-sample U-statistic estimator built from the
/// placement values of each group with `m - 1` / `n - 1` denominators;
/// the interval is `estimate ± z * se` clipped to `[0, 1]`.
pub fn concordance_probability(group1: &[f64], group0: &[f64]) -> Result<Concordance> {
    if group1.is_empty() || group0.is_empty() {
        return Err(Error::invalid("concordance needs both groups nonempty"));
    }
    if group1.iter().chain(group0).any(|v| !v.is_finite()) {
        return Err(Error::invalid("concordance values must be finite"));
    }
    let m = group1.len() as f64;
    let n = group0.len() as f64;
    let s1 = sorted(group1);
    let s0 = sorted(group0);

    let v10: Vec<f64> = group1.iter().map(|&x| placement(x, &s0) / n).collect();
    let v01: Vec<f64> = group0.iter().map(|&y| (m - placement(y, &s1)) / m).collect();
    let estimate = v10.iter().sum::<f64>() / m;

    let var_of = |v: &[f64]| -> f64 {
        if v.len() < 2 {
            return 0.0;
        }
        let ss: f64 = v.iter().map(|x| (x - estimate).powi(2)).sum();
        ss / (v.len() as f64 - 1.0)
    };
    let variance = var_of(&v10) / m + var_of(&v01) / n;
    let std_error = variance.sqrt();
    let z = normal_quantile(0.975);
    Ok(Concordance {
        estimate,
        std_error,
        lower: (estimate - z * std_error).max(0.0),
        upper: (estimate + z * std_error).min(1.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_groups() {
        let v = [1.0, 2.0, 2.0, 5.0];
        let c = concordance_probability(&v, &v).unwrap();
        assert!((c.estimate - 0.5).abs() < 1e-15);
    }

    #[test]
    fn complete_separation() {
        let c = concordance_probability(&[3.0, 4.0], &[1.0, 2.0]).unwrap();
        assert_eq!(c.estimate, 1.0);
        assert_eq!(c.upper, 1.0);
    }

    #[test]
    fn six_pairs() {
        // pairs (1,2)(1,4)(3,2)(3,4)(5,2)(5,4): wins at (3,2)(5,2)(5,4) -> 3/6
        let c = concordance_probability(&[1.0, 3.0, 5.0], &[2.0, 4.0]).unwrap();
        assert!((c.estimate - 0.5).abs() < 1e-15);
        assert!(c.lower <= c.estimate && c.estimate <= c.upper);
    }

    #[test]
    fn empty_group() {
        assert!(matches!(
            concordance_probability(&[], &[1.0]),
            Err(Error::InvalidInput(_))
        ));
    }
}
