use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::survival::risk_set::RiskSetIndex;
use crate::util::normal_quantile;

/// Product-limit survival curve with pointwise 95% bands.
#[derive(Debug, Clone, PartialEq)]
pub struct KaplanMeierCurve {
    pub times: Vec<f64>,
    pub survival: Vec<f64>,
    pub at_risk: Vec<f64>,
    pub events: Vec<f64>,
    pub ci_lower: Vec<f64>,
    pub ci_upper: Vec<f64>,
}

impl KaplanMeierCurve {
    /// Survival at time `t` (right-continuous step function).
    pub fn survival_at(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&s| s <= t);
        if k == 0 {
            1.0
        } else {
            self.survival[k - 1]
        }
    }
}

/// Kaplan–Meier estimate; with `weights`, weighted counts replace raw
/// counts at every event time.
///
/// Bands use Greenwood's variance on the log scale:
/// `S * exp(±z * sqrt(sum d / (n (n - d))))`, clipped to `[0, 1]`.
pub fn kaplan_meier(times: &[f64], events: &[bool], weights: Option<&[f64]>) -> Result<KaplanMeierCurve> {
    if times.is_empty() {
        return Err(Error::invalid("Kaplan-Meier needs at least one record"));
    }
    if times.len() != events.len() {
        return Err(Error::invalid("times/events length mismatch"));
    }
    if times.iter().any(|t| !t.is_finite() || *t < 0.0) {
        return Err(Error::invalid("times must be finite and >= 0"));
    }
    if let Some(w) = weights {
        if w.len() != times.len() {
            return Err(Error::invalid("weights length mismatch"));
        }
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("weights must be finite and non-negative"));
        }
        if w.iter().all(|&v| v == 0.0) {
            return Err(Error::invalid("all weights are zero"));
        }
        if w.iter().any(|&v| v == 0.0) {
            return Err(Error::invalid("weights must be strictly positive"));
        }
    }

    let idx = RiskSetIndex::new(times, events);
    let w_sorted: Vec<f64> = match weights {
        Some(w) => idx.gather(w),
        None => vec![1.0; times.len()],
    };
    let z = normal_quantile(0.975);

    // suffix sums of weight give the (weighted) number at risk
    let n = idx.len();
    let mut suffix = vec![0.0; n + 1];
    for k in (0..n).rev() {
        suffix[k] = suffix[k + 1] + w_sorted[k];
    }

    let m = idx.event_times().len();
    let mut curve = KaplanMeierCurve {
        times: Vec::with_capacity(m),
        survival: Vec::with_capacity(m),
        at_risk: Vec::with_capacity(m),
        events: Vec::with_capacity(m),
        ci_lower: Vec::with_capacity(m),
        ci_upper: Vec::with_capacity(m),
    };
    let mut s = 1.0;
    let mut greenwood = 0.0;
    for et in idx.event_times() {
        let at_risk = suffix[et.start];
        let d: f64 = w_sorted[et.start..et.start + et.n_events].iter().sum();
        s *= 1.0 - d / at_risk;
        if d < at_risk {
            greenwood += d / (at_risk * (at_risk - d));
        } else {
            greenwood = f64::INFINITY;
        }
        let (lo, hi) = if s <= 0.0 {
            s = 0.0;
            (0.0, 0.0)
        } else {
            let half = z * greenwood.sqrt();
            ((s * (-half).exp()).clamp(0.0, 1.0), (s * half.exp()).clamp(0.0, 1.0))
        };
        curve.times.push(et.time);
        curve.survival.push(s);
        curve.at_risk.push(at_risk);
        curve.events.push(d);
        curve.ci_lower.push(lo.min(s));
        curve.ci_upper.push(hi.max(s));
    }
    Ok(curve)
}

/// Kaplan–Meier curve of a dataset, optionally weighted by record weights.
pub fn km_fit(data: &Dataset, use_weights: bool) -> Result<KaplanMeierCurve> {
    let w = data.weights();
    kaplan_meier(&data.times(), &data.events(), use_weights.then_some(w.as_slice()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_censoring_is_empirical_survival() {
        let c = kaplan_meier(&[1.0, 2.0, 3.0, 4.0], &[true; 4], None).unwrap();
        assert_eq!(c.times, vec![1.0, 2.0, 3.0, 4.0]);
        for (a, b) in c.survival.iter().zip([0.75, 0.5, 0.25, 0.0]) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(c.ci_lower[3], 0.0);
        assert_eq!(c.ci_upper[3], 0.0);
    }

    #[test]
    fn all_censored() {
        let c = kaplan_meier(&[1.0, 2.0, 3.0, 4.0], &[false; 4], None).unwrap();
        assert!(c.times.is_empty());
        assert_eq!(c.survival_at(10.0), 1.0);
    }

    #[test]
    fn errors() {
        assert!(kaplan_meier(&[], &[], None).is_err());
        let e = kaplan_meier(&[1.0, 2.0], &[true, true], Some(&[0.0, 0.0])).unwrap_err();
        assert!(matches!(e, Error::InvalidInput(_)));
    }

    #[test]
    fn greenwood_band_first_step() {
        // n = 4, d = 1: var(log S) = 1 / (4 * 3)
        let c = kaplan_meier(&[1.0, 2.0, 3.0, 4.0], &[true, false, false, false], None).unwrap();
        let half = 1.959963984540054 * (1.0f64 / 12.0).sqrt();
        assert!((c.ci_lower[0] - 0.75 * (-half).exp()).abs() < 1e-12);
        assert_eq!(c.ci_upper[0], 1.0);
    }
}
