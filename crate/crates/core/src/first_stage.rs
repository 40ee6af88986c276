//! Treatment-model regressions: least squares for the residual-inclusion
//! first stage and logistic regression for propensity weights.

use nalgebra::{DMatrix, DVector};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::util::{cholesky, cholesky_solve, max_abs};

/// Least-squares fit of treatment on an intercept plus regressors.
#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    /// Intercept first, then one coefficient per regressor column.
    pub alpha: Vec<f64>,
    pub fitted: Vec<f64>,
    /// `treatment - fitted`.
    pub residuals: Vec<f64>,
    /// Residual variance with `n - p` degrees of freedom.
    pub sigma2: f64,
    pub r_squared: f64,
}

/// Which dataset columns enter the first stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FirstStageRegressors {
    pub instrument: bool,
    pub covariates: bool,
}

impl Default for FirstStageRegressors {
    fn default() -> Self {
        FirstStageRegressors {
            instrument: true,
            covariates: true,
        }
    }
}

/// Regressor matrix (no intercept) for the chosen column groups.
pub fn first_stage_design(data: &Dataset, regressors: FirstStageRegressors) -> DMatrix<f64> {
    let mut cols: Vec<Vec<f64>> = Vec::new();
    if regressors.instrument {
        cols.extend((0..data.n_instruments()).map(|j| data.instrument(j)));
    }
    if regressors.covariates {
        cols.extend((0..data.n_covariates()).map(|j| data.covariate(j)));
    }
    DMatrix::from_fn(data.len(), cols.len(), |i, j| cols[j][i])
}

/// Treatment regressed on `(1, W, Z)` by least squares.
pub fn ols_fit(data: &Dataset, regressors: FirstStageRegressors) -> Result<OlsFit> {
    ols(&first_stage_design(data, regressors), &data.treatment())
}

fn with_intercept(x: &DMatrix<f64>) -> DMatrix<f64> {
    x.clone().insert_column(0, 1.0)
}

/// Least squares with an intercept via column-pivoted Householder QR.
pub fn ols(x: &DMatrix<f64>, y: &[f64]) -> Result<OlsFit> {
    let n = y.len();
    if x.nrows() != n {
        return Err(Error::invalid("regressor rows do not match response length"));
    }
    let design = with_intercept(x);
    let p = design.ncols();
    if n <= p {
        return Err(Error::invalid(format!("least squares needs n > p (n = {n}, p = {p})")));
    }
    let qr = design.clone().col_piv_qr();
    let r = qr.r();
    let rmax = r[(0, 0)].abs();
    let tol = 1e-10 * rmax.max(f64::MIN_POSITIVE) * (n as f64).sqrt();
    if (0..p).any(|k| !(r[(k, k)].abs() > tol)) {
        return Err(Error::SingularDesign);
    }
    let yv = DVector::from_column_slice(y);
    let alpha = design
        .clone()
        .svd(true, true)
        .solve(&yv, 0.0)
        .map_err(|_| Error::SingularDesign)?;
    let fitted_v = &design * &alpha;
    let fitted: Vec<f64> = fitted_v.iter().copied().collect();
    let residuals: Vec<f64> = y.iter().zip(&fitted).map(|(a, b)| a - b).collect();
    let rss: f64 = residuals.iter().map(|r| r * r).sum();
    let mean = y.iter().sum::<f64>() / n as f64;
    let tss: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    Ok(OlsFit {
        alpha: alpha.iter().copied().collect(),
        fitted,
        residuals,
        sigma2: rss / (n - p) as f64,
        r_squared: if tss > 0.0 { 1.0 - rss / tss } else { 0.0 },
    })
}

/// Logistic regression of 0/1 labels on an intercept plus regressors.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit {
    /// Intercept first.
    pub gamma: Vec<f64>,
    pub propensity: Vec<f64>,
    pub loglik: f64,
    pub iterations: usize,
    pub gradient_max: f64,
}

/// Newton–Raphson on the Bernoulli log-likelihood.
pub fn logistic_fit(labels: &[bool], x: &DMatrix<f64>) -> Result<LogisticFit> {
    let n = labels.len();
    if x.nrows() != n {
        return Err(Error::invalid("regressor rows do not match label length"));
    }
    let n1 = labels.iter().filter(|&&l| l).count();
    if n1 == 0 || n1 == n {
        return Err(Error::invalid("logistic regression needs both classes present"));
    }
    let design = with_intercept(x);
    let p = design.ncols();
    let y: DVector<f64> = DVector::from_iterator(n, labels.iter().map(|&l| if l { 1.0 } else { 0.0 }));

    let evaluate = |g: &DVector<f64>| -> (f64, DVector<f64>, DMatrix<f64>, Vec<f64>) {
        let eta = &design * g;
        let mut ll = 0.0;
        let mut prob = Vec::with_capacity(n);
        let mut wx = design.clone();
        for i in 0..n {
            let e = eta[i];
            // log(1 + exp(e)) computed stably
            let softplus = if e > 0.0 { e + (-e).exp().ln_1p() } else { e.exp().ln_1p() };
            ll += y[i] * e - softplus;
            let pi = 1.0 / (1.0 + (-e).exp());
            prob.push(pi);
            let w = pi * (1.0 - pi);
            for j in 0..p {
                wx[(i, j)] *= w;
            }
        }
        let resid = &y - DVector::from_column_slice(&prob);
        let grad = design.transpose() * resid;
        let info = design.transpose() * wx;
        (ll, grad, info, prob)
    };

    let mut gamma = DVector::zeros(p);
    let (mut ll, mut grad, mut info, _) = evaluate(&gamma);
    let mut prob: Vec<f64>;
    let mut iterations = 0;
    let max_iter = 100;
    loop {
        let l = cholesky(&info).ok_or(Error::SingularDesign)?;
        let step = cholesky_solve(&l, &grad);
        iterations += 1;
        let mut scale = 1.0;
        let (ng, nll, ngrad, ninfo, nprob) = loop {
            let trial = &gamma + &step * scale;
            let (tll, tg, ti, tp) = evaluate(&trial);
            if tll >= ll - 1e-12 * ll.abs() || scale < 1e-10 {
                break (trial, tll, tg, ti, tp);
            }
            scale *= 0.5;
        };
        if let Some(j) = ng.iter().position(|v| v.abs() > 30.0) {
            return Err(Error::NonconvergenceSeparation { index: j });
        }
        let rel = (nll - ll).abs() / (ll.abs() + 1e-10);
        gamma = ng;
        ll = nll;
        grad = ngrad;
        info = ninfo;
        prob = nprob;
        if (rel < 1e-9 && max_abs(grad.as_slice()) < 1e-7) || max_abs(grad.as_slice()) < 1e-10 {
            break;
        }
        if iterations >= max_iter {
            return Err(Error::Nonconvergence { iterations });
        }
    }
    if prob.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
        return Err(Error::NonconvergenceSeparation { index: 0 });
    }
    // a flat likelihood with coefficients still taking large steps diverges
    if let Some(l) = cholesky(&info) {
        let next = cholesky_solve(&l, &grad);
        if let Some(j) = (0..p).find(|&j| next[j].abs() > 1e-3 * gamma[j].abs().max(1.0)) {
            return Err(Error::NonconvergenceSeparation { index: j });
        }
    }
    Ok(LogisticFit {
        gamma: gamma.iter().copied().collect(),
        propensity: prob,
        loglik: ll,
        iterations,
        gradient_max: max_abs(grad.as_slice()),
    })
}

/// Inverse-propensity weights, clipped at this value.
pub const IPW_CLIP: f64 = 50.0;

#[derive(Debug, Clone, PartialEq)]
pub struct IpwWeights {
    pub weights: Vec<f64>,
    pub n_clipped: usize,
}

/// `1/p` for treated and `1/(1-p)` for untreated records, clipped at
/// [`IPW_CLIP`].
pub fn ipw_weights(fit: &LogisticFit, labels: &[bool]) -> Result<IpwWeights> {
    ipw_from_propensity(&fit.propensity, labels)
}

pub fn ipw_from_propensity(propensity: &[f64], labels: &[bool]) -> Result<IpwWeights> {
    if propensity.len() != labels.len() {
        return Err(Error::invalid("propensity and label lengths differ"));
    }
    if propensity.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
        return Err(Error::invalid("propensities must lie strictly inside (0, 1)"));
    }
    let mut n_clipped = 0;
    let weights = propensity
        .iter()
        .zip(labels)
        .map(|(&p, &l)| {
            let w = if l { 1.0 / p } else { 1.0 / (1.0 - p) };
            if w > IPW_CLIP {
                n_clipped += 1;
                IPW_CLIP
            } else {
                w
            }
        })
        .collect();
    Ok(IpwWeights { weights, n_clipped })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_linear_fit() {
        let x = DMatrix::from_row_slice(5, 2, &[1.0, 0.0, 2.0, 1.0, 0.5, -1.0, 3.0, 2.0, -1.0, 0.3]);
        let y: Vec<f64> = (0..5).map(|i| 1.0 + 2.0 * x[(i, 0)] - 0.5 * x[(i, 1)]).collect();
        let fit = ols(&x, &y).unwrap();
        assert!(fit.residuals.iter().all(|r| r.abs() < 1e-12));
        assert!((fit.alpha[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn duplicated_column_is_singular() {
        let x = DMatrix::from_row_slice(5, 2, &[1.0, 1.0, 2.0, 2.0, 0.5, 0.5, 3.0, 3.0, -1.0, -1.0]);
        let y = [1.0, 2.0, 0.0, 4.0, 1.0];
        assert!(matches!(ols(&x, &y), Err(Error::SingularDesign)));
    }

    #[test]
    fn intercept_only_logistic() {
        let labels = [true, false, true, false, true, false];
        let fit = logistic_fit(&labels, &DMatrix::zeros(6, 0)).unwrap();
        assert!(fit.propensity.iter().all(|p| (p - 0.5).abs() < 1e-12));
        let w = ipw_weights(&fit, &labels).unwrap();
        assert!(w.weights.iter().all(|v| (v - 2.0).abs() < 1e-10));
    }

    #[test]
    fn single_class_rejected() {
        assert!(matches!(
            logistic_fit(&[true, true, true], &DMatrix::zeros(3, 0)),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn separation_detected() {
        let x = DMatrix::from_row_slice(6, 1, &[-3.0, -2.0, -1.0, 1.0, 2.0, 3.0]);
        let labels = [false, false, false, true, true, true];
        assert!(matches!(
            logistic_fit(&labels, &x),
            Err(Error::NonconvergenceSeparation { .. })
        ));
    }

    #[test]
    fn ipw_arithmetic_and_clipping() {
        let w = ipw_from_propensity(&[0.9, 0.9, 0.001], &[true, false, true]).unwrap();
        assert!((w.weights[0] - 1.0 / 0.9).abs() < 1e-15);
        assert!((w.weights[1] - 10.0).abs() < 1e-12);
        assert_eq!(w.weights[2], IPW_CLIP);
        assert_eq!(w.n_clipped, 1);
    }
}
