//! Cox proportional-hazards regression: partial likelihood with analytic
//! derivatives, Newton–Raphson fitting and Wald intervals.

use nalgebra::{DMatrix, DVector};

use crate::data::{Dataset, Design};
use crate::error::{Error, Result};
use crate::survival::RiskSetIndex;
use crate::util::{cholesky, cholesky_inverse, cholesky_solve, max_abs, normal_quantile, symmetrize};

/// Handling of tied event times.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Ties {
    #[default]
    Breslow,
    Efron,
}

/// Partial log-likelihood with its gradient and negative Hessian.
#[derive(Debug, Clone, PartialEq)]
pub struct CoxDerivatives {
    pub loglik: f64,
    pub gradient: DVector<f64>,
    pub neg_hessian: DMatrix<f64>,
}

/// Partial likelihood of a fixed design, pre-sorted by time.
///
/// Columns are centred internally. The partial likelihood is invariant to
/// column shifts, so values and derivatives are unchanged.
#[derive(Debug, Clone)]
pub struct CoxModel {
    index: RiskSetIndex,
    x: DMatrix<f64>,
    offset: Vec<f64>,
    ties: Ties,
}

impl CoxModel {
    pub fn new(data: &Dataset, design: &Design, offset: Option<&[f64]>, ties: Ties) -> Result<Self> {
        Self::from_parts(&data.times(), &data.events(), design, offset, ties)
    }

    pub(crate) fn from_parts(
        times: &[f64],
        events: &[bool],
        design: &Design,
        offset: Option<&[f64]>,
        ties: Ties,
    ) -> Result<Self> {
        let n = times.len();
        if design.nrows() != n {
            return Err(Error::invalid("design rows do not match dataset size"));
        }
        if let Some(o) = offset {
            if o.len() != n {
                return Err(Error::invalid("offset length does not match dataset size"));
            }
        }
        let index = RiskSetIndex::new(times, events);
        let p = design.ncols();
        let mut x = DMatrix::zeros(n, p);
        for j in 0..p {
            let col = design.matrix.column(j);
            let mean = col.mean();
            for (k, &i) in index.order().iter().enumerate() {
                x[(k, j)] = col[i] - mean;
            }
        }
        let offset = match offset {
            Some(o) => index.gather(o),
            None => vec![0.0; n],
        };
        Ok(CoxModel { index, x, offset, ties })
    }

    pub fn n_params(&self) -> usize {
        self.x.ncols()
    }

    pub fn index(&self) -> &RiskSetIndex {
        &self.index
    }

    pub fn evaluate(&self, beta: &[f64]) -> Result<CoxDerivatives> {
        let n = self.index.len();
        let p = self.n_params();
        if beta.len() != p {
            return Err(Error::invalid(format!("beta has length {}, design has {p} columns", beta.len())));
        }
        let beta = DVector::from_column_slice(beta);
        let eta: Vec<f64> = (0..n)
            .map(|k| self.x.row(k).transpose().dot(&beta) + self.offset[k])
            .collect();
        if eta.iter().any(|e| !e.is_finite()) {
            return Err(Error::NumericalOverflow);
        }
        let emax = eta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = eta.iter().map(|e| (e - emax).exp()).collect();

        let mut s0 = 0.0;
        let mut s1 = DVector::zeros(p);
        let mut s2 = DMatrix::zeros(p, p);
        let mut loglik = 0.0;
        let mut grad = DVector::zeros(p);
        let mut hess = DMatrix::zeros(p, p);
        let mut pos = n;

        for et in self.index.event_times().iter().rev() {
            while pos > et.start {
                pos -= 1;
                let xi = self.x.row(pos).transpose();
                s0 += w[pos];
                s1.axpy(w[pos], &xi, 1.0);
                s2.ger(w[pos], &xi, &xi, 1.0);
            }
            let d = et.n_events;
            let mut e0 = 0.0;
            let mut e1 = DVector::zeros(p);
            let mut e2 = DMatrix::zeros(p, p);
            for k in et.start..et.start + d {
                let xk = self.x.row(k).transpose();
                loglik += eta[k];
                grad += &xk;
                if self.ties == Ties::Efron {
                    e0 += w[k];
                    e1.axpy(w[k], &xk, 1.0);
                    e2.ger(w[k], &xk, &xk, 1.0);
                }
            }
            match self.ties {
                Ties::Breslow => {
                    let df = d as f64;
                    let mean = &s1 / s0;
                    loglik -= df * (s0.ln() + emax);
                    grad.axpy(-df, &mean, 1.0);
                    hess += (&s2 / s0 - &mean * mean.transpose()) * df;
                }
                Ties::Efron => {
                    for r in 0..d {
                        let f = r as f64 / d as f64;
                        let a0 = s0 - f * e0;
                        let a1 = &s1 - &e1 * f;
                        let a2 = &s2 - &e2 * f;
                        let mean = &a1 / a0;
                        loglik -= a0.ln() + emax;
                        grad -= &mean;
                        hess += &a2 / a0 - &mean * mean.transpose();
                    }
                }
            }
        }
        symmetrize(&mut hess);
        if !loglik.is_finite() {
            return Err(Error::NumericalOverflow);
        }
        Ok(CoxDerivatives {
            loglik,
            gradient: grad,
            neg_hessian: hess,
        })
    }
}

/// Partial log-likelihood, gradient and negative Hessian at `beta`.
///
/// `offset` enters the linear predictor with coefficient 1.
pub fn cox_loglik(
    data: &Dataset,
    design: &Design,
    beta: &[f64],
    offset: Option<&[f64]>,
    ties: Ties,
) -> Result<CoxDerivatives> {
    CoxModel::new(data, design, offset, ties)?.evaluate(beta)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoxOptions {
    pub ties: Ties,
    pub max_iter: usize,
    /// Relative change in log-likelihood that ends the iteration.
    pub rel_tol: f64,
    /// Gradient max-norm that ends the iteration.
    pub grad_tol: f64,
    /// Coefficients beyond this magnitude signal a monotone likelihood.
    pub divergence_bound: f64,
}

impl Default for CoxOptions {
    fn default() -> Self {
        CoxOptions {
            ties: Ties::Breslow,
            max_iter: 100,
            rel_tol: 1e-9,
            grad_tol: 1e-6,
            divergence_bound: 50.0,
        }
    }
}

/// A converged Cox fit.
#[derive(Debug, Clone, PartialEq)]
pub struct CoxFit {
    pub names: Vec<String>,
    pub beta: Vec<f64>,
    /// Inverse of the negative Hessian at the optimum.
    pub covariance: DMatrix<f64>,
    pub loglik: f64,
    /// Partial log-likelihood at `beta = 0`.
    pub loglik_null: f64,
    pub iterations: usize,
    pub converged: bool,
    pub gradient_max: f64,
}

impl CoxFit {
    pub fn std_error(&self, index: usize) -> f64 {
        self.covariance[(index, index)].max(0.0).sqrt()
    }

    pub fn wald_ci(&self, index: usize, level: f64) -> Result<(f64, f64)> {
        wald_ci(self, index, level)
    }

    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.beta[i])
    }
}

/// `beta ± z_{(1+level)/2} * se` on the log-hazard-ratio scale.
pub fn wald_ci(fit: &CoxFit, index: usize, level: f64) -> Result<(f64, f64)> {
    if !fit.converged {
        return Err(Error::invalid("Wald interval requested for a nonconverged fit"));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid("confidence level must lie in (0, 1)"));
    }
    if index >= fit.beta.len() {
        return Err(Error::invalid(format!("coefficient index {index} out of range")));
    }
    let z = normal_quantile(0.5 * (1.0 + level));
    let half = z * fit.std_error(index);
    Ok((fit.beta[index] - half, fit.beta[index] + half))
}

/// Newton–Raphson maximisation of the partial likelihood from `beta = 0`
/// with step-halving.
pub fn cox_fit(data: &Dataset, design: &Design, offset: Option<&[f64]>, opts: &CoxOptions) -> Result<CoxFit> {
    data.require_event()?;
    let model = CoxModel::new(data, design, offset, opts.ties)?;
    fit_model(&model, design.names.clone(), opts)
}

/// Cox fit on the dataset's own columns: treatment (optional) and covariates.
pub fn cox_fit_dataset(data: &Dataset, offset: Option<&[f64]>, include_treatment: bool) -> Result<CoxFit> {
    let design = Design::from_dataset(data, include_treatment);
    cox_fit(data, &design, offset, &CoxOptions::default())
}

pub(crate) fn fit_model(model: &CoxModel, names: Vec<String>, opts: &CoxOptions) -> Result<CoxFit> {
    let p = model.n_params();
    if p == 0 {
        return Err(Error::invalid("Cox model needs at least one column"));
    }
    let mut beta = vec![0.0; p];
    let mut cur = model.evaluate(&beta)?;
    let loglik_null = cur.loglik;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < opts.max_iter {
        if max_abs(cur.gradient.as_slice()) < opts.grad_tol {
            converged = true;
            break;
        }
        let l = cholesky(&cur.neg_hessian).ok_or(Error::SingularInformation)?;
        let step = cholesky_solve(&l, &cur.gradient);
        iterations += 1;

        let mut scale = 1.0;
        let (next_beta, next) = loop {
            let trial: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + scale * s).collect();
            match model.evaluate(&trial) {
                Ok(ev) if ev.loglik >= cur.loglik - 1e-12 * cur.loglik.abs() => break (trial, ev),
                Ok(_) | Err(Error::NumericalOverflow) => {
                    scale *= 0.5;
                    if scale < 1e-10 {
                        // no ascent along the Newton direction: at the optimum to rounding
                        break (beta.clone(), cur.clone());
                    }
                }
                Err(e) => return Err(e),
            }
        };
        if let Some(j) = next_beta.iter().position(|b| b.abs() > opts.divergence_bound) {
            return Err(Error::NonconvergenceMonotone { index: j });
        }
        let rel = (next.loglik - cur.loglik).abs() / (cur.loglik.abs() + 1e-10);
        beta = next_beta;
        cur = next;
        if rel < opts.rel_tol || scale < 1e-10 {
            converged = true;
            break;
        }
    }

    let l = cholesky(&cur.neg_hessian).ok_or(Error::SingularInformation)?;
    if !converged {
        return Err(Error::Nonconvergence { iterations });
    }
    // A coefficient still moving by a large step after the likelihood has
    // flattened is heading to infinity.
    let next_step = cholesky_solve(&l, &cur.gradient);
    for j in 0..p {
        if next_step[j].abs() > 1e-3 * beta[j].abs().max(1.0) {
            return Err(Error::NonconvergenceMonotone { index: j });
        }
    }
    let covariance = cholesky_inverse(&l);
    Ok(CoxFit {
        names,
        beta,
        covariance,
        loglik: cur.loglik,
        loglik_null,
        iterations,
        converged,
        gradient_max: max_abs(cur.gradient.as_slice()),
    })
}
