//! Cox regression with an individual (one-per-subject) frailty
//! `z_i = exp(b_i)`, fitted by penalised partial likelihood.
//!
//! For a fixed frailty variance `theta` the inner problem maximises
//! `PL(beta, b) + penalty(b; theta)` jointly over `(beta, b)` by Newton's
//! method. The `b`-block of the Hessian is never formed densely: see
//! [`structure`]. The outer problem picks `theta` by maximising a Laplace
//! approximation to the marginal likelihood with `beta` profiled out.

mod structure;

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use statrs::function::gamma::ln_gamma;

use crate::cox::{cox_fit, CoxFit, CoxOptions, Ties};
use crate::data::{Dataset, Design};
use crate::error::{Error, Result};
use crate::survival::RiskSetIndex;
use crate::util::{cholesky, cholesky_inverse, cholesky_solve, max_abs};

use structure::{evaluate_eta, EtaInformation};

/// Coarse default grid for the frailty-variance search.
pub const DEFAULT_THETA_GRID: [f64; 7] = [0.01, 0.05, 0.1, 0.25, 0.5, 1.0, 2.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FrailtyFamily {
    None,
    /// Log-normal frailty: `b ~ N(0, theta)`.
    Gaussian,
    /// Mean-one Gamma frailty with variance `theta`.
    Gamma,
}

impl FrailtyFamily {
    pub fn label(&self) -> &'static str {
        match self {
            FrailtyFamily::None => "none",
            FrailtyFamily::Gaussian => "gaussian",
            FrailtyFamily::Gamma => "gamma",
        }
    }

    /// Penalty added to the partial likelihood for one frailty value.
    /// Both families vanish at `b = 0`.
    fn penalty(&self, b: f64, theta: f64) -> f64 {
        match self {
            FrailtyFamily::Gaussian => -b * b / (2.0 * theta),
            FrailtyFamily::Gamma => (b - b.exp() + 1.0) / theta,
            FrailtyFamily::None => 0.0,
        }
    }

    fn penalty_gradient(&self, b: f64, theta: f64) -> f64 {
        match self {
            FrailtyFamily::Gaussian => -b / theta,
            FrailtyFamily::Gamma => (1.0 - b.exp()) / theta,
            FrailtyFamily::None => 0.0,
        }
    }

    /// Negative second derivative of the penalty.
    fn penalty_curvature(&self, b: f64, theta: f64) -> f64 {
        match self {
            FrailtyFamily::Gaussian => 1.0 / theta,
            FrailtyFamily::Gamma => b.exp() / theta,
            FrailtyFamily::None => 0.0,
        }
    }

    /// Log density of `b = log z`.
    fn log_density(&self, b: f64, theta: f64) -> f64 {
        match self {
            FrailtyFamily::Gaussian => -b * b / (2.0 * theta) - 0.5 * (2.0 * PI * theta).ln(),
            FrailtyFamily::Gamma => {
                let k = 1.0 / theta;
                k * (b - b.exp()) - k * theta.ln() - ln_gamma(k)
            }
            FrailtyFamily::None => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VariancePolicy {
    /// Estimate `theta` by the approximate profile marginal likelihood.
    Profile,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrailtySpec {
    pub family: FrailtyFamily,
    pub variance: VariancePolicy,
    /// Ascending, positive grid searched before golden-section refinement.
    pub theta_grid: Vec<f64>,
}

impl Default for FrailtySpec {
    fn default() -> Self {
        FrailtySpec::profile(FrailtyFamily::Gaussian)
    }
}

impl FrailtySpec {
    pub fn profile(family: FrailtyFamily) -> Self {
        FrailtySpec {
            family,
            variance: VariancePolicy::Profile,
            theta_grid: DEFAULT_THETA_GRID.to_vec(),
        }
    }

    pub fn fixed(family: FrailtyFamily, theta: f64) -> Self {
        FrailtySpec {
            family,
            variance: VariancePolicy::Fixed(theta),
            theta_grid: DEFAULT_THETA_GRID.to_vec(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.family == FrailtyFamily::None {
            return Err(Error::invalid("frailty fit requires a Gaussian or Gamma family"));
        }
        match self.variance {
            VariancePolicy::Fixed(t) if !(t >= 0.0 && t.is_finite()) => {
                Err(Error::invalid("fixed frailty variance must be finite and >= 0"))
            }
            VariancePolicy::Profile => {
                if self.theta_grid.is_empty() {
                    return Err(Error::invalid("theta grid is empty"));
                }
                if self.theta_grid.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
                    return Err(Error::invalid("theta grid values must be positive"));
                }
                if self.theta_grid.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::invalid("theta grid must be strictly ascending"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// Inner-loop settings for the penalised Newton iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerOptions {
    pub max_iter: usize,
    pub rel_tol: f64,
    pub divergence_bound: f64,
}

impl Default for InnerOptions {
    fn default() -> Self {
        InnerOptions {
            max_iter: 200,
            rel_tol: 1e-8,
            divergence_bound: 50.0,
        }
    }
}

/// Result of a frailty fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FrailtyCoxFit {
    pub family: FrailtyFamily,
    /// Fixed effects; covariance is the `beta` block of the inverse
    /// penalised information.
    pub fixed: CoxFit,
    /// Empirical Bayes log-frailties `b_i`, in dataset order.
    pub frailty_values: Vec<f64>,
    pub theta_hat: f64,
    /// `(theta, approximate log marginal likelihood)` for every evaluation,
    /// in evaluation order.
    pub profile_loglik: Vec<(f64, f64)>,
    /// Penalised objective at the optimum.
    pub penalized_loglik: f64,
    /// Penalised objective after every accepted inner step of the final fit.
    pub inner_trace: Vec<f64>,
    /// The outer objective peaked at the upper end of the grid.
    pub boundary_theta: bool,
}

/// Negative Hessian of the `b`-block, kept in structured form.
#[derive(Debug, Clone)]
pub struct FrailtyInformation {
    order: Vec<usize>,
    info: EtaInformation,
    penalty_curvature: Vec<f64>,
}

impl FrailtyInformation {
    /// Dense matrix in dataset order.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let sorted = self.info.dense();
        let n = self.order.len();
        let mut out = DMatrix::zeros(n, n);
        for (a, &i) in self.order.iter().enumerate() {
            for (b, &j) in self.order.iter().enumerate() {
                out[(i, j)] = sorted[(a, b)];
            }
            out[(i, i)] += self.penalty_curvature[a];
        }
        out
    }

    /// Diagonal in dataset order.
    pub fn diagonal(&self) -> Vec<f64> {
        let d = self.info.diagonal();
        let mut out = vec![0.0; d.len()];
        for (a, &i) in self.order.iter().enumerate() {
            out[i] = d[a] + self.penalty_curvature[a];
        }
        out
    }
}

/// Value and derivatives of the penalised partial log-likelihood.
/// Hessian blocks are negated (information convention).
#[derive(Debug, Clone)]
pub struct PenalizedDerivatives {
    pub value: f64,
    pub loglik: f64,
    pub penalty: f64,
    pub gradient_beta: DVector<f64>,
    /// Dataset order.
    pub gradient_b: Vec<f64>,
    pub info_beta_beta: DMatrix<f64>,
    /// `p x n`, columns in dataset order.
    pub info_beta_b: DMatrix<f64>,
    pub info_b_b: FrailtyInformation,
}

/// Penalised partial likelihood of a design, sorted by time.
#[derive(Debug, Clone)]
struct PenalizedModel {
    index: RiskSetIndex,
    x: DMatrix<f64>,
    offset: Vec<f64>,
    family: FrailtyFamily,
}

/// Everything needed for a Newton step, in sorted order.
struct Eval {
    value: f64,
    loglik: f64,
    grad_beta: DVector<f64>,
    grad_b: Vec<f64>,
    info: EtaInformation,
    curvature: Vec<f64>,
    /// `N X`, `n x p`.
    nx: DMatrix<f64>,
}

struct InnerFit {
    beta: Vec<f64>,
    b: Vec<f64>,
    value: f64,
    loglik: f64,
    covariance: DMatrix<f64>,
    log_det_bb: f64,
    gradient_max: f64,
    iterations: usize,
    trace: Vec<f64>,
}

impl PenalizedModel {
    fn new(data: &Dataset, design: &Design, offset: Option<&[f64]>, family: FrailtyFamily) -> Result<Self> {
        let n = data.len();
        if design.nrows() != n {
            return Err(Error::invalid("design rows do not match dataset size"));
        }
        let index = RiskSetIndex::new(&data.times(), &data.events());
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
            Some(o) if o.len() == n => index.gather(o),
            Some(_) => return Err(Error::invalid("offset length does not match dataset size")),
            None => vec![0.0; n],
        };
        Ok(PenalizedModel { index, x, offset, family })
    }

    fn n(&self) -> usize {
        self.index.len()
    }

    fn p(&self) -> usize {
        self.x.ncols()
    }

    fn evaluate(&self, beta: &[f64], b: &[f64], theta: f64) -> Result<Eval> {
        let n = self.n();
        let p = self.p();
        let beta_v = DVector::from_column_slice(beta);
        let xb = &self.x * &beta_v;
        let eta: Vec<f64> = (0..n).map(|k| xb[k] + b[k] + self.offset[k]).collect();
        let ev = evaluate_eta(&self.index, &eta)?;

        let penalty: f64 = b.iter().map(|&v| self.family.penalty(v, theta)).sum();
        let grad_b: Vec<f64> = (0..n)
            .map(|k| ev.gradient[k] + self.family.penalty_gradient(b[k], theta))
            .collect();
        let curvature: Vec<f64> = b.iter().map(|&v| self.family.penalty_curvature(v, theta)).collect();
        let grad_beta = self.x.transpose() * DVector::from_column_slice(&ev.gradient);

        let mut nx = DMatrix::zeros(n, p);
        for j in 0..p {
            let col: Vec<f64> = self.x.column(j).iter().copied().collect();
            nx.set_column(j, &DVector::from_vec(ev.info.matvec(&col)));
        }
        let value = ev.loglik + penalty;
        if !value.is_finite() {
            return Err(Error::NumericalOverflow);
        }
        Ok(Eval {
            value,
            loglik: ev.loglik,
            grad_beta,
            grad_b,
            info: ev.info,
            curvature,
            nx,
        })
    }

    /// Newton direction for the joint system and the `beta`-block of the
    /// inverse information.
    fn newton(&self, ev: &Eval) -> Result<(Vec<f64>, Vec<f64>, DMatrix<f64>, f64)> {
        let p = self.p();
        let factor = ev.info.factor(&ev.curvature).ok_or(Error::SingularInformation)?;
        let u = factor.solve(&ev.grad_b);
        let mut y = DMatrix::zeros(self.n(), p);
        for j in 0..p {
            let col: Vec<f64> = ev.nx.column(j).iter().copied().collect();
            y.set_column(j, &DVector::from_vec(factor.solve(&col)));
        }
        let a = self.x.transpose() * &ev.nx;
        let mut schur = a - ev.nx.transpose() * &y;
        crate::util::symmetrize(&mut schur);
        let (d_beta, cov) = if p > 0 {
            let l = cholesky(&schur).ok_or(Error::SingularInformation)?;
            let rhs = &ev.grad_beta - ev.nx.transpose() * DVector::from_column_slice(&u);
            (cholesky_solve(&l, &rhs), cholesky_inverse(&l))
        } else {
            (DVector::zeros(0), DMatrix::zeros(0, 0))
        };
        let yd = &y * &d_beta;
        let d_b: Vec<f64> = (0..self.n()).map(|k| u[k] - yd[k]).collect();
        Ok((d_beta.iter().copied().collect(), d_b, cov, factor.log_det()))
    }

    fn fit_at(&self, theta: f64, start_beta: &[f64], start_b: &[f64], opts: &InnerOptions) -> Result<InnerFit> {
        let mut beta = start_beta.to_vec();
        let mut b = start_b.to_vec();
        let mut cur = self.evaluate(&beta, &b, theta)?;
        let mut trace = vec![cur.value];
        let mut iterations = 0;

        loop {
            let (d_beta, d_b, cov, log_det) = self.newton(&cur)?;
            let gmax = max_abs(cur.grad_beta.as_slice()).max(max_abs(&cur.grad_b));
            if gmax < 1e-10 {
                return Ok(self.finish(beta, b, cur, cov, log_det, gmax, iterations, trace));
            }
            if iterations >= opts.max_iter {
                return Err(Error::Nonconvergence { iterations });
            }
            iterations += 1;

            let mut scale = 1.0;
            let accepted = loop {
                let tb: Vec<f64> = beta.iter().zip(&d_beta).map(|(v, d)| v + scale * d).collect();
                let tf: Vec<f64> = b.iter().zip(&d_b).map(|(v, d)| v + scale * d).collect();
                match self.evaluate(&tb, &tf, theta) {
                    Ok(ev) if ev.value >= cur.value - 1e-12 * cur.value.abs() => break Some((tb, tf, ev)),
                    Ok(_) | Err(Error::NumericalOverflow) => {
                        scale *= 0.5;
                        if scale < 1e-10 {
                            break None;
                        }
                    }
                    Err(e) => return Err(e),
                }
            };
            let Some((nb, nf, next)) = accepted else {
                // no ascent possible: optimum to rounding
                return Ok(self.finish(beta, b, cur, cov, log_det, gmax, iterations, trace));
            };
            if let Some(j) = nb.iter().position(|v| v.abs() > opts.divergence_bound) {
                return Err(Error::NonconvergenceMonotone { index: j });
            }
            let rel = (next.value - cur.value).abs() / (cur.value.abs() + 1e-10);
            beta = nb;
            b = nf;
            cur = next;
            trace.push(cur.value);
            let gnext = max_abs(cur.grad_beta.as_slice()).max(max_abs(&cur.grad_b));
            if rel < opts.rel_tol && gnext < 1e-7 {
                let (_, _, cov, log_det) = self.newton(&cur)?;
                return Ok(self.finish(beta, b, cur, cov, log_det, gnext, iterations, trace));
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn finish(
        &self,
        beta: Vec<f64>,
        b: Vec<f64>,
        ev: Eval,
        covariance: DMatrix<f64>,
        log_det_bb: f64,
        gradient_max: f64,
        iterations: usize,
        trace: Vec<f64>,
    ) -> InnerFit {
        InnerFit {
            beta,
            b,
            value: ev.value,
            loglik: ev.loglik,
            covariance,
            log_det_bb,
            gradient_max,
            iterations,
            trace,
        }
    }

    /// Outer criterion for `theta`. Gaussian: Laplace approximation to the
    /// marginal likelihood. Gamma: the penalised optimum plus the per-subject
    /// correction that turns it into the exact gamma-integrated likelihood,
    /// `lnG(k + d) - lnG(k) + k ln k - (k + d) ln(k + d) + d` with `k = 1/theta`.
    fn marginal(&self, fit: &InnerFit, theta: f64) -> f64 {
        match self.family {
            FrailtyFamily::Gamma => {
                let k = 1.0 / theta;
                let events = self.index.sorted_events();
                let correction = |d: f64| ln_gamma(k + d) - ln_gamma(k) + k * k.ln() - (k + d) * (k + d).ln() + d;
                let (c1, c0) = (correction(1.0), correction(0.0));
                let n1 = events.iter().filter(|&&e| e).count() as f64;
                fit.value + n1 * c1 + (self.n() as f64 - n1) * c0
            }
            _ => {
                let n = self.n() as f64;
                let log_f: f64 = fit.b.iter().map(|&v| self.family.log_density(v, theta)).sum();
                fit.loglik + log_f + 0.5 * n * (2.0 * PI).ln() - 0.5 * fit.log_det_bb
            }
        }
    }
}

/// Penalised partial log-likelihood at `(beta, b)` for variance `theta`,
/// with gradient and information blocks. Breslow ties.
pub fn penalized_loglik(
    data: &Dataset,
    design: &Design,
    beta: &[f64],
    b: &[f64],
    theta: f64,
    family: FrailtyFamily,
    offset: Option<&[f64]>,
) -> Result<PenalizedDerivatives> {
    if !(theta > 0.0) {
        return Err(Error::invalid("frailty variance must be > 0"));
    }
    if family == FrailtyFamily::None {
        return Err(Error::invalid("penalised likelihood needs a frailty family"));
    }
    if beta.len() != design.ncols() || b.len() != data.len() {
        return Err(Error::invalid("parameter lengths do not match the design"));
    }
    let model = PenalizedModel::new(data, design, offset, family)?;
    let b_sorted = model.index.gather(b);
    let ev = model.evaluate(beta, &b_sorted, theta)?;
    let order = model.index.order().to_vec();
    let mut info_beta_b = DMatrix::zeros(model.p(), model.n());
    for (k, &i) in order.iter().enumerate() {
        for j in 0..model.p() {
            info_beta_b[(j, i)] = ev.nx[(k, j)];
        }
    }
    Ok(PenalizedDerivatives {
        value: ev.value,
        loglik: ev.loglik,
        penalty: ev.value - ev.loglik,
        gradient_beta: ev.grad_beta.clone(),
        gradient_b: model.index.scatter(&ev.grad_b),
        info_beta_beta: model.x.transpose() * &ev.nx,
        info_beta_b,
        info_b_b: FrailtyInformation {
            order,
            info: ev.info,
            penalty_curvature: ev.curvature,
        },
    })
}

/// Cox model with an individual frailty on `design`.
///
/// `Fixed(0)` reproduces the plain Cox fit. Under `Profile`, `theta` is
/// chosen on the grid, refined by golden-section search between the best
/// grid point's neighbours (the lower neighbour of the first grid point is
/// 0), and compared against the no-frailty fit.
pub fn frailty_fit(data: &Dataset, design: &Design, offset: Option<&[f64]>, spec: &FrailtySpec) -> Result<FrailtyCoxFit> {
    frailty_fit_with(data, design, offset, spec, &InnerOptions::default())
}

pub fn frailty_fit_with(
    data: &Dataset,
    design: &Design,
    offset: Option<&[f64]>,
    spec: &FrailtySpec,
    opts: &InnerOptions,
) -> Result<FrailtyCoxFit> {
    spec.validate()?;
    data.require_event()?;
    if design.ncols() == 0 {
        return Err(Error::invalid("frailty model needs at least one fixed-effect column"));
    }
    let cox_opts = CoxOptions {
        ties: Ties::Breslow,
        ..CoxOptions::default()
    };
    let model = PenalizedModel::new(data, design, offset, spec.family)?;
    let p = model.p();
    let n = model.n();

    let without_frailty = |profile: Vec<(f64, f64)>| -> Result<FrailtyCoxFit> {
        let fixed = cox_fit(data, design, offset, &cox_opts)?;
        Ok(FrailtyCoxFit {
            family: spec.family,
            penalized_loglik: fixed.loglik,
            inner_trace: vec![fixed.loglik],
            fixed,
            frailty_values: vec![0.0; n],
            theta_hat: 0.0,
            profile_loglik: profile,
            boundary_theta: false,
        })
    };

    let finish = |theta: f64, fit: InnerFit, profile: Vec<(f64, f64)>, boundary: bool| -> Result<FrailtyCoxFit> {
        let loglik_null = model.evaluate(&vec![0.0; p], &vec![0.0; n], theta).map(|e| e.loglik)?;
        let fixed = CoxFit {
            names: design.names.clone(),
            beta: fit.beta,
            covariance: fit.covariance,
            loglik: fit.loglik,
            loglik_null,
            iterations: fit.iterations,
            converged: true,
            gradient_max: fit.gradient_max,
        };
        Ok(FrailtyCoxFit {
            family: spec.family,
            fixed,
            frailty_values: model.index.scatter(&fit.b),
            theta_hat: theta,
            profile_loglik: profile,
            penalized_loglik: fit.value,
            inner_trace: fit.trace,
            boundary_theta: boundary,
        })
    };

    match spec.variance {
        VariancePolicy::Fixed(theta) => {
            if theta == 0.0 {
                return without_frailty(Vec::new());
            }
            let fit = model.fit_at(theta, &vec![0.0; p], &vec![0.0; n], opts)?;
            let m = model.marginal(&fit, theta);
            finish(theta, fit, vec![(theta, m)], false)
        }
        VariancePolicy::Profile => {
            let mut profile = Vec::new();
            let mut start_beta = vec![0.0; p];
            let mut start_b = vec![0.0; n];
            let mut best: Option<(usize, f64, InnerFit)> = None;
            for (k, &theta) in spec.theta_grid.iter().enumerate() {
                let fit = model.fit_at(theta, &start_beta, &start_b, opts)?;
                let m = model.marginal(&fit, theta);
                profile.push((theta, m));
                start_beta.clone_from(&fit.beta);
                start_b.clone_from(&fit.b);
                if best.as_ref().map_or(true, |(_, bm, _)| m > *bm) {
                    best = Some((k, m, fit));
                }
            }
            let (k, mut best_m, mut best_fit) = best.expect("grid is nonempty");
            let grid = &spec.theta_grid;
            let mut best_theta = grid[k];

            if k + 1 == grid.len() {
                return finish(best_theta, best_fit, profile, true);
            }

            let lo = if k == 0 { 0.0 } else { grid[k - 1] };
            let hi = grid[k + 1];
            let (warm_beta, warm_b) = (best_fit.beta.clone(), best_fit.b.clone());
            let eval = |theta: f64, profile: &mut Vec<(f64, f64)>| -> Result<(f64, InnerFit)> {
                let fit = model.fit_at(theta, &warm_beta, &warm_b, opts)?;
                let m = model.marginal(&fit, theta);
                profile.push((theta, m));
                Ok((m, fit))
            };
            let ratio = 0.5 * (5f64.sqrt() - 1.0);
            let (mut a, mut bnd) = (lo, hi);
            let mut c = bnd - ratio * (bnd - a);
            let mut d = a + ratio * (bnd - a);
            let (mut fc, mut fit_c) = eval(c, &mut profile)?;
            let (mut fd, mut fit_d) = eval(d, &mut profile)?;
            for _ in 0..40 {
                if bnd - a < 1e-3 * bnd.max(1e-2) {
                    break;
                }
                if fc >= fd {
                    bnd = d;
                    d = c;
                    fd = fc;
                    fit_d = fit_c;
                    c = bnd - ratio * (bnd - a);
                    (fc, fit_c) = eval(c, &mut profile)?;
                } else {
                    a = c;
                    c = d;
                    fc = fd;
                    fit_c = fit_d;
                    d = a + ratio * (bnd - a);
                    (fd, fit_d) = eval(d, &mut profile)?;
                }
            }
            let (gm, gtheta, gfit) = if fc >= fd { (fc, c, fit_c) } else { (fd, d, fit_d) };
            if gm > best_m {
                best_m = gm;
                best_theta = gtheta;
                best_fit = gfit;
            }

            if k == 0 {
                let cox = cox_fit(data, design, offset, &cox_opts)?;
                if cox.loglik >= best_m {
                    profile.push((0.0, cox.loglik));
                    return without_frailty(profile);
                }
            }
            finish(best_theta, best_fit, profile, false)
        }
    }
}

/// Frailty fit on the dataset's treatment and covariates.
pub fn frailty_fit_dataset(data: &Dataset, spec: &FrailtySpec) -> Result<FrailtyCoxFit> {
    frailty_fit(data, &Design::from_dataset(data, true), None, spec)
}
