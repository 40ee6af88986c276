//! Risk-set structure of the partial likelihood in linear-predictor space.
//!
//! With Breslow ties the negative Hessian of the partial log-likelihood with
//! respect to the per-subject linear predictor `eta` is
//!
//! ```text
//! N = diag(w * cumhaz) - W K W,   K[i][j] = a[min(i, j)]
//! ```
//!
//! in time-sorted order, where `w = exp(eta)`, `cumhaz[i]` is the Breslow
//! cumulative hazard at subject `i`'s time and `a[i] = sum d_k / S_k^2` over
//! event times not after it. Nested risk sets make `K` a min-kernel, so
//! products with `N` and the LDL' factorisation of `diag(c) + N` take O(n).

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::survival::RiskSetIndex;

#[derive(Debug, Clone)]
pub(crate) struct EtaEval {
    pub loglik: f64,
    /// `delta - w * cumhaz`, sorted order.
    pub gradient: Vec<f64>,
    pub info: EtaInformation,
}

/// Sorted-order representation of `N`. `w` is scaled by `exp(-max eta)`;
/// `cumhaz` and `a` carry the inverse scale so every product is exact.
#[derive(Debug, Clone)]
pub(crate) struct EtaInformation {
    pub w: Vec<f64>,
    pub cumhaz: Vec<f64>,
    pub a: Vec<f64>,
}

pub(crate) fn evaluate_eta(index: &RiskSetIndex, eta: &[f64]) -> Result<EtaEval> {
    let n = index.len();
    if eta.iter().any(|e| !e.is_finite()) {
        return Err(Error::NumericalOverflow);
    }
    let emax = eta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = eta.iter().map(|e| (e - emax).exp()).collect();

    let mut suffix = vec![0.0; n + 1];
    for k in (0..n).rev() {
        suffix[k] = suffix[k + 1] + w[k];
    }

    let mut loglik = 0.0;
    let mut cumhaz = vec![0.0; n];
    let mut a = vec![0.0; n];
    let mut h = 0.0;
    let mut h2 = 0.0;
    let mut pos = 0;
    for et in index.event_times() {
        while pos < et.start {
            cumhaz[pos] = h;
            a[pos] = h2;
            pos += 1;
        }
        let s = suffix[et.start];
        let d = et.n_events as f64;
        loglik += eta[et.start..et.start + et.n_events].iter().sum::<f64>() - d * (s.ln() + emax);
        h += d / s;
        h2 += d / (s * s);
    }
    while pos < n {
        cumhaz[pos] = h;
        a[pos] = h2;
        pos += 1;
    }
    if !loglik.is_finite() {
        return Err(Error::NumericalOverflow);
    }
    let events = index.sorted_events();
    let gradient = (0..n)
        .map(|k| if events[k] { 1.0 } else { 0.0 } - w[k] * cumhaz[k])
        .collect();
    Ok(EtaEval {
        loglik,
        gradient,
        info: EtaInformation { w, cumhaz, a },
    })
}

impl EtaInformation {
    pub fn len(&self) -> usize {
        self.w.len()
    }

    /// Diagonal of `N`.
    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.len())
            .map(|i| self.w[i] * self.cumhaz[i] - self.w[i] * self.w[i] * self.a[i])
            .collect()
    }

    /// `N v`.
    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        let n = self.len();
        let u: Vec<f64> = (0..n).map(|i| self.w[i] * v[i]).collect();
        // (K u)_i = sum_{j<=i} a_j u_j + a_i sum_{j>i} u_j
        let mut tail = vec![0.0; n + 1];
        for i in (0..n).rev() {
            tail[i] = tail[i + 1] + u[i];
        }
        let mut head = 0.0;
        let mut out = vec![0.0; n];
        for i in 0..n {
            head += self.a[i] * u[i];
            let ku = head + self.a[i] * tail[i + 1];
            out[i] = self.w[i] * self.cumhaz[i] * v[i] - self.w[i] * ku;
        }
        out
    }

    pub fn dense(&self) -> DMatrix<f64> {
        let n = self.len();
        DMatrix::from_fn(n, n, |i, j| {
            let diag = if i == j { self.w[i] * self.cumhaz[i] } else { 0.0 };
            diag - self.w[i] * self.w[j] * self.a[i.min(j)]
        })
    }

    /// LDL' factor of `diag(extra) + N`, or `None` if a pivot is not positive.
    pub fn factor(&self, extra: &[f64]) -> Option<StructuredFactor> {
        let n = self.len();
        let mut coupling = vec![0.0; n];
        let mut pivot = vec![0.0; n];
        let mut shift = 0.0;
        for i in 0..n {
            let c = self.a[i] + shift;
            let w2 = self.w[i] * self.w[i];
            let g = self.w[i] * self.cumhaz[i] + extra[i] - w2 * c;
            if !(g > 0.0) || !g.is_finite() {
                return None;
            }
            coupling[i] = c;
            pivot[i] = g;
            shift += w2 * c * c / g;
        }
        Some(StructuredFactor {
            w: self.w.clone(),
            coupling,
            pivot,
        })
    }
}

/// `L D L'` with `L[i][j] = -w_i w_j c_j / g_j` for `i > j`.
#[derive(Debug, Clone)]
pub(crate) struct StructuredFactor {
    w: Vec<f64>,
    coupling: Vec<f64>,
    pivot: Vec<f64>,
}

impl StructuredFactor {
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.w.len();
        let mut y = vec![0.0; n];
        let mut acc = 0.0;
        for i in 0..n {
            y[i] = rhs[i] + self.w[i] * acc;
            acc += self.w[i] * self.coupling[i] * y[i] / self.pivot[i];
        }
        let mut x = vec![0.0; n];
        let mut acc = 0.0;
        for i in (0..n).rev() {
            x[i] = y[i] / self.pivot[i] + self.w[i] * self.coupling[i] / self.pivot[i] * acc;
            acc += self.w[i] * x[i];
        }
        x
    }

    pub fn log_det(&self) -> f64 {
        self.pivot.iter().map(|g| g.ln()).sum()
    }
}
