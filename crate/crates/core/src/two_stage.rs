//! The estimator family compared throughout: crude and covariate-adjusted
//! Cox, adjusted Cox with frailty, two-stage residual inclusion (2SRI) and
//! 2SRI with an individual frailty (2SRI-F).

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::cox::{cox_fit, wald_ci, CoxFit, CoxOptions};
use crate::data::{Dataset, Design};
use crate::error::{Error, Result, Stage};
use crate::first_stage::{ols_fit, FirstStageRegressors, OlsFit};
use crate::frailty::{frailty_fit, FrailtyFamily, FrailtySpec, VariancePolicy, DEFAULT_THETA_GRID};

/// Name of the first-stage residual column in second-stage designs.
pub const RESIDUAL_COLUMN: &str = "first_stage_residual";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EstimatorKind {
    /// Cox on treatment alone.
    Crude,
    /// Cox on treatment and measured covariates.
    Naive,
    NaiveFrailty(FrailtyFamily),
    /// Residual inclusion: Cox on treatment, covariates and the first-stage
    /// residual.
    TwoStageRI,
    TwoStageRIFrailty(FrailtyFamily),
}

impl EstimatorKind {
    /// The seven estimators of a full comparison, in report order.
    pub const ALL: [EstimatorKind; 7] = [
        EstimatorKind::Crude,
        EstimatorKind::Naive,
        EstimatorKind::NaiveFrailty(FrailtyFamily::Gaussian),
        EstimatorKind::NaiveFrailty(FrailtyFamily::Gamma),
        EstimatorKind::TwoStageRI,
        EstimatorKind::TwoStageRIFrailty(FrailtyFamily::Gaussian),
        EstimatorKind::TwoStageRIFrailty(FrailtyFamily::Gamma),
    ];

    pub fn label(&self) -> String {
        match self {
            EstimatorKind::Crude => "crude".into(),
            EstimatorKind::Naive => "naive".into(),
            EstimatorKind::NaiveFrailty(f) => format!("naive-frailty-{}", f.label()),
            EstimatorKind::TwoStageRI => "2sri".into(),
            EstimatorKind::TwoStageRIFrailty(f) => format!("2sri-frailty-{}", f.label()),
        }
    }

    pub fn uses_instrument(&self) -> bool {
        matches!(self, EstimatorKind::TwoStageRI | EstimatorKind::TwoStageRIFrailty(_))
    }

    pub fn frailty(&self) -> Option<FrailtyFamily> {
        match self {
            EstimatorKind::NaiveFrailty(f) | EstimatorKind::TwoStageRIFrailty(f) => Some(*f),
            _ => None,
        }
    }

    /// Same estimator with the frailty family replaced (no-op otherwise).
    pub fn with_family(self, family: FrailtyFamily) -> Self {
        match self {
            EstimatorKind::NaiveFrailty(_) => EstimatorKind::NaiveFrailty(family),
            EstimatorKind::TwoStageRIFrailty(_) => EstimatorKind::TwoStageRIFrailty(family),
            other => other,
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    /// Accepts the labels produced by [`EstimatorKind::label`]; a frailty
    /// estimator without a family suffix defaults to Gaussian.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let family = |suffix: &str| match suffix {
            "" | "-gaussian" => Ok(FrailtyFamily::Gaussian),
            "-gamma" => Ok(FrailtyFamily::Gamma),
            other => Err(Error::invalid(format!("unknown frailty family `{}`", other.trim_start_matches('-')))),
        };
        match s.as_str() {
            "crude" => Ok(EstimatorKind::Crude),
            "naive" => Ok(EstimatorKind::Naive),
            "2sri" => Ok(EstimatorKind::TwoStageRI),
            _ => {
                if let Some(rest) = s.strip_prefix("naive-frailty") {
                    Ok(EstimatorKind::NaiveFrailty(family(rest)?))
                } else if let Some(rest) = s.strip_prefix("2sri-frailty") {
                    Ok(EstimatorKind::TwoStageRIFrailty(family(rest)?))
                } else {
                    Err(Error::invalid(format!("unknown estimator `{s}`")))
                }
            }
        }
    }
}

/// Diagnostics attached to every report.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Diagnostics {
    pub first_stage_r2: Option<f64>,
    pub theta_hat: Option<f64>,
    pub boundary_theta: bool,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateReport {
    pub kind: EstimatorKind,
    pub log_hr: f64,
    pub se: f64,
    pub hr: f64,
    /// Hazard-ratio scale; `exp` of the log-scale Wald endpoints.
    pub ci: (f64, f64),
    pub log_ci: (f64, f64),
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateOptions {
    pub cox: CoxOptions,
    pub variance: VariancePolicy,
    pub theta_grid: Vec<f64>,
    pub level: f64,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        EstimateOptions {
            cox: CoxOptions::default(),
            variance: VariancePolicy::Profile,
            theta_grid: DEFAULT_THETA_GRID.to_vec(),
            level: 0.95,
        }
    }
}

/// The second-stage design of an estimator, with the first-stage fit when
/// one was needed.
pub fn second_stage_design(data: &Dataset, kind: EstimatorKind) -> Result<(Design, Option<OlsFit>)> {
    match kind {
        EstimatorKind::Crude => Ok((Design::empty(data.len()).with_column("treatment", &data.treatment()), None)),
        EstimatorKind::Naive | EstimatorKind::NaiveFrailty(_) => Ok((Design::from_dataset(data, true), None)),
        EstimatorKind::TwoStageRI | EstimatorKind::TwoStageRIFrailty(_) => {
            if data.n_instruments() == 0 {
                return Err(Error::invalid("instrumental estimators need at least one instrument column").at_stage(Stage::First));
            }
            let ols = ols_fit(data, FirstStageRegressors::default()).map_err(|e| e.at_stage(Stage::First))?;
            let design = Design::from_dataset(data, true).with_column(RESIDUAL_COLUMN, &ols.residuals);
            check_second_stage_rank(&design).map_err(|e| e.at_stage(Stage::Second))?;
            Ok((design, Some(ols)))
        }
    }
}

/// The Cox likelihood has no intercept, so collinearity is judged on the
/// design augmented by a constant column.
fn check_second_stage_rank(design: &Design) -> Result<()> {
    let m: DMatrix<f64> = design.matrix.clone().insert_column(0, 1.0);
    let p = m.ncols();
    if m.nrows() <= p {
        return Err(Error::SingularDesign);
    }
    let qr = m.col_piv_qr();
    let r = qr.r();
    let tol = 1e-9 * r[(0, 0)].abs() * (design.nrows() as f64).sqrt();
    if (0..p).any(|k| !(r[(k, k)].abs() > tol)) {
        return Err(Error::SingularDesign);
    }
    Ok(())
}

pub fn estimate(data: &Dataset, kind: EstimatorKind) -> Result<EstimateReport> {
    estimate_with(data, kind, &EstimateOptions::default())
}

/// Fits `kind` and reports the treatment hazard ratio with a Wald interval
/// from the second-stage information only.
pub fn estimate_with(data: &Dataset, kind: EstimatorKind, opts: &EstimateOptions) -> Result<EstimateReport> {
    let (design, first) = second_stage_design(data, kind)?;
    let mut diagnostics = Diagnostics {
        first_stage_r2: first.as_ref().map(|f| f.r_squared),
        ..Diagnostics::default()
    };
    let fit: CoxFit = match kind.frailty() {
        None => cox_fit(data, &design, None, &opts.cox).map_err(|e| e.at_stage(Stage::Second))?,
        Some(family) => {
            let spec = FrailtySpec {
                family,
                variance: opts.variance,
                theta_grid: opts.theta_grid.clone(),
            };
            let f = frailty_fit(data, &design, None, &spec).map_err(|e| e.at_stage(Stage::Second))?;
            diagnostics.theta_hat = Some(f.theta_hat);
            diagnostics.boundary_theta = f.boundary_theta;
            f.fixed
        }
    };
    diagnostics.converged = fit.converged;
    diagnostics.iterations = fit.iterations;
    let idx = design.column_index("treatment").expect("treatment column present");
    let log_ci = wald_ci(&fit, idx, opts.level).map_err(|e| e.at_stage(Stage::Second))?;
    let log_hr = fit.beta[idx];
    Ok(EstimateReport {
        kind,
        log_hr,
        se: fit.std_error(idx),
        hr: log_hr.exp(),
        ci: (log_ci.0.exp(), log_ci.1.exp()),
        log_ci,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SurvivalRecord;

    #[test]
    fn labels_round_trip() {
        for k in EstimatorKind::ALL {
            assert_eq!(k.label().parse::<EstimatorKind>().unwrap(), k);
        }
        assert_eq!(
            "2sri-frailty".parse::<EstimatorKind>().unwrap(),
            EstimatorKind::TwoStageRIFrailty(FrailtyFamily::Gaussian)
        );
        assert!("2sps".parse::<EstimatorKind>().is_err());
    }

    #[test]
    fn irrelevant_instrument_surfaces_singular_design() {
        // W and Z orthogonal to 1 and X, so the fitted treatment is its mean
        // and the residual is X minus a constant.
        let x = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0];
        let w = [1.0, -1.0, -1.0, 1.0, 1.0, -1.0, -1.0, 1.0];
        let z = [1.0, 1.0, -1.0, -1.0, -1.0, -1.0, 1.0, 1.0];
        let t = [3.0, 1.0, 4.0, 1.5, 5.0, 9.0, 2.0, 6.0];
        let recs = (0..8)
            .map(|i| {
                SurvivalRecord::new(t[i], i % 3 != 0, x[i])
                    .with_covariates(vec![z[i]])
                    .with_instrument(vec![w[i]])
            })
            .collect();
        let d = Dataset::from_records(recs).unwrap();
        let err = estimate(&d, EstimatorKind::TwoStageRI).unwrap_err();
        assert!(matches!(err.root(), Error::SingularDesign), "{err:?}");
        assert!(matches!(err, Error::Stage { stage: Stage::Second, .. }));
    }

    #[test]
    fn missing_instrument_is_first_stage_error() {
        let recs = (0..6)
            .map(|i| SurvivalRecord::new(i as f64 + 1.0, true, (i % 2) as f64))
            .collect();
        let d = Dataset::from_records(recs).unwrap();
        let err = estimate(&d, EstimatorKind::TwoStageRI).unwrap_err();
        assert!(matches!(err, Error::Stage { stage: Stage::First, .. }));
    }
}
