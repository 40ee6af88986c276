//! Data-generating process: Weibull proportional-hazards survival with an
//! unmeasured confounder and a linear treatment-selection equation.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};

use super::scenario::{Exposure, ScenarioConfig, UnmeasuredModel};
use crate::data::{Dataset, SurvivalRecord};
use crate::error::{Error, Result};

/// Baseline scale `s0` of `Lambda0(t) = (t / s0)^2`.
pub const BASELINE_SCALE: f64 = std::f64::consts::E;

/// Number of pilot subjects used by [`calibrate_censoring`].
pub const PILOT_DRAWS: usize = 200_000;

fn normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn centred_gamma(rng: &mut impl Rng) -> f64 {
    let e: f64 = rng.sample(Exp1);
    e - 1.0
}

/// Draws `n` pairs `(U, V)` from the scenario's unmeasured-variable model.
pub fn generate_unmeasured(config: &ScenarioConfig, n: usize, rng: &mut impl Rng) -> (Vec<f64>, Vec<f64>) {
    let mut u = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    let sa = config.mixing_a.sqrt();
    let sb = (1.0 - config.mixing_a).sqrt();
    for _ in 0..n {
        let (ui, vi) = match config.mixture {
            UnmeasuredModel::JointNormal => {
                let e1 = normal(rng);
                let e2 = normal(rng);
                let rho = config.rho;
                (e1, rho * e1 + (1.0 - rho * rho).max(0.0).sqrt() * e2)
            }
            UnmeasuredModel::M1 => {
                let (g1, g2, g3) = (centred_gamma(rng), centred_gamma(rng), centred_gamma(rng));
                (sa * g1 + sb * g2, sa * g1 + sb * g3)
            }
            UnmeasuredModel::M2 => {
                let (g1, e1, e2) = (centred_gamma(rng), normal(rng), normal(rng));
                (sa * g1 + sb * e1, sa * g1 + sb * e2)
            }
            UnmeasuredModel::M3 => {
                let (e1, e2, e3) = (normal(rng), normal(rng), normal(rng));
                (sa * e1 + sb * e2, sa * e1 + sb * e3)
            }
            UnmeasuredModel::M4 => {
                let (e1, g2, g3) = (normal(rng), centred_gamma(rng), centred_gamma(rng));
                (sa * e1 + sb * g2, sa * e1 + sb * g3)
            }
        };
        u.push(ui);
        v.push(vi);
    }
    (u, v)
}

/// Covariates, treatment and linear predictor of one simulated sample,
/// before survival and censoring times are drawn.
struct Subjects {
    z: Vec<f64>,
    w: Vec<f64>,
    x: Vec<f64>,
    u: Vec<f64>,
    v: Vec<f64>,
    lp: Vec<f64>,
}

fn draw_subjects(config: &ScenarioConfig, n: usize, rng: &mut impl Rng) -> Subjects {
    let z: Vec<f64> = (0..n).map(|_| normal(rng)).collect();
    let w: Vec<f64> = (0..n).map(|_| normal(rng)).collect();
    let eps: Vec<f64> = (0..n).map(|_| normal(rng)).collect();
    let (u, v) = generate_unmeasured(config, n, rng);
    let x: Vec<f64> = (0..n)
        .map(|i| {
            let star = 1.0 + w[i] + z[i] + config.alpha_v * v[i] + eps[i];
            match config.exposure {
                Exposure::Continuous => star,
                Exposure::Binary => {
                    if star >= config.binary_threshold {
                        1.0
                    } else {
                        0.0
                    }
                }
            }
        })
        .collect();
    let xbar = x.iter().sum::<f64>() / n as f64;
    let lp = (0..n)
        .map(|i| config.beta_x * (x[i] - xbar) + z[i] + config.beta_u * u[i])
        .collect();
    Subjects { z, w, x, u, v, lp }
}

/// A simulated sample with the quantities needed to score estimators.
#[derive(Debug, Clone)]
pub struct SimulatedDataset {
    /// Covariate `z`, instrument `w`.
    pub dataset: Dataset,
    /// True log hazard ratio of treatment.
    pub beta_x: f64,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub censor_scale: f64,
}

/// Draws one sample of `config.n` subjects. Survival times solve
/// `(t / s0)^2 exp(lp) = E` for `E ~ Exp(1)`; censoring times are Weibull
/// with shape 2 and the calibrated scale.
pub fn generate_dataset(config: &ScenarioConfig, rng: &mut impl Rng) -> Result<SimulatedDataset> {
    config.validate()?;
    let scale = calibrate_censoring(config)?;
    generate_with_scale(config, scale, rng)
}

pub(crate) fn generate_with_scale(config: &ScenarioConfig, censor_scale: f64, rng: &mut impl Rng) -> Result<SimulatedDataset> {
    let n = config.n;
    let s = draw_subjects(config, n, rng);
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let e: f64 = rng.sample(Exp1);
        let y = BASELINE_SCALE * (e * (-s.lp[i]).exp()).sqrt();
        let c = if censor_scale.is_finite() {
            let ec: f64 = rng.sample(Exp1);
            censor_scale * ec.sqrt()
        } else {
            f64::INFINITY
        };
        let (t, event) = if y <= c { (y, true) } else { (c, false) };
        records.push(
            SurvivalRecord::new(t, event, s.x[i])
                .with_covariates(vec![s.z[i]])
                .with_instrument(vec![s.w[i]]),
        );
    }
    let dataset = Dataset::new(records, vec!["z".into()], vec!["w".into()])?;
    Ok(SimulatedDataset {
        dataset,
        beta_x: config.beta_x,
        u: s.u,
        v: s.v,
        censor_scale,
    })
}

/// Expected censored fraction given the subjects' linear predictors.
/// With both times Weibull of shape 2, `P(C < Y | lp) = 1 / (1 + c^2 exp(lp) / s0^2)`.
fn expected_censoring(lp: &[f64], scale: f64) -> f64 {
    let k = scale * scale / (BASELINE_SCALE * BASELINE_SCALE);
    lp.iter().map(|l| 1.0 / (1.0 + k * l.exp())).sum::<f64>() / lp.len() as f64
}

type CalibrationKey = [u64; 10];

fn calibration_key(c: &ScenarioConfig) -> CalibrationKey {
    [
        c.beta_x.to_bits(),
        c.beta_u.to_bits(),
        c.alpha_v.to_bits(),
        c.rho.to_bits(),
        c.exposure as u64,
        c.mixture as u64,
        c.mixing_a.to_bits(),
        c.censoring_target.to_bits(),
        c.seed,
        c.binary_threshold.to_bits(),
    ]
}

static CALIBRATION: OnceLock<Mutex<HashMap<CalibrationKey, f64>>> = OnceLock::new();

/// Censoring scale giving expected censored fraction `censoring_target`,
/// found by bisection on `log c` over a pilot sample of
/// [`PILOT_DRAWS`] subjects. Results are cached per configuration; a zero
/// target returns `+inf`.
pub fn calibrate_censoring(config: &ScenarioConfig) -> Result<f64> {
    config.validate()?;
    let target = config.censoring_target;
    if target == 0.0 {
        return Ok(f64::INFINITY);
    }
    let key = calibration_key(config);
    let cache = CALIBRATION.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(&scale) = cache.lock().unwrap().get(&key) {
        return Ok(scale);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);
    rng.set_stream(u64::MAX);
    let pilot = draw_subjects(config, PILOT_DRAWS, &mut rng);

    // censoring fraction decreases in c
    let (mut lo, mut hi) = (-30.0f64, 30.0f64);
    let f_lo = expected_censoring(&pilot.lp, lo.exp());
    let f_hi = expected_censoring(&pilot.lp, hi.exp());
    if !(f_lo >= target && f_hi <= target) {
        return Err(Error::CalibrationFailure(format!(
            "censoring target {target} outside attainable range [{f_hi}, {f_lo}]"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let f = expected_censoring(&pilot.lp, mid.exp());
        if f > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    let scale = (0.5 * (lo + hi)).exp();
    let achieved = expected_censoring(&pilot.lp, scale);
    if (achieved - target).abs() > 0.005 {
        return Err(Error::CalibrationFailure(format!(
            "bisection reached censoring {achieved}, target {target}"
        )));
    }
    cache.lock().unwrap().insert(key, scale);
    Ok(scale)
}
