#![allow(dead_code)]

use ivfrail::cox::{cox_fit, cox_loglik, CoxOptions, Ties};
use ivfrail::frailty::{penalized_loglik, FrailtyFamily};
use ivfrail::{Dataset, Design, SurvivalRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};

/// Small dataset with treatment `x` and covariate `z`. Times are rounded to
/// one decimal so ties occur.
pub fn random_dataset(seed: u64, n: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let recs = (0..n)
        .map(|_| {
            let x: f64 = rng.sample(StandardNormal);
            let z: f64 = rng.sample(StandardNormal);
            let e: f64 = rng.sample(Exp1);
            let t = (e * (-(0.5 * x - 0.3 * z)).exp() * 10.0).round() / 10.0 + 0.1;
            let event = rng.random::<f64>() < 0.75;
            SurvivalRecord::new(t, event, x).with_covariates(vec![z])
        })
        .collect();
    Dataset::new(recs, vec!["z".into()], vec![]).unwrap()
}

pub fn design(data: &Dataset, p: usize) -> Design {
    match p {
        1 => Design::empty(data.len()).with_column("treatment", &data.treatment()),
        _ => Design::from_dataset(data, true),
    }
}

/// Breslow partial log-likelihood written out over explicit risk sets.
pub fn breslow_loglik(data: &Dataset, design: &Design, beta: &[f64], offset: Option<&[f64]>) -> f64 {
    let n = data.len();
    let t = data.times();
    let d = data.events();
    let eta: Vec<f64> = (0..n)
        .map(|i| {
            let o = offset.map_or(0.0, |o| o[i]);
            o + (0..beta.len()).map(|j| design.matrix[(i, j)] * beta[j]).sum::<f64>()
        })
        .collect();
    let mut ll = 0.0;
    for i in 0..n {
        if !d[i] {
            continue;
        }
        let s: f64 = (0..n).filter(|&j| t[j] >= t[i]).map(|j| eta[j].exp()).sum();
        ll += eta[i] - s.ln();
    }
    ll
}

/// Efron partial log-likelihood by explicit enumeration of tied events.
pub fn efron_loglik(data: &Dataset, design: &Design, beta: &[f64]) -> f64 {
    let n = data.len();
    let t = data.times();
    let d = data.events();
    let eta: Vec<f64> = (0..n)
        .map(|i| (0..beta.len()).map(|j| design.matrix[(i, j)] * beta[j]).sum::<f64>())
        .collect();
    let mut distinct: Vec<f64> = (0..n).filter(|&i| d[i]).map(|i| t[i]).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let mut ll = 0.0;
    for &u in &distinct {
        let tied: Vec<usize> = (0..n).filter(|&i| d[i] && t[i] == u).collect();
        let risk: f64 = (0..n).filter(|&j| t[j] >= u).map(|j| eta[j].exp()).sum();
        let tied_sum: f64 = tied.iter().map(|&i| eta[i].exp()).sum();
        let m = tied.len() as f64;
        for (l, &i) in tied.iter().enumerate() {
            ll += eta[i] - (risk - l as f64 / m * tied_sum).ln();
        }
    }
    ll
}

/// Golden-section maximum of a unimodal function on `[a, b]`.
pub fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Grid scan followed by golden-section refinement around the best point.
pub fn maximize_1d(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    let steps = 400;
    let h = (hi - lo) / steps as f64;
    let best = (0..=steps)
        .map(|k| lo + k as f64 * h)
        .max_by(|a, b| f(*a).total_cmp(&f(*b)))
        .unwrap();
    golden_max(&f, best - h, best + h, 1e-10)
}

/// Nelder–Mead maximisation, restarted until the simplex stops moving.
pub fn nelder_mead_max(f: impl Fn(&[f64]) -> f64, start: &[f64], scale: f64) -> Vec<f64> {
    let p = start.len();
    let mut x0 = start.to_vec();
    let mut step = scale;
    for _ in 0..20 {
        let mut simplex: Vec<Vec<f64>> = vec![x0.clone()];
        for j in 0..p {
            let mut v = x0.clone();
            v[j] += step;
            simplex.push(v);
        }
        let mut vals: Vec<f64> = simplex.iter().map(|v| -f(v)).collect();
        for _ in 0..5000 {
            let mut idx: Vec<usize> = (0..=p).collect();
            idx.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
            simplex = idx.iter().map(|&i| simplex[i].clone()).collect();
            vals = idx.iter().map(|&i| vals[i]).collect();
            if (vals[p] - vals[0]).abs() < 1e-15 {
                break;
            }
            let centroid: Vec<f64> = (0..p).map(|j| simplex[..p].iter().map(|v| v[j]).sum::<f64>() / p as f64).collect();
            let along = |t: f64| -> Vec<f64> { (0..p).map(|j| centroid[j] + t * (simplex[p][j] - centroid[j])).collect() };
            let xr = along(-1.0);
            let fr = -f(&xr);
            if fr < vals[0] {
                let xe = along(-2.0);
                let fe = -f(&xe);
                if fe < fr {
                    simplex[p] = xe;
                    vals[p] = fe;
                } else {
                    simplex[p] = xr;
                    vals[p] = fr;
                }
            } else if fr < vals[p - 1] {
                simplex[p] = xr;
                vals[p] = fr;
            } else {
                let xc = if fr < vals[p] { along(-0.5) } else { along(0.5) };
                let fc = -f(&xc);
                if fc < vals[p].min(fr) {
                    simplex[p] = xc;
                    vals[p] = fc;
                } else {
                    for k in 1..=p {
                        let v: Vec<f64> = (0..p).map(|j| simplex[0][j] + 0.5 * (simplex[k][j] - simplex[0][j])).collect();
                        vals[k] = -f(&v);
                        simplex[k] = v;
                    }
                }
            }
        }
        let best = (0..=p).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap();
        let moved = (0..p).map(|j| (simplex[best][j] - x0[j]).abs()).fold(0.0, f64::max);
        x0 = simplex[best].clone();
        step = (moved * 2.0).max(1e-6);
        if moved < 1e-9 {
            break;
        }
    }
    x0
}

/// Derivative-free maximiser of the transcribed Breslow likelihood.
pub fn oracle_beta(data: &Dataset, design: &Design) -> Vec<f64> {
    let f = |b: &[f64]| breslow_loglik(data, design, b, None);
    if design.ncols() == 1 {
        vec![maximize_1d(|b| f(&[b]), -8.0, 8.0)]
    } else {
        nelder_mead_max(f, &vec![0.0; design.ncols()], 0.5)
    }
}

/// Largest `|cox_fit - oracle|` over `count` random datasets with `n <= 25`.
/// Returns the worst discrepancy and the number of datasets checked.
pub fn cox_oracle_discrepancy(count: usize, seed: u64) -> (f64, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for k in 0..count {
        let n = rng.random_range(12..=25);
        let p = 1 + k % 2;
        let data = random_dataset(seed * 1000 + k as u64, n);
        let des = design(&data, p);
        let fit = cox_fit(&data, &des, None, &CoxOptions::default()).expect("cox fit");
        let oracle = oracle_beta(&data, &des);
        for j in 0..p {
            worst = worst.max((fit.beta[j] - oracle[j]).abs());
        }
    }
    (worst, count)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Worst relative errors `(gradient, hessian)` of `cox_loglik` against
/// central differences, over random points of random datasets.
pub fn cox_fd_errors(cases: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut eg, mut eh): (f64, f64) = (0.0, 0.0);
    for k in 0..cases {
        let data = random_dataset(seed + 17 * k as u64, 20);
        let des = design(&data, 2);
        let ties = if k % 2 == 0 { Ties::Breslow } else { Ties::Efron };
        let beta: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
        let at = |b: &[f64]| cox_loglik(&data, &des, b, None, ties).unwrap();
        let d0 = at(&beta);
        let h = 1e-5;
        for j in 0..2 {
            let mut bp = beta.clone();
            let mut bm = beta.clone();
            bp[j] += h;
            bm[j] -= h;
            let (dp, dm) = (at(&bp), at(&bm));
            let g = (dp.loglik - dm.loglik) / (2.0 * h);
            eg = eg.max(rel_err(d0.gradient[j], g));
            for l in 0..2 {
                let hess = -(dp.gradient[l] - dm.gradient[l]) / (2.0 * h);
                eh = eh.max(rel_err(d0.neg_hessian[(l, j)], hess));
            }
        }
    }
    (eg, eh)
}

/// Worst relative errors `(gradient, information)` of `penalized_loglik`
/// against central differences, over both frailty families.
pub fn penalized_fd_errors(cases: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut eg, mut eh): (f64, f64) = (0.0, 0.0);
    for k in 0..cases {
        let n = 12;
        let data = random_dataset(seed + 31 * k as u64, n);
        let des = design(&data, 2);
        let family = if k % 2 == 0 { FrailtyFamily::Gaussian } else { FrailtyFamily::Gamma };
        let theta = rng.random_range(0.2..1.5);
        let beta: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-0.8..0.8)).collect();
        let at = |beta: &[f64], b: &[f64]| penalized_loglik(&data, &des, beta, b, theta, family, None).unwrap();
        let d0 = at(&beta, &b);
        let dense = d0.info_b_b.to_dense();
        let h = 1e-5;
        // perturb each of the p + n parameters
        for j in 0..2 + n {
            let (mut bp, mut bm) = (beta.clone(), beta.clone());
            let (mut fp, mut fm) = (b.clone(), b.clone());
            if j < 2 {
                bp[j] += h;
                bm[j] -= h;
            } else {
                fp[j - 2] += h;
                fm[j - 2] -= h;
            }
            let (dp, dm) = (at(&bp, &fp), at(&bm, &fm));
            let g = (dp.value - dm.value) / (2.0 * h);
            let analytic = if j < 2 { d0.gradient_beta[j] } else { d0.gradient_b[j - 2] };
            eg = eg.max(rel_err(analytic, g));
            for l in 0..2 {
                let fd = -(dp.gradient_beta[l] - dm.gradient_beta[l]) / (2.0 * h);
                let an = if j < 2 { d0.info_beta_beta[(l, j)] } else { d0.info_beta_b[(l, j - 2)] };
                eh = eh.max(rel_err(an, fd));
            }
            for i in 0..n {
                let fd = -(dp.gradient_b[i] - dm.gradient_b[i]) / (2.0 * h);
                let an = if j < 2 { d0.info_beta_b[(j, i)] } else { dense[(i, j - 2)] };
                eh = eh.max(rel_err(an, fd));
            }
        }
    }
    (eg, eh)
}

/// The seven-record example: times 6,6,6,7,10,13,16 with events
/// 1,1,0,1,0,1,1.
pub fn seven_records() -> (Vec<f64>, Vec<bool>) {
    (
        vec![6.0, 6.0, 6.0, 7.0, 10.0, 13.0, 16.0],
        vec![true, true, false, true, false, true, true],
    )
}

/// Hand product-limit values `(time, survival, greenwood term)` for
/// [`seven_records`].
pub fn seven_records_hand() -> Vec<(f64, f64, f64)> {
    vec![
        (6.0, 5.0 / 7.0, 2.0 / 35.0),
        (7.0, 15.0 / 28.0, 2.0 / 35.0 + 1.0 / 12.0),
        (13.0, 15.0 / 56.0, 2.0 / 35.0 + 1.0 / 12.0 + 1.0 / 2.0),
        (16.0, 0.0, f64::INFINITY),
    ]
}
