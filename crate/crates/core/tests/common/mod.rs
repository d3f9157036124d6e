#![allow(dead_code)]

use coxsub::{Dataset, SurvivalRecord};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random dataset with delayed entry, rounded (tied) times and up to two
/// strata. Every stratum gets at least one event at an exit time that some
/// record is at risk for.
pub fn random_dataset(seed: u64, n: usize, r: usize, strata: u32) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let mut recs = Vec::with_capacity(n);
        for i in 0..n {
            let entry = if rng.random_bool(0.3) {
                (rng.random::<f64>() * 3.0 * 4.0).round() / 4.0
            } else {
                0.0
            };
            let len = 0.25 + (rng.random::<f64>() * 8.0 * 4.0).round() / 4.0;
            let x = (0..r).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            let s = rng.random_range(0..strata.max(1));
            recs.push(
                SurvivalRecord::new(i as u64, entry, entry + len, rng.random_bool(0.35), x)
                    .with_stratum(s),
            );
        }
        if (0..strata.max(1)).all(|s| recs.iter().any(|r| r.event && r.stratum == s)) {
            return Dataset::new(recs).unwrap();
        }
    }
}

pub fn random_weights(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
    (0..n).map(|_| 0.2 + rng.random::<f64>() * 2.0).collect()
}

pub fn random_beta(seed: u64, r: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    (0..r).map(|_| rng.random::<f64>() * 1.6 - 0.8).collect()
}

fn eta(d: &Dataset, i: usize, beta: &[f64]) -> f64 {
    d.covariates(i).iter().zip(beta).map(|(x, b)| x * b).sum()
}

fn at_risk(d: &Dataset, j: usize, t: f64, stratum: u32) -> bool {
    d.stratum(j) == stratum && d.entry(j) < t && t <= d.exit(j)
}

/// Risk-set sums at time `t` of `stratum` by a direct loop over records.
pub fn naive_sums(
    d: &Dataset,
    w: &[f64],
    beta: &[f64],
    t: f64,
    stratum: u32,
) -> (f64, DVector<f64>, DMatrix<f64>) {
    let r = d.dim();
    let mut s0 = 0.0;
    let mut s1 = DVector::zeros(r);
    let mut s2 = DMatrix::zeros(r, r);
    for j in 0..d.len() {
        if at_risk(d, j, t, stratum) {
            let e = w[j] * eta(d, j, beta).exp();
            let x = DVector::from_column_slice(d.covariates(j));
            s0 += e;
            s1 += &x * e;
            s2 += &x * x.transpose() * e;
        }
    }
    (s0, s1, s2)
}

/// Score, population-scaled information and log partial likelihood, one
/// event record at a time.
pub fn naive_score_info(d: &Dataset, w: &[f64], beta: &[f64]) -> (DVector<f64>, DMatrix<f64>, f64) {
    let r = d.dim();
    let mut g = DVector::zeros(r);
    let mut h = DMatrix::zeros(r, r);
    let mut ll = 0.0;
    for i in 0..d.len() {
        if !d.is_event(i) || w[i] == 0.0 {
            continue;
        }
        let (s0, s1, s2) = naive_sums(d, w, beta, d.exit(i), d.stratum(i));
        let x = DVector::from_column_slice(d.covariates(i));
        let m = &s1 / s0;
        g += (&x - &m) * w[i];
        h += (&s2 / s0 - &m * m.transpose()) * w[i];
        ll += w[i] * (eta(d, i, beta) - s0.ln());
    }
    (g, h / d.population() as f64, ll)
}

/// Distinct event times of a stratum with their weighted event counts.
pub fn naive_event_times(d: &Dataset, w: &[f64], stratum: u32) -> Vec<(f64, f64)> {
    let mut times: Vec<f64> = (0..d.len())
        .filter(|&i| d.is_event(i) && d.stratum(i) == stratum)
        .map(|i| d.exit(i))
        .collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    times
        .into_iter()
        .map(|t| {
            let dn = (0..d.len())
                .filter(|&i| d.is_event(i) && d.stratum(i) == stratum && d.exit(i) == t)
                .map(|i| w[i])
                .sum();
            (t, dn)
        })
        .collect()
}

/// `a_i = sum over event times t in (entry_i, exit_i] of
/// w-free e^{eta_i} dN(t)/S0(t) (x_i - S1(t)/S0(t))`.
pub fn naive_residuals(d: &Dataset, w: &[f64], beta: &[f64]) -> Vec<DVector<f64>> {
    let r = d.dim();
    let mut strata: Vec<u32> = (0..d.len()).map(|i| d.stratum(i)).collect();
    strata.sort_unstable();
    strata.dedup();
    let grids: Vec<(u32, Vec<(f64, f64)>)> = strata
        .iter()
        .map(|&s| (s, naive_event_times(d, w, s)))
        .collect();
    (0..d.len())
        .map(|i| {
            let mut a = DVector::zeros(r);
            let grid = &grids.iter().find(|(s, _)| *s == d.stratum(i)).unwrap().1;
            let x = DVector::from_column_slice(d.covariates(i));
            for &(t, dn) in grid {
                if d.entry(i) < t && t <= d.exit(i) && dn > 0.0 {
                    let (s0, s1, _) = naive_sums(d, w, beta, t, d.stratum(i));
                    a += (&x - &s1 / s0) * (eta(d, i, beta).exp() * dn / s0);
                }
            }
            a
        })
        .collect()
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300) || (a - b).abs() < 1e-14
}

/// Largest elementwise gap relative to the largest magnitude in `b`.
pub fn rel_gap(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    a.iter()
        .zip(b)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
        / scale
}
