//! Weighted Cox partial likelihood.
//!
//! Everything here is built on one risk-set sweep per stratum: records are
//! visited latest exit first, so the running sums
//! `S0 = sum w e^{eta}`, `S1 = sum w e^{eta} x` and `S2 = sum w e^{eta} x x'`
//! are available at each event time without touching individual
//! `(record, time)` pairs. Delayed entries are removed again by a second
//! pointer over entry times. The linear predictor is shifted by the
//! per-stratum maximum before exponentiating; every quantity returned is on
//! the unshifted scale.

use nalgebra::{DMatrix, DVector};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{max_abs, spd_inverse};

/// Per-record case weights `w_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidWeight);
        }
        Ok(Self(weights))
    }

    pub fn ones(n: usize) -> Self {
        Self(vec![1.0; n])
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(self.0.iter().map(|w| w * c).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub(crate) fn check(&self, d: &Dataset) -> Result<()> {
        if self.0.len() != d.len() {
            return Err(Error::WeightLength {
                expected: d.len(),
                found: self.0.len(),
            });
        }
        Ok(())
    }
}

/// Risk-set sums at one event time of one stratum.
#[derive(Debug, Clone, PartialEq)]
pub struct EventTimeSums {
    pub stratum: u32,
    pub time: f64,
    pub s0: f64,
    pub s1: Vec<f64>,
    /// Row-major `r x r`.
    pub s2: Vec<f64>,
    /// Weighted event count.
    pub dn: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSums {
    pub dim: usize,
    /// Grouped by stratum, ascending time within each stratum.
    pub points: Vec<EventTimeSums>,
}

/// State handed to sweep visitors. Sums are on the shifted scale:
/// multiply `s0`, `s1`, `s2` by `exp(shift)` to recover them. Only the upper
/// triangle of `s2` is filled.
pub(crate) struct SweepPoint<'a> {
    pub slot: usize,
    pub k: usize,
    pub time: f64,
    pub s0: f64,
    pub s1: &'a [f64],
    pub s2: &'a [f64],
    pub dn: f64,
    pub event_x: &'a [f64],
    pub event_eta: f64,
    pub shift: f64,
}

pub(crate) fn linear_predictor(d: &Dataset, beta: &[f64]) -> Result<Vec<f64>> {
    if beta.len() != d.dim() {
        return Err(Error::BetaLength {
            expected: d.dim(),
            found: beta.len(),
        });
    }
    if d.dim() == 0 {
        return Ok(vec![0.0; d.len()]);
    }
    Ok(d.x_flat()
        .chunks_exact(d.dim())
        .map(|x| x.iter().zip(beta).map(|(x, b)| x * b).sum())
        .collect())
}

/// `exp(eta_i - shift)` per record, with `shift` the maximum linear predictor
/// of the record's stratum.
pub(crate) struct RelativeRisk {
    pub values: Vec<f64>,
    pub shifts: Vec<f64>,
}

pub(crate) fn relative_risk(d: &Dataset, eta: &[f64]) -> RelativeRisk {
    let mut shifts = vec![f64::NEG_INFINITY; d.strata().len()];
    for (i, &e) in eta.iter().enumerate() {
        let s = &mut shifts[d.stratum_slot(i)];
        *s = s.max(e);
    }
    let values = eta
        .iter()
        .enumerate()
        .map(|(i, &e)| (e - shifts[d.stratum_slot(i)]).exp())
        .collect();
    RelativeRisk { values, shifts }
}

fn accumulate(e: f64, x: &[f64], s0: &mut f64, s1: &mut [f64], s2: &mut [f64]) {
    match x.len() {
        1 => accumulate_fixed::<1>(e, x, s0, s1, s2),
        2 => accumulate_fixed::<2>(e, x, s0, s1, s2),
        3 => accumulate_fixed::<3>(e, x, s0, s1, s2),
        4 => accumulate_fixed::<4>(e, x, s0, s1, s2),
        5 => accumulate_fixed::<5>(e, x, s0, s1, s2),
        6 => accumulate_fixed::<6>(e, x, s0, s1, s2),
        7 => accumulate_fixed::<7>(e, x, s0, s1, s2),
        8 => accumulate_fixed::<8>(e, x, s0, s1, s2),
        _ => accumulate_dyn(e, x, s0, s1, s2),
    }
}

#[inline(always)]
fn accumulate_fixed<const R: usize>(e: f64, x: &[f64], s0: &mut f64, s1: &mut [f64], s2: &mut [f64]) {
    let x: &[f64; R] = x.try_into().expect("covariate row length");
    let s1: &mut [f64; R] = s1.try_into().expect("S1 length");
    *s0 += e;
    let mut ex = [0.0; R];
    for a in 0..R {
        ex[a] = e * x[a];
        s1[a] += ex[a];
    }
    if s2.is_empty() {
        return;
    }
    let s2: &mut [f64] = &mut s2[..R * R];
    for a in 0..R {
        for b in a..R {
            s2[a * R + b] += ex[a] * x[b];
        }
    }
}

fn accumulate_dyn(e: f64, x: &[f64], s0: &mut f64, s1: &mut [f64], s2: &mut [f64]) {
    *s0 += e;
    let r = x.len();
    for (acc, xa) in s1.iter_mut().zip(x) {
        *acc += e * xa;
    }
    if s2.is_empty() {
        return;
    }
    let mut rest = s2;
    for a in 0..r {
        let (row, tail) = rest.split_at_mut(r);
        rest = tail;
        let ex = e * x[a];
        for (acc, xb) in row[a..].iter_mut().zip(&x[a..]) {
            *acc += ex * xb;
        }
    }
}

/// Runs the risk-set sweep, calling `visit` once per event time (within a
/// stratum, latest time first).
pub(crate) fn sweep<F>(
    d: &Dataset,
    w: &WeightVector,
    eta: &[f64],
    risk: &RelativeRisk,
    want_s2: bool,
    mut visit: F,
) -> Result<()>
where
    F: FnMut(&SweepPoint<'_>) -> Result<()>,
{
    w.check(d)?;
    let r = d.dim();
    let weights = w.as_slice();
    let mut s1 = vec![0.0; r];
    let mut s2 = vec![0.0; if want_s2 { r * r } else { 0 }];
    let mut event_x = vec![0.0; r];

    for (slot, stratum) in d.strata().iter().enumerate() {
        let times = stratum.event_times();
        if times.is_empty() {
            continue;
        }
        let mut s0 = 0.0;
        s1.iter_mut().for_each(|v| *v = 0.0);
        s2.iter_mut().for_each(|v| *v = 0.0);

        let exits = &stratum.by_exit_desc;
        let entries = &stratum.by_entry_desc;
        let (mut pe, mut pr) = (0usize, 0usize);
        for k in (0..times.len()).rev() {
            let t = times[k];
            let mut dn = 0.0;
            let mut event_eta = 0.0;
            event_x.iter_mut().for_each(|v| *v = 0.0);
            while pe < exits.len() && d.exit(exits[pe]) >= t {
                let i = exits[pe];
                let wi = weights[i];
                let x = d.covariates(i);
                if wi != 0.0 {
                    accumulate(wi * risk.values[i], x, &mut s0, &mut s1, &mut s2);
                }
                if d.is_event(i) && d.exit(i) == t {
                    dn += wi;
                    event_eta += wi * eta[i];
                    for (acc, xa) in event_x.iter_mut().zip(x) {
                        *acc += wi * xa;
                    }
                }
                pe += 1;
            }
            while pr < entries.len() && d.entry(entries[pr]) >= t {
                let i = entries[pr];
                if weights[i] != 0.0 {
                    let e = -weights[i] * risk.values[i];
                    accumulate(e, d.covariates(i), &mut s0, &mut s1, &mut s2);
                }
                pr += 1;
            }
            if dn > 0.0 && !(s0 > 0.0 && s0.is_finite()) {
                return Err(Error::EmptyRiskSet { time: t });
            }
            visit(&SweepPoint {
                slot,
                k,
                time: t,
                s0,
                s1: &s1,
                s2: &s2,
                dn,
                event_x: &event_x,
                event_eta,
                shift: risk.shifts[slot],
            })?;
        }
    }
    Ok(())
}

fn full_square(upper: &[f64], r: usize, scale: f64) -> Vec<f64> {
    let mut out = vec![0.0; r * r];
    for a in 0..r {
        for b in a..r {
            out[a * r + b] = upper[a * r + b] * scale;
            out[b * r + a] = upper[a * r + b] * scale;
        }
    }
    out
}

/// `S0`, `S1`, `S2` and the weighted event count at every event time.
pub fn sweep_sums(d: &Dataset, w: &WeightVector, beta: &[f64]) -> Result<SweepSums> {
    let eta = linear_predictor(d, beta)?;
    let risk = relative_risk(d, &eta);
    let mut points = Vec::new();
    sweep(d, w, &eta, &risk, true, |p| {
        let scale = p.shift.exp();
        points.push(EventTimeSums {
            stratum: d.strata()[p.slot].label,
            time: p.time,
            s0: p.s0 * scale,
            s1: p.s1.iter().map(|v| v * scale).collect(),
            s2: full_square(p.s2, d.dim(), scale),
            dn: p.dn,
        });
        Ok(())
    })?;
    // the sweep runs backwards in time within each stratum
    let mut grouped: Vec<EventTimeSums> = Vec::with_capacity(points.len());
    let mut start = 0;
    while start < points.len() {
        let label = points[start].stratum;
        let end = points[start..]
            .iter()
            .position(|p| p.stratum != label)
            .map_or(points.len(), |off| start + off);
        grouped.extend(points[start..end].iter().rev().cloned());
        start = end;
    }
    Ok(SweepSums {
        dim: d.dim(),
        points: grouped,
    })
}

/// Score, population-scaled information and log partial likelihood.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreInfo {
    pub gradient: DVector<f64>,
    /// `-n^{-1}` times the Hessian, with `n` the dataset's population size.
    pub info: DMatrix<f64>,
    pub loglik: f64,
}

pub fn score_and_info(d: &Dataset, w: &WeightVector, beta: &[f64]) -> Result<ScoreInfo> {
    let eta = linear_predictor(d, beta)?;
    evaluate(d, w, &eta, true)
}

/// Log partial likelihood only.
pub fn log_partial_likelihood(d: &Dataset, w: &WeightVector, beta: &[f64]) -> Result<f64> {
    let eta = linear_predictor(d, beta)?;
    Ok(evaluate(d, w, &eta, false)?.loglik)
}

fn evaluate(d: &Dataset, w: &WeightVector, eta: &[f64], want_info: bool) -> Result<ScoreInfo> {
    let r = d.dim();
    let mut grad = vec![0.0; r];
    // sum of dn * S2 / S0 (upper triangle) and rows sqrt(dn) * S1 / S0
    let mut second = vec![0.0; r * r];
    let n_times: usize = d.strata().iter().map(|s| s.event_times().len()).sum();
    let mut means: Vec<f64> = Vec::with_capacity(if want_info { n_times * r } else { 0 });
    let mut loglik = 0.0;
    let risk = relative_risk(d, eta);
    sweep(d, w, eta, &risk, want_info, |p| {
        if p.dn == 0.0 {
            return Ok(());
        }
        loglik += p.event_eta - p.dn * (p.s0.ln() + p.shift);
        let inv = 1.0 / p.s0;
        for ((g, s1), ex) in grad.iter_mut().zip(p.s1).zip(p.event_x) {
            *g += ex - p.dn * inv * s1;
        }
        if want_info {
            let c = p.dn * inv;
            for (acc, s2) in second.iter_mut().zip(p.s2) {
                *acc += c * s2;
            }
            let root = p.dn.sqrt() * inv;
            means.extend(p.s1.iter().map(|s1| root * s1));
        }
        Ok(())
    })?;
    let n = d.population() as f64;
    let info = if want_info {
        // column-major r x K, so M M^T sums the outer products
        let m = DMatrix::from_vec(r, means.len() / r.max(1), means);
        let outer = &m * m.transpose();
        let mut h = DMatrix::from_row_slice(r, r, &full_square(&second, r, 1.0));
        h -= outer;
        h / n
    } else {
        DMatrix::zeros(r, r)
    };
    Ok(ScoreInfo {
        gradient: DVector::from_vec(grad),
        info,
        loglik,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonOptions {
    pub init: Option<Vec<f64>>,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            init: None,
            tol: 1e-9,
            max_iter: 25,
        }
    }
}

const MAX_HALVINGS: usize = 10;
const DIVERGENCE_BOUND: f64 = 50.0;

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub beta: DVector<f64>,
    /// Observed information scaled by the population size `n`.
    pub info: DMatrix<f64>,
    pub gradient: DVector<f64>,
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    pub max_grad_norm: f64,
    pub n: usize,
}

impl FitResult {
    pub fn require_converged(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::NotConverged {
                iterations: self.iterations,
            })
        }
    }

    /// Full-data asymptotic covariance `n^{-1} I^{-1}`.
    pub fn covariance(&self) -> Result<DMatrix<f64>> {
        Ok(spd_inverse(&self.info)? / self.n as f64)
    }
}

/// Newton-Raphson with step halving on the weighted partial likelihood.
/// Non-convergence is reported through `FitResult::converged`.
pub fn newton_raphson(d: &Dataset, w: &WeightVector, opts: &NewtonOptions) -> Result<FitResult> {
    if opts.max_iter == 0 || !(opts.tol > 0.0) {
        return Err(Error::InvalidArgument(
            "max_iter must be >= 1 and tol > 0".into(),
        ));
    }
    let r = d.dim();
    let n = d.population() as f64;
    let mut beta = match &opts.init {
        Some(init) if init.len() != r => {
            return Err(Error::BetaLength {
                expected: r,
                found: init.len(),
            })
        }
        Some(init) => DVector::from_column_slice(init),
        None => DVector::zeros(r),
    };
    let mut cur = score_and_info(d, w, beta.as_slice())?;
    let mut converged = max_abs(&cur.gradient) < opts.tol * n;
    let mut iterations = 0;

    while !converged && iterations < opts.max_iter {
        iterations += 1;
        let inv = spd_inverse(&cur.info)?;
        let mut step = inv * &cur.gradient / n;
        let mut candidate = &beta + &step;
        let mut next = score_and_info(d, w, candidate.as_slice());
        let mut halvings = 0;
        while halvings < MAX_HALVINGS
            && next.as_ref().map_or(true, |s| !(s.loglik >= cur.loglik))
        {
            step *= 0.5;
            candidate = &beta + &step;
            next = score_and_info(d, w, candidate.as_slice());
            halvings += 1;
        }
        let next = next?;
        if !(next.loglik >= cur.loglik) {
            // no ascent direction left at machine precision
            converged = max_abs(&cur.gradient) < opts.tol.sqrt() * n;
            break;
        }
        let rel_change = (next.loglik - cur.loglik).abs() / cur.loglik.abs().max(f64::MIN_POSITIVE);
        beta = candidate;
        cur = next;
        let grad_max = max_abs(&cur.gradient);
        if max_abs(&beta) > DIVERGENCE_BOUND && grad_max >= opts.tol * n {
            return Err(Error::MonotoneLikelihood {
                max_abs_beta: max_abs(&beta),
            });
        }
        converged = rel_change < opts.tol || grad_max < opts.tol * n;
    }

    Ok(FitResult {
        max_grad_norm: max_abs(&cur.gradient),
        beta,
        info: cur.info,
        gradient: cur.gradient,
        loglik: cur.loglik,
        iterations,
        converged,
        n: d.population(),
    })
}

/// Breslow cumulative baseline hazard of one stratum.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineHazard {
    pub stratum: u32,
    pub times: Vec<f64>,
    pub increments: Vec<f64>,
    pub cumulative: Vec<f64>,
    pub variance: Option<Vec<f64>>,
}

impl BaselineHazard {
    /// Right-continuous step-function value at `t`.
    pub fn cumhaz_at(&self, t: f64) -> f64 {
        match self.times.partition_point(|&u| u <= t) {
            0 => 0.0,
            k => self.cumulative[k - 1],
        }
    }

    pub fn variance_at(&self, t: f64) -> Option<f64> {
        let var = self.variance.as_ref()?;
        Some(match self.times.partition_point(|&u| u <= t) {
            0 => 0.0,
            k => var[k - 1],
        })
    }
}

/// Per-stratum increment pieces collected in one sweep.
pub(crate) struct BreslowParts {
    pub times: Vec<Vec<f64>>,
    pub increments: Vec<Vec<f64>>,
    /// `dN / S0^2` per event time.
    pub inv_sq: Vec<Vec<f64>>,
    /// `S1 dN / S0^2` per event time, row-major `K x r`.
    pub h_incr: Vec<Vec<f64>>,
}

pub(crate) fn breslow_parts(d: &Dataset, w: &WeightVector, beta: &[f64]) -> Result<BreslowParts> {
    let eta = linear_predictor(d, beta)?;
    let r = d.dim();
    let m = d.strata().len();
    let mut parts = BreslowParts {
        times: d.strata().iter().map(|s| s.event_times().to_vec()).collect(),
        increments: d.strata().iter().map(|s| vec![0.0; s.event_times().len()]).collect(),
        inv_sq: d.strata().iter().map(|s| vec![0.0; s.event_times().len()]).collect(),
        h_incr: d
            .strata()
            .iter()
            .map(|s| vec![0.0; s.event_times().len() * r])
            .collect(),
    };
    debug_assert_eq!(parts.times.len(), m);
    let risk = relative_risk(d, &eta);
    sweep(d, w, &eta, &risk, false, |p| {
        if p.dn == 0.0 {
            return Ok(());
        }
        let unshift = (-p.shift).exp();
        parts.increments[p.slot][p.k] = p.dn / p.s0 * unshift;
        parts.inv_sq[p.slot][p.k] = p.dn / (p.s0 * p.s0) * unshift * unshift;
        let h = &mut parts.h_incr[p.slot][p.k * r..(p.k + 1) * r];
        for a in 0..r {
            h[a] = p.s1[a] * p.dn / (p.s0 * p.s0) * unshift;
        }
        Ok(())
    })?;
    Ok(parts)
}

/// Breslow estimator `sum dN(t) / S0(beta, t)`, one curve per stratum.
pub fn breslow(d: &Dataset, w: &WeightVector, beta: &[f64]) -> Result<Vec<BaselineHazard>> {
    let parts = breslow_parts(d, w, beta)?;
    Ok(d.strata()
        .iter()
        .enumerate()
        .map(|(s, st)| {
            let increments = parts.increments[s].clone();
            let cumulative = increments
                .iter()
                .scan(0.0, |acc, v| {
                    *acc += v;
                    Some(*acc)
                })
                .collect();
            BaselineHazard {
                stratum: st.label,
                times: parts.times[s].clone(),
                increments,
                cumulative,
                variance: None,
            }
        })
        .collect())
}
