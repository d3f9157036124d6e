//! Two-step subsampled estimator and its variance estimators.

use nalgebra::{DMatrix, DVector};
use serde_json::json;

use crate::cox::{breslow_parts, newton_raphson, BaselineHazard, FitResult, NewtonOptions, WeightVector};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{spd_inverse, symmetrize};
use crate::sampling::{
    draw, informative_censored, probs_a, probs_l, probs_uniform, score_residuals, Method,
    SamplingPlan, ScoreResiduals, Subsample, SubsampleDraw,
};

pub const SCHEMA_VERSION: u32 = 1;

const PILOT_STREAM: u64 = 0x5049_4c4f_5400_0001;
const FINAL_STREAM: u64 = 0x4649_4e41_4c00_0002;

/// SplitMix64 finalizer, used to derive independent seeds from one master seed.
pub fn mix_seed(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhiSource {
    /// `phi~` from the subsample alone.
    Subsample,
    /// `phi` from full-data residuals at the final estimate.
    FullData,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoStepOptions {
    pub q: usize,
    pub method: Method,
    pub seed: u64,
    pub newton: NewtonOptions,
    pub phi: PhiSource,
    /// Use the full-data `S0` in the Breslow estimator instead of the
    /// weighted subsample sums.
    pub full_data_breslow: bool,
    pub require_converged: bool,
}

impl TwoStepOptions {
    pub fn new(q: usize, method: Method, seed: u64) -> Self {
        Self {
            q,
            method,
            seed,
            newton: NewtonOptions::default(),
            phi: PhiSource::Subsample,
            full_data_breslow: false,
            require_converged: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DrawMeta {
    pub q: usize,
    pub method: Method,
    pub master_seed: u64,
    pub pilot_seed: u64,
    pub final_seed: u64,
    /// `(record index, multiplicity)` of each distinct censored record drawn.
    pub pilot_multiplicities: Vec<(usize, u32)>,
    pub final_multiplicities: Vec<(usize, u32)>,
    pub pilot_iterations: usize,
    pub final_iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubsampleEstimate {
    pub beta: DVector<f64>,
    pub cov_beta: DMatrix<f64>,
    pub phi: DMatrix<f64>,
    pub baseline: Vec<BaselineHazard>,
    pub pilot_beta: DVector<f64>,
    pub fit: FitResult,
    pub plan: SamplingPlan,
    pub meta: DrawMeta,
}

impl SubsampleEstimate {
    pub fn se(&self) -> Vec<f64> {
        self.cov_beta.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect()
    }

    /// Versioned JSON result document.
    pub fn to_json(&self) -> serde_json::Value {
        let r = self.beta.len();
        let cov: Vec<Vec<f64>> = (0..r)
            .map(|a| (0..r).map(|b| self.cov_beta[(a, b)]).collect())
            .collect();
        json!({
            "schema_version": SCHEMA_VERSION,
            "beta": self.beta.as_slice(),
            "se": self.se(),
            "cov": cov,
            "pilot_beta": self.pilot_beta.as_slice(),
            "baseline": baseline_json(&self.baseline),
            "meta": {
                "q": self.meta.q,
                "method": self.meta.method.as_str(),
                "seeds": {
                    "master": self.meta.master_seed,
                    "pilot": self.meta.pilot_seed,
                    "final": self.meta.final_seed,
                },
                "iterations": {
                    "pilot": self.meta.pilot_iterations,
                    "final": self.meta.final_iterations,
                },
                "converged": self.meta.converged,
                "distinct_censored": {
                    "pilot": self.meta.pilot_multiplicities.len(),
                    "final": self.meta.final_multiplicities.len(),
                },
                "n": self.fit.n,
            },
        })
    }
}

pub fn baseline_json(baseline: &[BaselineHazard]) -> serde_json::Value {
    let mut rows = Vec::new();
    for h in baseline {
        for k in 0..h.times.len() {
            rows.push(json!({
                "stratum": h.stratum,
                "t": h.times[k],
                "cumhaz": h.cumulative[k],
                "var": h.variance.as_ref().map(|v| v[k]),
            }));
        }
    }
    serde_json::Value::Array(rows)
}

/// Weighted fit on all events plus the records of `drawn`.
pub fn fit_draw(
    d: &Dataset,
    plan: &SamplingPlan,
    drawn: &SubsampleDraw,
    newton: &NewtonOptions,
) -> Result<(Subsample, FitResult)> {
    let sub = drawn.subsample(d, plan)?;
    let fit = newton_raphson(&sub.data, &sub.weights, newton)?;
    Ok((sub, fit))
}

fn drawn_pairs(plan: &SamplingPlan, drawn: &SubsampleDraw) -> Vec<(usize, u32)> {
    plan.records
        .iter()
        .zip(&drawn.multiplicities)
        .filter(|(_, &r)| r > 0)
        .map(|(&i, &r)| (i, r))
        .collect()
}

pub fn two_step_fit(d: &Dataset, opts: &TwoStepOptions) -> Result<SubsampleEstimate> {
    if d.n_events() == 0 {
        return Err(Error::NoEvents);
    }
    if opts.q < d.dim() + 1 {
        return Err(Error::InvalidArgument(format!(
            "q must be at least r + 1 = {}",
            d.dim() + 1
        )));
    }
    let pilot_seed = mix_seed(opts.seed ^ PILOT_STREAM);
    let final_seed = mix_seed(opts.seed ^ FINAL_STREAM);

    let uniform = probs_uniform(d)?;
    let pilot_draw = draw(&uniform, opts.q, pilot_seed)?;
    let (pilot_sub, pilot_fit) = fit_draw(d, &uniform, &pilot_draw, &opts.newton)
        .and_then(|(s, f)| Ok((s, f.require_converged()?)))
        .map_err(|e| Error::PilotDegenerate(Box::new(e)))?;

    let pilot_multiplicities = drawn_pairs(&uniform, &pilot_draw);
    let (plan, final_draw, sub, fit) = match opts.method {
        Method::Uniform => (uniform, pilot_draw.clone(), pilot_sub, pilot_fit.clone()),
        method => {
            let res = score_residuals(d, pilot_fit.beta.as_slice(), &WeightVector::ones(d.len()))?;
            let pool = informative_censored(d);
            let plan = match method {
                Method::AOpt => probs_a(&res, &pilot_fit.info, &pool)?,
                _ => probs_l(&res, &pool)?,
            };
            let final_draw = draw(&plan, opts.q, final_seed)?;
            let mut newton = opts.newton.clone();
            newton.init.get_or_insert_with(|| pilot_fit.beta.as_slice().to_vec());
            let (sub, fit) = fit_draw(d, &plan, &final_draw, &newton)?;
            (plan, final_draw, sub, fit)
        }
    };
    let fit = if opts.require_converged {
        fit.require_converged()?
    } else {
        fit
    };

    let phi = match opts.phi {
        PhiSource::Subsample => {
            let res_w = score_residuals(&sub.data, fit.beta.as_slice(), &sub.weights)?;
            phi_subsample(&res_w, &sub, final_draw.q)
        }
        PhiSource::FullData => {
            let res = score_residuals(d, fit.beta.as_slice(), &WeightVector::ones(d.len()))?;
            phi_full(&res, &plan, d)?
        }
    };
    let cov_beta = cov_beta(&fit, &phi, final_draw.q, d.population())?;
    let baseline = if opts.full_data_breslow {
        baseline_variance(d, &WeightVector::ones(d.len()), fit.beta.as_slice(), &cov_beta)?
    } else {
        baseline_variance(&sub.data, &sub.weights, fit.beta.as_slice(), &cov_beta)?
    };

    let meta = DrawMeta {
        q: opts.q,
        method: opts.method,
        master_seed: opts.seed,
        pilot_seed,
        final_seed: if opts.method == Method::Uniform {
            pilot_seed
        } else {
            final_seed
        },
        pilot_multiplicities,
        final_multiplicities: drawn_pairs(&plan, &final_draw),
        pilot_iterations: pilot_fit.iterations,
        final_iterations: fit.iterations,
        converged: fit.converged,
    };
    Ok(SubsampleEstimate {
        beta: fit.beta.clone(),
        cov_beta,
        phi,
        baseline,
        pilot_beta: pilot_fit.beta,
        fit,
        plan,
        meta,
    })
}

/// `n^-2 [sum_C a a'/p - (sum_C a)(sum_C a)']` over every censored record.
pub fn phi_full(res: &ScoreResiduals, plan: &SamplingPlan, d: &Dataset) -> Result<DMatrix<f64>> {
    let r = res.dim();
    let mut outer = DMatrix::zeros(r, r);
    let mut total = DVector::zeros(r);
    for i in d.censored_indices() {
        let a = DVector::from_column_slice(res.row(i));
        let p = plan.prob_of(i);
        if p == 0.0 {
            if a.iter().any(|v| *v != 0.0) {
                return Err(Error::ZeroProbPositiveResidual(i));
            }
            continue;
        }
        outer += &a * a.transpose() / p;
        total += a;
    }
    let n = d.population() as f64;
    Ok(symmetrize(&((outer - &total * total.transpose()) / (n * n))))
}

/// `n^-2 [q^-1 sum R a a'/p^2 - q^-2 (sum R a/p)(sum R a/p)']` over the drawn
/// censored records, with `a` the weighted residuals on the subsample.
pub fn phi_subsample(res_w: &ScoreResiduals, sub: &Subsample, q: usize) -> DMatrix<f64> {
    let r = res_w.dim();
    let mut outer = DMatrix::zeros(r, r);
    let mut total = DVector::zeros(r);
    for k in 0..sub.data.len() {
        let m = sub.multiplicity[k];
        if m == 0 {
            continue;
        }
        let p = sub.prob[k];
        let a = DVector::from_column_slice(res_w.row(k));
        outer += &a * a.transpose() * (m as f64 / (p * p));
        total += a * (m as f64 / p);
    }
    let q = q as f64;
    let n = sub.data.population() as f64;
    symmetrize(&((outer / q - &total * total.transpose() / (q * q)) / (n * n)))
}

/// `n^-1 I^-1 + q^-1 I^-1 phi I^-1`.
pub fn cov_beta(fit: &FitResult, phi: &DMatrix<f64>, q: usize, n: usize) -> Result<DMatrix<f64>> {
    let inv = spd_inverse(&fit.info)?;
    let cov = &inv / n as f64 + &inv * phi * &inv / q as f64;
    Ok(symmetrize(&cov))
}

/// Breslow curves with pointwise variance
/// `sum_{u<=t} dN/S0^2 + H(t)' covb H(t)`, `H(t) = sum_{u<=t} S1 dN/S0^2`.
pub fn baseline_variance(
    d: &Dataset,
    w: &WeightVector,
    beta: &[f64],
    covb: &DMatrix<f64>,
) -> Result<Vec<BaselineHazard>> {
    let parts = breslow_parts(d, w, beta)?;
    let r = d.dim();
    Ok(d.strata()
        .iter()
        .enumerate()
        .map(|(s, st)| {
            let increments = parts.increments[s].clone();
            let mut cumulative = Vec::with_capacity(increments.len());
            let mut variance = Vec::with_capacity(increments.len());
            let (mut lam, mut first) = (0.0, 0.0);
            let mut h = DVector::zeros(r);
            for k in 0..increments.len() {
                lam += increments[k];
                first += parts.inv_sq[s][k];
                for a in 0..r {
                    h[a] += parts.h_incr[s][k * r + a];
                }
                cumulative.push(lam);
                variance.push(first + (h.transpose() * covb * &h)[(0, 0)]);
            }
            BaselineHazard {
                stratum: st.label,
                times: parts.times[s].clone(),
                increments,
                cumulative,
                variance: Some(variance),
            }
        })
        .collect())
}
