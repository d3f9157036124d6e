//! Replicate runner and accuracy metrics for simulated benchmarks.

use std::io::Write;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::cox::{newton_raphson, NewtonOptions, WeightVector};
use crate::error::{Error, Result};
use crate::linalg::frobenius;
use crate::sampling::Method;
use crate::simgen::{simulate, SimConfig};
use crate::two_step::{mix_seed, two_step_fit, PhiSource, TwoStepOptions};

pub const SCHEMA_VERSION: u32 = 1;

/// Column order of the benchmark CSV.
pub const CSV_COLUMNS: [&str; 15] = [
    "setting",
    "delayed_entry",
    "time_dependent",
    "method",
    "q_mult",
    "q_mean",
    "q_sd",
    "rmse_true",
    "rmse_pl",
    "rr",
    "runtime_mean",
    "speedup",
    "n_events_mean",
    "n_ok",
    "n_failed",
];

/// `sqrt(mean ||b - target||^2)`.
pub fn rmse(estimates: &[DVector<f64>], target: &DVector<f64>) -> f64 {
    assert!(!estimates.is_empty(), "rmse of an empty set");
    let total: f64 = estimates.iter().map(|b| (b - target).norm_squared()).sum();
    (total / estimates.len() as f64).sqrt()
}

/// Sample covariance with denominator `m - 1`, computed in two passes.
pub fn empirical_cov(estimates: &[DVector<f64>]) -> DMatrix<f64> {
    assert!(estimates.len() >= 2, "need at least two estimates");
    let r = estimates[0].len();
    let m = estimates.len() as f64;
    let mean = estimates
        .iter()
        .fold(DVector::zeros(r), |acc: DVector<f64>, b| acc + b)
        / m;
    let mut cov = DMatrix::zeros(r, r);
    for b in estimates {
        let dev = b - &mean;
        cov += &dev * dev.transpose();
    }
    cov / (m - 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeAgreement {
    pub mean_se: Vec<f64>,
    pub empirical_sd: Vec<f64>,
    /// Frobenius distance between the mean estimated and the empirical
    /// covariance.
    pub frobenius: f64,
}

pub fn se_agreement(replicate_covs: &[DMatrix<f64>], empirical: &DMatrix<f64>) -> SeAgreement {
    assert!(!replicate_covs.is_empty(), "no covariance estimates");
    let m = replicate_covs.len() as f64;
    let r = empirical.nrows();
    let mut mean_cov = DMatrix::zeros(r, r);
    let mut mean_se = vec![0.0; r];
    for c in replicate_covs {
        mean_cov += c;
        for (k, se) in mean_se.iter_mut().enumerate() {
            *se += c[(k, k)].max(0.0).sqrt() / m;
        }
    }
    mean_cov /= m;
    SeAgreement {
        mean_se,
        empirical_sd: (0..r).map(|k| empirical[(k, k)].max(0.0).sqrt()).collect(),
        frobenius: frobenius(&(mean_cov - empirical)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateResult {
    pub replicate: usize,
    /// `pl`, or a `Method` tag with `-ps` appended on start-stop data.
    pub method: String,
    pub q_mult: f64,
    pub beta: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
    pub runtime_seconds: f64,
    pub q_used: usize,
    pub seed: u64,
    pub n_events: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateFailure {
    pub replicate: usize,
    pub method: String,
    pub q_mult: f64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    /// `sim.seed` is ignored; replicate seeds derive from `master_seed`.
    pub sim: SimConfig,
    pub methods: Vec<Method>,
    pub q_multipliers: Vec<f64>,
    pub replicates: usize,
    pub master_seed: u64,
    pub newton: NewtonOptions,
    pub phi: PhiSource,
}

impl BenchConfig {
    pub fn new(sim: SimConfig, replicates: usize, master_seed: u64) -> Self {
        Self {
            sim,
            methods: vec![Method::Uniform, Method::LOpt, Method::AOpt],
            q_multipliers: vec![1.0],
            replicates,
            master_seed,
            newton: NewtonOptions::default(),
            phi: PhiSource::Subsample,
        }
    }

    pub fn replicate_seed(&self, replicate: usize) -> u64 {
        mix_seed(self.master_seed ^ mix_seed(replicate as u64))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub setting: String,
    pub delayed_entry: bool,
    pub time_dependent: bool,
    pub method: String,
    pub q_mult: f64,
    pub q_mean: f64,
    pub q_sd: f64,
    pub rmse_true: f64,
    pub rmse_pl: f64,
    pub rr: f64,
    pub runtime_mean: f64,
    /// Mean full-data fit time over mean method time.
    pub speedup: f64,
    pub n_events_mean: f64,
    pub n_ok: usize,
    pub n_failed: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub results: Vec<ReplicateResult>,
    pub failures: Vec<ReplicateFailure>,
    pub rows: Vec<SummaryRow>,
}

fn method_tag(method: Method, pseudo: bool) -> String {
    if pseudo {
        format!("{}-ps", method.as_str())
    } else {
        method.as_str().to_string()
    }
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|a| (0..m.ncols()).map(|b| m[(a, b)]).collect())
        .collect()
}

type ReplicateOutcome = (Vec<ReplicateResult>, Vec<ReplicateFailure>);

fn run_replicate(cfg: &BenchConfig, replicate: usize) -> ReplicateOutcome {
    let seed = cfg.replicate_seed(replicate);
    let mut results = Vec::new();
    let mut failures = Vec::new();
    let fail = |method: String, q_mult: f64, e: Error| ReplicateFailure {
        replicate,
        method,
        q_mult,
        error: e.to_string(),
    };

    let mut sim = cfg.sim.clone();
    sim.seed = seed;
    let d = match simulate(&sim) {
        Ok(d) => d,
        Err(e) => {
            failures.push(fail("data".into(), 0.0, e));
            return (results, failures);
        }
    };
    let started = Instant::now();
    let pl = newton_raphson(&d, &WeightVector::ones(d.len()), &cfg.newton)
        .and_then(|f| f.require_converged());
    let elapsed = started.elapsed().as_secs_f64();
    match pl.and_then(|f| Ok((f.covariance()?, f))) {
        Ok((cov, fit)) => results.push(ReplicateResult {
            replicate,
            method: "pl".into(),
            q_mult: 0.0,
            beta: fit.beta.as_slice().to_vec(),
            cov: matrix_rows(&cov),
            runtime_seconds: elapsed.max(f64::MIN_POSITIVE),
            q_used: 0,
            seed,
            n_events: d.n_events(),
        }),
        Err(e) => failures.push(fail("pl".into(), 0.0, e)),
    }

    for (k, &mult) in cfg.q_multipliers.iter().enumerate() {
        let q = ((mult * d.n_events() as f64).round() as usize).max(d.dim() + 1);
        for (m, &method) in cfg.methods.iter().enumerate() {
            let tag = method_tag(method, sim.time_dependent);
            let mut opts = TwoStepOptions::new(q, method, mix_seed(seed ^ ((k as u64) << 32 | m as u64)));
            opts.newton = cfg.newton.clone();
            opts.phi = cfg.phi;
            let started = Instant::now();
            let est = two_step_fit(&d, &opts);
            let elapsed = started.elapsed().as_secs_f64();
            match est {
                Ok(est) => results.push(ReplicateResult {
                    replicate,
                    method: tag,
                    q_mult: mult,
                    beta: est.beta.as_slice().to_vec(),
                    cov: matrix_rows(&est.cov_beta),
                    runtime_seconds: elapsed.max(f64::MIN_POSITIVE),
                    q_used: q,
                    seed: opts.seed,
                    n_events: d.n_events(),
                }),
                Err(e) => failures.push(fail(tag, mult, e)),
            }
        }
    }
    (results, failures)
}

/// Runs every replicate (in parallel on the current rayon pool) and
/// aggregates one summary row per method and multiplier.
pub fn run_benchmark(cfg: &BenchConfig) -> Result<BenchReport> {
    if cfg.replicates < 1 {
        return Err(Error::InvalidArgument("replicates must be at least 1".into()));
    }
    if cfg.q_multipliers.iter().any(|m| !(*m > 0.0)) {
        return Err(Error::InvalidArgument("q multipliers must be positive".into()));
    }
    let outcomes: Vec<ReplicateOutcome> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| run_replicate(cfg, r))
        .collect();
    let mut results = Vec::new();
    let mut failures = Vec::new();
    for (res, fail) in outcomes {
        results.extend(res);
        failures.extend(fail);
    }
    let rows = summarize(cfg, &results, &failures);
    Ok(BenchReport {
        config: cfg.clone(),
        results,
        failures,
        rows,
    })
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len().max(1) as f64
}

fn sd(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() - 1) as f64).sqrt()
}

fn summarize(
    cfg: &BenchConfig,
    results: &[ReplicateResult],
    failures: &[ReplicateFailure],
) -> Vec<SummaryRow> {
    let truth = DVector::from_vec(cfg.sim.true_beta());
    let pl: Vec<&ReplicateResult> = results.iter().filter(|r| r.method == "pl").collect();
    let pl_by_rep = |rep: usize| pl.iter().find(|p| p.replicate == rep);
    let pl_betas: Vec<DVector<f64>> = pl.iter().map(|p| DVector::from_vec(p.beta.clone())).collect();
    let rmse_pl_true = if pl_betas.is_empty() {
        f64::NAN
    } else {
        rmse(&pl_betas, &truth)
    };
    let pl_runtime = mean(&pl.iter().map(|p| p.runtime_seconds).collect::<Vec<_>>());
    let n_events: Vec<f64> = pl.iter().map(|p| p.n_events as f64).collect();
    let base = |method: String, q_mult: f64| SummaryRow {
        setting: cfg.sim.setting.to_string(),
        delayed_entry: cfg.sim.delayed_entry,
        time_dependent: cfg.sim.time_dependent,
        method,
        q_mult,
        q_mean: 0.0,
        q_sd: 0.0,
        rmse_true: f64::NAN,
        rmse_pl: f64::NAN,
        rr: f64::NAN,
        runtime_mean: f64::NAN,
        speedup: f64::NAN,
        n_events_mean: mean(&n_events),
        n_ok: 0,
        n_failed: 0,
    };

    let mut rows = Vec::new();
    for &mult in &cfg.q_multipliers {
        let mut row = base("pl".into(), mult);
        row.q_mean = mean(&n_events);
        row.q_sd = sd(&n_events);
        row.rmse_true = rmse_pl_true;
        row.rmse_pl = 0.0;
        row.rr = 1.0;
        row.runtime_mean = pl_runtime;
        row.speedup = 1.0;
        row.n_ok = pl.len();
        row.n_failed = failures.iter().filter(|f| f.method == "pl").count();
        rows.push(row);
        for &method in &cfg.methods {
            let tag = method_tag(method, cfg.sim.time_dependent);
            let mine: Vec<&ReplicateResult> = results
                .iter()
                .filter(|r| r.method == tag && r.q_mult == mult)
                .collect();
            let mut row = base(tag.clone(), mult);
            row.n_ok = mine.len();
            row.n_failed = failures
                .iter()
                .filter(|f| f.method == tag && f.q_mult == mult)
                .count();
            if !mine.is_empty() {
                let betas: Vec<DVector<f64>> =
                    mine.iter().map(|r| DVector::from_vec(r.beta.clone())).collect();
                let q: Vec<f64> = mine.iter().map(|r| r.q_used as f64).collect();
                let gaps: Vec<f64> = mine
                    .iter()
                    .filter_map(|r| {
                        pl_by_rep(r.replicate).map(|p| {
                            (DVector::from_vec(r.beta.clone()) - DVector::from_vec(p.beta.clone()))
                                .norm_squared()
                        })
                    })
                    .collect();
                row.q_mean = mean(&q);
                row.q_sd = sd(&q);
                row.rmse_true = rmse(&betas, &truth);
                row.rmse_pl = if gaps.is_empty() {
                    f64::NAN
                } else {
                    mean(&gaps).sqrt()
                };
                row.rr = row.rmse_true / rmse_pl_true;
                row.runtime_mean = mean(&mine.iter().map(|r| r.runtime_seconds).collect::<Vec<_>>());
                row.speedup = pl_runtime / row.runtime_mean;
            }
            rows.push(row);
        }
    }
    rows
}

impl BenchReport {
    pub fn rows_for(&self, method: &str) -> impl Iterator<Item = &SummaryRow> {
        let method = method.to_string();
        self.rows.iter().filter(move |r| r.method == method)
    }

    /// Estimates of one method at one multiplier, ordered by replicate.
    pub fn estimates(&self, method: &str, q_mult: f64) -> Vec<&ReplicateResult> {
        self.results
            .iter()
            .filter(|r| r.method == method && (method == "pl" || r.q_mult == q_mult))
            .collect()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(CSV_COLUMNS)?;
        for r in &self.rows {
            out.write_record([
                r.setting.clone(),
                r.delayed_entry.to_string(),
                r.time_dependent.to_string(),
                r.method.clone(),
                r.q_mult.to_string(),
                r.q_mean.to_string(),
                r.q_sd.to_string(),
                r.rmse_true.to_string(),
                r.rmse_pl.to_string(),
                r.rr.to_string(),
                r.runtime_mean.to_string(),
                r.speedup.to_string(),
                r.n_events_mean.to_string(),
                r.n_ok.to_string(),
                r.n_failed.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> serde_json::Value {
        let c = &self.config;
        serde_json::json!({
            "schema_version": SCHEMA_VERSION,
            "config": {
                "setting": c.sim.setting.to_string(),
                "n": c.sim.n,
                "delayed_entry": c.sim.delayed_entry,
                "time_dependent": c.sim.time_dependent,
                "true_beta": c.sim.true_beta(),
                "methods": c.methods.iter().map(|m| m.as_str()).collect::<Vec<_>>(),
                "q_multipliers": c.q_multipliers,
                "replicates": c.replicates,
                "master_seed": c.master_seed,
            },
            "rows": self.rows,
            "failures": self.failures,
        })
    }
}
