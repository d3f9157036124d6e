//! Synthetic survival data with piecewise-constant baseline hazards.
//!
//! Each subject draws from its own ChaCha stream, so a dataset depends only
//! on the configuration and seed and not on how generation is scheduled.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::data::{Dataset, SurvivalRecord};
use crate::error::{Error, Result};

pub const DEFAULT_BETA: [f64; 6] = [3.0, -5.0, 1.0, -1.0, 1.0, -3.0];
pub const BREAK_TIME: f64 = 6.0;
pub const EARLY_RATE: f64 = 0.001;
pub const CENSOR_RATE: f64 = 0.2;

pub const TEST_COEF: f64 = 0.25;
pub const CENSOR_BETA: [f64; 6] = [0.15, -0.1, 0.15, -0.1, 0.15, -0.1];
pub const CENSOR_TEST_COEF: f64 = 0.2;
pub const CENSOR_RATES: (f64, f64) = (0.2, 0.15);
pub const MAX_TESTS: usize = 4;
pub const TEST_GAP: (f64, f64) = (3.0, 12.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Setting {
    A,
    B,
    C,
}

impl std::str::FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(Self::A),
            "B" | "b" => Ok(Self::B),
            "C" | "c" => Ok(Self::C),
            other => Err(Error::InvalidArgument(format!("unknown setting `{other}`"))),
        }
    }
}

impl std::fmt::Display for Setting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::A => "A",
            Self::B => "B",
            Self::C => "C",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub setting: Setting,
    pub n: usize,
    pub beta: Vec<f64>,
    /// Baseline hazard from `BREAK_TIME` on.
    pub late_rate: f64,
    pub censor_rate: f64,
    pub delayed_entry: bool,
    pub time_dependent: bool,
    pub seed: u64,
}

impl SimConfig {
    pub fn new(setting: Setting, n: usize, seed: u64) -> Self {
        Self {
            setting,
            n,
            beta: DEFAULT_BETA.to_vec(),
            late_rate: default_late_rate(setting, false),
            censor_rate: CENSOR_RATE,
            delayed_entry: false,
            time_dependent: false,
            seed,
        }
    }

    pub fn with_delayed_entry(mut self, on: bool) -> Self {
        self.delayed_entry = on;
        self
    }

    /// Also resets the late baseline rate to the design's default.
    pub fn with_time_dependent(mut self, on: bool) -> Self {
        self.time_dependent = on;
        self.late_rate = default_late_rate(self.setting, on);
        self
    }

    /// Coefficients of the fitted model, including the test-count
    /// coefficient for time-dependent data.
    pub fn true_beta(&self) -> Vec<f64> {
        let mut b = self.beta.clone();
        if self.time_dependent {
            b.push(TEST_COEF);
        }
        b
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidArgument("n must be at least 1".into()));
        }
        if self.beta.len() != DEFAULT_BETA.len() {
            return Err(Error::BetaLength {
                expected: DEFAULT_BETA.len(),
                found: self.beta.len(),
            });
        }
        if !(self.late_rate > 0.0 && self.censor_rate > 0.0) {
            return Err(Error::InvalidArgument("rates must be positive".into()));
        }
        Ok(())
    }
}

pub fn default_late_rate(setting: Setting, time_dependent: bool) -> f64 {
    match (setting, time_dependent) {
        (Setting::A, _) => 0.075,
        (Setting::B, false) => 0.15,
        (Setting::B, true) => 0.05,
        (Setting::C, _) => 0.05,
    }
}

fn subject_rng(seed: u64, subject: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(subject as u64);
    rng
}

/// One subject's six covariates.
pub fn gen_covariates<R: Rng>(setting: Setting, rng: &mut R) -> Vec<f64> {
    match setting {
        Setting::A => (0..6).map(|_| rng.random_range(0.0..4.0)).collect(),
        Setting::B => [1.0, 6.0, 2.0, 2.0, 1.0, 6.0]
            .iter()
            .map(|&u| rng.random_range(0.0..u))
            .collect(),
        Setting::C => {
            let x1 = rng.random_range(0.0..4.0);
            let x2 = rng.random_range(0.0..4.0);
            let x3 = rng.random_range(0.0..4.0);
            // second parameters are standard deviations
            let e4 = Normal::new(0.0, 0.1).expect("valid sd").sample(rng);
            let e5 = Normal::new(0.0, 1.0).expect("valid sd").sample(rng);
            let e6 = Normal::new(1.0, 1.5).expect("valid sd").sample(rng);
            vec![x1, x2, x3, 0.5 * x1 + 0.5 * x2 + e4, x1 + e5, x1 + e6]
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn unit_exponential<R: Rng>(rng: &mut R) -> f64 {
    // open interval avoids ln(0)
    -(1.0 - rng.random::<f64>()).ln()
}

/// Time at which the piecewise-constant cumulative hazard reaches `target`.
/// `knots` are the interior change points; `rates[k]` applies after
/// `knots[k - 1]`.
fn invert_piecewise(target: f64, knots: &[f64], rates: &[f64]) -> f64 {
    let mut start = 0.0;
    let mut remaining = target;
    for (k, &rate) in rates.iter().enumerate() {
        let end = knots.get(k).copied().unwrap_or(f64::INFINITY);
        let mass = rate * (end - start);
        if remaining <= mass {
            return start + remaining / rate;
        }
        remaining -= mass;
        start = end;
    }
    f64::INFINITY
}

/// Failure and censoring for a time-independent design.
pub fn gen_survival<R: Rng>(cfg: &SimConfig, x: &[f64], id: u64, rng: &mut R) -> SurvivalRecord {
    let risk = dot(&cfg.beta, x).exp();
    let v = invert_piecewise(
        unit_exponential(rng),
        &[BREAK_TIME],
        &[EARLY_RATE * risk, cfg.late_rate * risk],
    );
    let c = unit_exponential(rng) / cfg.censor_rate;
    let t = v.min(c);
    let entry = if cfg.delayed_entry {
        rng.random_range(0.0..0.9 * t)
    } else {
        0.0
    };
    SurvivalRecord::new(id, entry, t, v < c, x.to_vec())
}

/// Start-stop records for one subject whose last covariate counts screening
/// tests taken so far.
pub fn gen_time_dependent<R: Rng>(
    cfg: &SimConfig,
    x: &[f64],
    id: u64,
    rng: &mut R,
) -> Vec<SurvivalRecord> {
    let mut tests = Vec::with_capacity(MAX_TESTS);
    let mut at = 0.0;
    for _ in 0..MAX_TESTS {
        at += rng.random_range(TEST_GAP.0..TEST_GAP.1);
        tests.push(at);
    }
    let mut knots: Vec<f64> = tests.iter().copied().chain([BREAK_TIME]).collect();
    knots.sort_by(f64::total_cmp);
    let piece_rates = |early: f64, late: f64, lin: f64, coef: f64| -> Vec<f64> {
        let mut start = 0.0;
        knots
            .iter()
            .copied()
            .chain([f64::INFINITY])
            .map(|end| {
                let count = tests.iter().filter(|&&s| s <= start).count() as f64;
                let base = if start < BREAK_TIME { early } else { late };
                start = end;
                base * (lin + coef * count).exp()
            })
            .collect()
    };
    let fail = piece_rates(EARLY_RATE, cfg.late_rate, dot(&cfg.beta, x), TEST_COEF);
    let cens = piece_rates(
        CENSOR_RATES.0,
        CENSOR_RATES.1,
        dot(&CENSOR_BETA, x),
        CENSOR_TEST_COEF,
    );
    let v = invert_piecewise(unit_exponential(rng), &knots, &fail);
    let c = invert_piecewise(unit_exponential(rng), &knots, &cens);
    let t = v.min(c);
    let entry = if cfg.delayed_entry {
        rng.random_range(0.0..0.9 * t)
    } else {
        0.0
    };

    let mut out = Vec::new();
    let mut start = entry;
    let mut count = tests.iter().filter(|&&s| s <= entry).count();
    for &s in tests.iter().filter(|&&s| s > entry && s < t) {
        out.push(piece(id, start, s, false, x, count));
        start = s;
        count += 1;
    }
    out.push(piece(id, start, t, v < c, x, count));
    out
}

fn piece(id: u64, entry: f64, exit: f64, event: bool, x: &[f64], count: usize) -> SurvivalRecord {
    let mut cov = x.to_vec();
    cov.push(count as f64);
    SurvivalRecord::new(id, entry, exit, event, cov)
}

/// Generates the full dataset described by `cfg`.
pub fn simulate(cfg: &SimConfig) -> Result<Dataset> {
    cfg.validate()?;
    let per_subject: Vec<Vec<SurvivalRecord>> = (0..cfg.n)
        .into_par_iter()
        .map(|i| {
            let mut rng = subject_rng(cfg.seed, i);
            let x = gen_covariates(cfg.setting, &mut rng);
            if cfg.time_dependent {
                gen_time_dependent(cfg, &x, i as u64, &mut rng)
            } else {
                vec![gen_survival(cfg, &x, i as u64, &mut rng)]
            }
        })
        .collect();
    Dataset::new(per_subject.into_iter().flatten().collect())
}

/// Column names used when exporting simulated data.
pub fn covariate_names(cfg: &SimConfig) -> Vec<String> {
    let mut names: Vec<String> = (1..=DEFAULT_BETA.len()).map(|k| format!("x{k}")).collect();
    if cfg.time_dependent {
        names.push("tests".into());
    }
    names
}
