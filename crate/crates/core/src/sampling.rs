//! Score residuals, sampling probabilities and the multinomial draw.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cox::{linear_predictor, relative_risk, sweep, WeightVector};
use crate::data::{Dataset, SplitMap};
use crate::error::{Error, Result};
use crate::linalg::spd_cholesky;

/// Row `i` holds the score residual `a_i(beta)` of record `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreResiduals {
    rows: Vec<f64>,
    dim: usize,
    beta: Vec<f64>,
}

impl ScoreResiduals {
    /// Wraps precomputed row-major residuals.
    pub fn from_rows(rows: Vec<f64>, dim: usize, beta: Vec<f64>) -> Self {
        assert_eq!(rows.len() % dim.max(1), 0, "rows must be a multiple of dim");
        Self { rows, dim, beta }
    }

    pub fn len(&self) -> usize {
        self.rows.len() / self.dim.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> &[f64] {
        &self.rows
    }

    pub fn computed_at_beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn norm(&self, i: usize) -> f64 {
        self.row(i).iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn sum(&self) -> Vec<f64> {
        let mut total = vec![0.0; self.dim];
        for row in self.rows.chunks_exact(self.dim.max(1)) {
            for (t, v) in total.iter_mut().zip(row) {
                *t += v;
            }
        }
        total
    }

    /// Sums pseudo-record residuals back onto the records they were split from.
    pub fn aggregate(&self, map: &SplitMap, n_records: usize) -> Self {
        Self {
            rows: map.aggregate_rows(&self.rows, self.dim, n_records),
            dim: self.dim,
            beta: self.beta.clone(),
        }
    }
}

/// `a_i(beta) = e^{eta_i} (X_i G0_i - G1_i)` with `G0_i` and `G1_i` the sums of
/// `dN/S0` and `S1 dN/S0^2` over the event times in `(entry_i, exit_i]`.
pub fn score_residuals(d: &Dataset, beta: &[f64], w: &WeightVector) -> Result<ScoreResiduals> {
    let eta = linear_predictor(d, beta)?;
    let r = d.dim();
    // prefix sums over each stratum's event grid, on the shifted scale
    let mut g0: Vec<Vec<f64>> = d
        .strata()
        .iter()
        .map(|s| vec![0.0; s.event_times().len() + 1])
        .collect();
    let mut g1: Vec<Vec<f64>> = d
        .strata()
        .iter()
        .map(|s| vec![0.0; (s.event_times().len() + 1) * r])
        .collect();
    let risk = relative_risk(d, &eta);
    sweep(d, w, &eta, &risk, false, |p| {
        if p.dn > 0.0 {
            g0[p.slot][p.k + 1] = p.dn / p.s0;
            let inc = p.dn / (p.s0 * p.s0);
            let dst = &mut g1[p.slot][(p.k + 1) * r..(p.k + 2) * r];
            for (v, s1) in dst.iter_mut().zip(p.s1) {
                *v = s1 * inc;
            }
        }
        Ok(())
    })?;
    for (c0, c1) in g0.iter_mut().zip(g1.iter_mut()) {
        for k in 1..c0.len() {
            c0[k] += c0[k - 1];
            for a in 0..r {
                c1[k * r + a] += c1[(k - 1) * r + a];
            }
        }
    }

    let mut rows = vec![0.0; d.len() * r];
    if r > 0 {
        for (i, row) in rows.chunks_exact_mut(r).enumerate() {
            let (lo, hi) = d.event_span(i);
            if hi == lo {
                continue;
            }
            let slot = d.stratum_slot(i);
            let (c0, c1) = (&g0[slot], &g1[slot]);
            let scale = risk.values[i];
            let dg0 = c0[hi] - c0[lo];
            let (g_hi, g_lo) = (&c1[hi * r..(hi + 1) * r], &c1[lo * r..(lo + 1) * r]);
            for (((v, x), gh), gl) in row.iter_mut().zip(d.covariates(i)).zip(g_hi).zip(g_lo) {
                *v = scale * (x * dg0 - (gh - gl));
            }
        }
    }
    Ok(ScoreResiduals {
        rows,
        dim: r,
        beta: beta.to_vec(),
    })
}

/// Censored records whose interval `(entry, exit]` contains no event time of
/// their stratum.
pub fn exclusion_set(d: &Dataset) -> Vec<usize> {
    (0..d.len())
        .filter(|&i| {
            let (lo, hi) = d.event_span(i);
            !d.is_event(i) && lo == hi
        })
        .collect()
}

/// Censored records outside the exclusion set.
pub fn informative_censored(d: &Dataset) -> Vec<usize> {
    (0..d.len())
        .filter(|&i| {
            let (lo, hi) = d.event_span(i);
            !d.is_event(i) && lo < hi
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "uniform")]
    Uniform,
    #[serde(rename = "l-opt")]
    LOpt,
    #[serde(rename = "a-opt")]
    AOpt,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Uniform => "uniform",
            Self::LOpt => "l-opt",
            Self::AOpt => "a-opt",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "uniform" => Ok(Self::Uniform),
            "l-opt" | "lopt" | "l_opt" => Ok(Self::LOpt),
            "a-opt" | "aopt" | "a_opt" => Ok(Self::AOpt),
            other => Err(Error::InvalidArgument(format!("unknown method `{other}`"))),
        }
    }
}

/// Sampling probabilities over a pool of censored records.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingPlan {
    /// Dataset indices of the pool, ascending.
    pub records: Vec<usize>,
    /// Probability of each pool record, parallel to `records`.
    pub probs: Vec<f64>,
    pub method: Method,
    /// Pool records with probability zero, ascending.
    pub zero_set: Vec<usize>,
    pub computed_at_beta: Option<Vec<f64>>,
}

impl SamplingPlan {
    fn from_scores(
        pool: &[usize],
        scores: Vec<f64>,
        method: Method,
        beta: Option<Vec<f64>>,
    ) -> Result<Self> {
        let total: f64 = scores.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::AllZeroResiduals);
        }
        let probs: Vec<f64> = scores.iter().map(|s| s / total).collect();
        let zero_set = pool
            .iter()
            .zip(&probs)
            .filter(|(_, p)| **p == 0.0)
            .map(|(i, _)| *i)
            .collect();
        Ok(Self {
            records: pool.to_vec(),
            probs,
            method,
            zero_set,
            computed_at_beta: beta,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Probability of dataset record `i`, zero if it is not in the pool.
    pub fn prob_of(&self, i: usize) -> f64 {
        self.records
            .binary_search(&i)
            .map_or(0.0, |pos| self.probs[pos])
    }

    /// Writes `record_id,source_id,prob` rows.
    pub fn write_csv<W: Write>(&self, d: &Dataset, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(["record_id", "source_id", "prob"])?;
        for (&i, p) in self.records.iter().zip(&self.probs) {
            out.write_record([i.to_string(), d.source_id(i).to_string(), p.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

fn sorted_pool(censored: &[usize]) -> Vec<usize> {
    let mut pool = censored.to_vec();
    pool.sort_unstable();
    pool.dedup();
    pool
}

/// L-optimal probabilities, proportional to `||a_m||`.
pub fn probs_l(res: &ScoreResiduals, censored: &[usize]) -> Result<SamplingPlan> {
    let pool = sorted_pool(censored);
    let scores = pool.iter().map(|&i| res.norm(i)).collect();
    let beta = Some(res.computed_at_beta().to_vec());
    SamplingPlan::from_scores(&pool, scores, Method::LOpt, beta)
}

/// A-optimal probabilities, proportional to `||I^{-1} a_m||`.
pub fn probs_a(res: &ScoreResiduals, info: &DMatrix<f64>, censored: &[usize]) -> Result<SamplingPlan> {
    if info.nrows() != res.dim() {
        return Err(Error::BetaLength {
            expected: res.dim(),
            found: info.nrows(),
        });
    }
    let chol = spd_cholesky(info)?;
    let pool = sorted_pool(censored);
    let mut rhs = DMatrix::zeros(res.dim(), pool.len());
    for (col, &i) in pool.iter().enumerate() {
        rhs.set_column(col, &DVector::from_column_slice(res.row(i)));
    }
    let solved = chol.solve(&rhs);
    let scores = solved.column_iter().map(|c| c.norm()).collect();
    let beta = Some(res.computed_at_beta().to_vec());
    SamplingPlan::from_scores(&pool, scores, Method::AOpt, beta)
}

/// Uniform probabilities `1/n_c` over every censored record.
pub fn probs_uniform(d: &Dataset) -> Result<SamplingPlan> {
    let pool = d.censored_indices();
    if pool.is_empty() {
        return Err(Error::NoCensored);
    }
    let p = 1.0 / pool.len() as f64;
    Ok(SamplingPlan {
        probs: vec![p; pool.len()],
        records: pool,
        method: Method::Uniform,
        zero_set: Vec::new(),
        computed_at_beta: None,
    })
}

/// Multiplicities `R_m` of a with-replacement draw, parallel to the plan's
/// pool.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubsampleDraw {
    pub multiplicities: Vec<u32>,
    pub q: usize,
    pub seed: u64,
}

/// An event-plus-drawn-censored dataset with its weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Subsample {
    pub data: Dataset,
    pub weights: WeightVector,
    /// Index in the parent dataset of each subsample record.
    pub parent: Vec<usize>,
    /// `R_m` for drawn censored records, 0 for events.
    pub multiplicity: Vec<u32>,
    /// Sampling probability for drawn censored records, 0 for events.
    pub prob: Vec<f64>,
}

/// Multinomial `(q, probs)` draw by an inverse-CDF walk over the plan's pool.
pub fn draw(plan: &SamplingPlan, q: usize, seed: u64) -> Result<SubsampleDraw> {
    if q == 0 {
        return Err(Error::InvalidArgument("q must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u: Vec<f64> = (0..q).map(|_| rng.random::<f64>()).collect();
    u.sort_unstable_by(f64::total_cmp);
    let last = plan
        .probs
        .iter()
        .rposition(|&p| p > 0.0)
        .ok_or(Error::AllZeroResiduals)?;
    let mut multiplicities = vec![0u32; plan.len()];
    let mut cdf = 0.0;
    let mut next = 0;
    for (m, &p) in plan.probs.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        cdf += p;
        let mut end = next;
        if m == last {
            end = q;
        } else {
            while end < q && u[end] < cdf {
                end += 1;
            }
        }
        multiplicities[m] = (end - next) as u32;
        next = end;
    }
    Ok(SubsampleDraw {
        multiplicities,
        q,
        seed,
    })
}

impl SubsampleDraw {
    /// A draw with prescribed multiplicities; `q` is their sum.
    pub fn from_multiplicities(plan: &SamplingPlan, multiplicities: Vec<u32>) -> Result<Self> {
        if multiplicities.len() != plan.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} multiplicities, found {}",
                plan.len(),
                multiplicities.len()
            )));
        }
        if multiplicities
            .iter()
            .zip(&plan.probs)
            .any(|(&r, &p)| r > 0 && p == 0.0)
        {
            return Err(Error::InvalidArgument(
                "positive multiplicity on a zero-probability record".into(),
            ));
        }
        let q = multiplicities.iter().map(|&r| r as usize).sum();
        if q == 0 {
            return Err(Error::InvalidArgument("q must be at least 1".into()));
        }
        Ok(Self {
            multiplicities,
            q,
            seed: 0,
        })
    }

    pub fn distinct(&self) -> usize {
        self.multiplicities.iter().filter(|&&r| r > 0).count()
    }

    /// All events plus the drawn censored records, with weights
    /// `R_m / (p_m q)` on the latter and 1 on events.
    pub fn subsample(&self, d: &Dataset, plan: &SamplingPlan) -> Result<Subsample> {
        if d.n_events() == 0 {
            return Err(Error::NoEvents);
        }
        let events = d.event_indices();
        let mut drawn = plan
            .records
            .iter()
            .zip(&self.multiplicities)
            .zip(&plan.probs)
            .filter(|((_, &r), _)| r > 0)
            .map(|((&i, &r), &p)| (i, r, p))
            .peekable();
        // both sources are ascending, so a merge keeps parent order
        let mut picked: Vec<(usize, u32, f64)> = Vec::with_capacity(events.len() + self.q);
        for i in events {
            while let Some(t) = drawn.next_if(|t| t.0 < i) {
                picked.push(t);
            }
            picked.push((i, 0, 0.0));
        }
        picked.extend(drawn);
        let q = self.q as f64;
        let parent: Vec<usize> = picked.iter().map(|t| t.0).collect();
        let weights = picked
            .iter()
            .map(|&(_, r, p)| if r == 0 { 1.0 } else { r as f64 / (p * q) })
            .collect();
        Ok(Subsample {
            data: d.subset(&parent)?,
            weights: WeightVector::new(weights)?,
            multiplicity: picked.iter().map(|t| t.1).collect(),
            prob: picked.iter().map(|t| t.2).collect(),
            parent,
        })
    }
}
