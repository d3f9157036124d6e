//! Counting-process survival data.
//!
//! A [`Dataset`] holds start-stop records `(entry, exit]` in struct-of-arrays
//! form together with the per-stratum orderings the risk-set sweeps need.
//! It is immutable once built; every constructor validates its input.

mod csv_io;
mod split;

pub use self::csv_io::{load_csv, read_csv, write_csv, CsvSchema, LoadedData};
pub use self::split::{
    apply_time_transform, split_at_event_times, split_at_times, SplitMap, TimeTransform,
};

use crate::error::{Error, Result};

/// One counting-process row.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalRecord {
    pub source_id: u64,
    pub entry: f64,
    pub exit: f64,
    pub event: bool,
    pub covariates: Vec<f64>,
    pub stratum: u32,
}

impl SurvivalRecord {
    pub fn new(source_id: u64, entry: f64, exit: f64, event: bool, covariates: Vec<f64>) -> Self {
        Self {
            source_id,
            entry,
            exit,
            event,
            covariates,
            stratum: 0,
        }
    }

    pub fn with_stratum(mut self, stratum: u32) -> Self {
        self.stratum = stratum;
        self
    }
}

/// Records of one stratum, pre-sorted for the risk-set sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct Stratum {
    pub label: u32,
    /// Record indices ordered by exit time, latest first.
    pub(crate) by_exit_desc: Vec<usize>,
    /// Records with a positive entry time, latest entry first.
    pub(crate) by_entry_desc: Vec<usize>,
    /// Distinct event times, ascending.
    pub(crate) event_times: Vec<f64>,
}

impl Stratum {
    pub fn event_times(&self) -> &[f64] {
        &self.event_times
    }

    pub fn len(&self) -> usize {
        self.by_exit_desc.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_exit_desc.is_empty()
    }

    /// Number of event times `t` with `t <= time`.
    pub(crate) fn events_up_to(&self, time: f64) -> usize {
        self.event_times.partition_point(|&t| t <= time)
    }
}

struct Columns {
    source_id: Vec<u64>,
    entry: Vec<f64>,
    exit: Vec<f64>,
    event: Vec<bool>,
    stratum: Vec<u32>,
    x: Vec<f64>,
    dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    source_id: Vec<u64>,
    entry: Vec<f64>,
    exit: Vec<f64>,
    event: Vec<bool>,
    stratum: Vec<u32>,
    x: Vec<f64>,
    dim: usize,
    n_events: usize,
    strata: Vec<Stratum>,
    slot: Vec<usize>,
    /// Per record, the event-grid positions `(#times <= entry, #times <= exit)`
    /// within its stratum.
    span: Vec<(u32, u32)>,
    population: usize,
}

impl Dataset {
    pub fn new(records: Vec<SurvivalRecord>) -> Result<Self> {
        let dim = records.first().ok_or(Error::EmptyDataset)?.covariates.len();
        let n = records.len();
        let mut source_id = Vec::with_capacity(n);
        let mut entry = Vec::with_capacity(n);
        let mut exit = Vec::with_capacity(n);
        let mut event = Vec::with_capacity(n);
        let mut stratum = Vec::with_capacity(n);
        let mut x = Vec::with_capacity(n * dim);
        for (i, rec) in records.into_iter().enumerate() {
            if rec.covariates.len() != dim {
                return Err(Error::DimensionMismatch {
                    record: i,
                    expected: dim,
                    found: rec.covariates.len(),
                });
            }
            source_id.push(rec.source_id);
            entry.push(rec.entry);
            exit.push(rec.exit);
            event.push(rec.event);
            stratum.push(rec.stratum);
            x.extend_from_slice(&rec.covariates);
        }
        Self::from_columns(source_id, entry, exit, event, stratum, x, dim)
    }

    /// Builds a dataset from column vectors; `x` is row-major `n x dim`.
    pub fn from_columns(
        source_id: Vec<u64>,
        entry: Vec<f64>,
        exit: Vec<f64>,
        event: Vec<bool>,
        stratum: Vec<u32>,
        x: Vec<f64>,
        dim: usize,
    ) -> Result<Self> {
        let n = exit.len();
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        if source_id.len() != n || entry.len() != n || event.len() != n || stratum.len() != n {
            return Err(Error::InvalidArgument(
                "column vectors must have equal length".into(),
            ));
        }
        if x.len() != n * dim {
            return Err(Error::DimensionMismatch {
                record: x.len() / dim.max(1),
                expected: dim,
                found: x.len() % dim.max(1),
            });
        }
        for i in 0..n {
            let (a, b) = (entry[i], exit[i]);
            if !(a.is_finite() && b.is_finite() && a >= 0.0 && a < b) {
                return Err(Error::InvalidInterval(i));
            }
        }
        if let Some(pos) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "record {} has a non-finite covariate",
                pos / dim
            )));
        }

        let mut labels: Vec<u32> = stratum.clone();
        labels.sort_unstable();
        labels.dedup();
        let mut slot = vec![0usize; n];
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); labels.len()];
        for i in 0..n {
            let s = labels.binary_search(&stratum[i]).expect("label present");
            slot[i] = s;
            members[s].push(i);
        }
        let orders = members
            .into_iter()
            .map(|mut idx| {
                idx.sort_by(|&a, &b| exit[b].total_cmp(&exit[a]).then(a.cmp(&b)));
                let mut by_entry: Vec<usize> =
                    idx.iter().copied().filter(|&i| entry[i] > 0.0).collect();
                by_entry.sort_by(|&a, &b| entry[b].total_cmp(&entry[a]).then(a.cmp(&b)));
                (idx, by_entry)
            })
            .collect();
        Ok(Self::assemble(
            Columns {
                source_id,
                entry,
                exit,
                event,
                stratum,
                x,
                dim,
            },
            labels,
            orders,
            slot,
        ))
    }

    /// Finishes construction from validated columns and per-stratum sort
    /// orders.
    fn assemble(
        cols: Columns,
        labels: Vec<u32>,
        orders: Vec<(Vec<usize>, Vec<usize>)>,
        slot: Vec<usize>,
    ) -> Self {
        let Columns {
            source_id,
            entry,
            exit,
            event,
            stratum,
            x,
            dim,
        } = cols;
        let strata: Vec<Stratum> = labels
            .iter()
            .zip(orders)
            .map(|(&label, (by_exit, by_entry))| {
                let mut times: Vec<f64> = by_exit
                    .iter()
                    .rev()
                    .filter(|&&i| event[i])
                    .map(|&i| exit[i])
                    .collect();
                times.dedup();
                Stratum {
                    label,
                    by_exit_desc: by_exit,
                    by_entry_desc: by_entry,
                    event_times: times,
                }
            })
            .collect();
        let n = exit.len();
        let n_events = event.iter().filter(|&&e| e).count();
        let span = (0..n)
            .map(|i| {
                let s = &strata[slot[i]];
                (s.events_up_to(entry[i]) as u32, s.events_up_to(exit[i]) as u32)
            })
            .collect();
        Self {
            source_id,
            entry,
            exit,
            event,
            stratum,
            x,
            dim,
            n_events,
            strata,
            slot,
            span,
            population: n,
        }
    }

    /// Dataset restricted to `indices` (in the given order). The result keeps
    /// the parent's population size, which scales the information matrix.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::InvalidArgument(format!("record index {bad} out of range")));
        }
        let dim = self.dim;
        let mut x = Vec::with_capacity(indices.len() * dim);
        for &i in indices {
            x.extend_from_slice(self.covariates(i));
        }
        let pick = |v: &[f64]| indices.iter().map(|&i| v[i]).collect::<Vec<_>>();
        let cols = Columns {
            source_id: indices.iter().map(|&i| self.source_id[i]).collect(),
            entry: pick(&self.entry),
            exit: pick(&self.exit),
            event: indices.iter().map(|&i| self.event[i]).collect(),
            stratum: indices.iter().map(|&i| self.stratum[i]).collect(),
            x,
            dim,
        };
        let mut sub = if indices.windows(2).all(|w| w[0] < w[1]) {
            // ascending indices keep the parent's tie order, so its sorted
            // orders can be filtered instead of re-sorted
            let mut pos = vec![usize::MAX; self.len()];
            for (k, &i) in indices.iter().enumerate() {
                pos[i] = k;
            }
            let remap = |order: &[usize]| -> Vec<usize> {
                order.iter().map(|&i| pos[i]).filter(|&k| k != usize::MAX).collect()
            };
            let mut labels = Vec::new();
            let mut orders = Vec::new();
            let mut slot_map = vec![usize::MAX; self.strata.len()];
            for (s, st) in self.strata.iter().enumerate() {
                let by_exit = remap(&st.by_exit_desc);
                if by_exit.is_empty() {
                    continue;
                }
                slot_map[s] = labels.len();
                labels.push(st.label);
                orders.push((by_exit, remap(&st.by_entry_desc)));
            }
            let slot = indices.iter().map(|&i| slot_map[self.slot[i]]).collect();
            Self::assemble(cols, labels, orders, slot)
        } else {
            Self::from_columns(
                cols.source_id,
                cols.entry,
                cols.exit,
                cols.event,
                cols.stratum,
                cols.x,
                dim,
            )?
        };
        sub.population = self.population;
        Ok(sub)
    }

    pub fn len(&self) -> usize {
        self.exit.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exit.is_empty()
    }

    /// Covariate dimension `r`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_events(&self) -> usize {
        self.n_events
    }

    pub fn n_censored(&self) -> usize {
        self.len() - self.n_events
    }

    /// Size of the full-data population this dataset stands for; equals
    /// `len()` except for subsamples.
    pub fn population(&self) -> usize {
        self.population
    }

    pub fn source_id(&self, i: usize) -> u64 {
        self.source_id[i]
    }

    pub fn entry(&self, i: usize) -> f64 {
        self.entry[i]
    }

    pub fn exit(&self, i: usize) -> f64 {
        self.exit[i]
    }

    pub fn is_event(&self, i: usize) -> bool {
        self.event[i]
    }

    pub fn stratum(&self, i: usize) -> u32 {
        self.stratum[i]
    }

    pub fn covariates(&self, i: usize) -> &[f64] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }

    /// Row-major covariate matrix.
    pub(crate) fn x_flat(&self) -> &[f64] {
        &self.x
    }

    pub fn strata(&self) -> &[Stratum] {
        &self.strata
    }

    pub(crate) fn stratum_slot(&self, i: usize) -> usize {
        self.slot[i]
    }

    /// Event-grid range `lo..hi` of the stratum's event times inside
    /// `(entry_i, exit_i]`.
    pub(crate) fn event_span(&self, i: usize) -> (usize, usize) {
        let (lo, hi) = self.span[i];
        (lo as usize, hi as usize)
    }

    /// Distinct event times of the stratum with the given label.
    pub fn event_times(&self, label: u32) -> &[f64] {
        self.strata
            .iter()
            .find(|s| s.label == label)
            .map(|s| s.event_times.as_slice())
            .unwrap_or(&[])
    }

    pub fn record(&self, i: usize) -> SurvivalRecord {
        SurvivalRecord {
            source_id: self.source_id[i],
            entry: self.entry[i],
            exit: self.exit[i],
            event: self.event[i],
            covariates: self.covariates(i).to_vec(),
            stratum: self.stratum[i],
        }
    }

    pub fn records(&self) -> impl Iterator<Item = SurvivalRecord> + '_ {
        (0..self.len()).map(|i| self.record(i))
    }

    pub fn event_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.event[i]).collect()
    }

    pub fn censored_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.event[i]).collect()
    }

    /// Dataset with one extra covariate column appended.
    pub(crate) fn with_appended_column(&self, column: &[f64]) -> Result<Self> {
        let dim = self.dim + 1;
        let mut x = Vec::with_capacity(self.len() * dim);
        for (i, extra) in column.iter().enumerate() {
            x.extend_from_slice(self.covariates(i));
            x.push(*extra);
        }
        let mut out = Self::from_columns(
            self.source_id.clone(),
            self.entry.clone(),
            self.exit.clone(),
            self.event.clone(),
            self.stratum.clone(),
            x,
            dim,
        )?;
        out.population = self.population;
        Ok(out)
    }
}
