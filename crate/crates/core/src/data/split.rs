use std::collections::BTreeMap;

use super::{Dataset, SurvivalRecord};
use crate::error::{Error, Result};

/// Links pseudo-records back to the records they were cut from.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitMap {
    pseudo_to_record: Vec<usize>,
    pseudo_to_source: Vec<u64>,
    source_to_pseudo: BTreeMap<u64, Vec<usize>>,
}

impl SplitMap {
    fn new(pseudo_to_record: Vec<usize>, pseudo_to_source: Vec<u64>) -> Self {
        let mut source_to_pseudo: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
        for (p, &s) in pseudo_to_source.iter().enumerate() {
            source_to_pseudo.entry(s).or_default().push(p);
        }
        Self {
            pseudo_to_record,
            pseudo_to_source,
            source_to_pseudo,
        }
    }

    pub fn len(&self) -> usize {
        self.pseudo_to_source.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pseudo_to_source.is_empty()
    }

    pub fn source_of(&self, pseudo: usize) -> u64 {
        self.pseudo_to_source[pseudo]
    }

    /// Index of the unsplit record the pseudo-record came from.
    pub fn record_of(&self, pseudo: usize) -> usize {
        self.pseudo_to_record[pseudo]
    }

    pub fn pseudo_of(&self, source_id: u64) -> &[usize] {
        self.source_to_pseudo
            .get(&source_id)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn sources(&self) -> impl Iterator<Item = u64> + '_ {
        self.source_to_pseudo.keys().copied()
    }

    /// Sums per-pseudo-record rows of width `dim` into one row per unsplit
    /// record, indexed like the original dataset.
    pub fn aggregate_rows(&self, rows: &[f64], dim: usize, n_records: usize) -> Vec<f64> {
        let mut out = vec![0.0; n_records * dim];
        for (p, &rec) in self.pseudo_to_record.iter().enumerate() {
            for k in 0..dim {
                out[rec * dim + k] += rows[p * dim + k];
            }
        }
        out
    }
}

/// Cuts every record at the cutpoints strictly inside `(entry, exit)`.
pub fn split_at_times(d: &Dataset, cutpoints: &[f64]) -> Result<(Dataset, SplitMap)> {
    check_increasing(cutpoints)?;
    split_with(d, |_| cutpoints)
}

/// Cuts every record at the event times of its own stratum.
pub fn split_at_event_times(d: &Dataset) -> Result<(Dataset, SplitMap)> {
    let by_label: BTreeMap<u32, &[f64]> = d
        .strata()
        .iter()
        .map(|s| (s.label, s.event_times()))
        .collect();
    split_with(d, |label| by_label[&label])
}

fn check_increasing(cutpoints: &[f64]) -> Result<()> {
    if cutpoints.iter().any(|c| !c.is_finite()) || cutpoints.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::UnsortedCutpoints);
    }
    Ok(())
}

fn split_with<'a, F>(d: &Dataset, cuts_for: F) -> Result<(Dataset, SplitMap)>
where
    F: Fn(u32) -> &'a [f64],
{
    let mut records = Vec::with_capacity(d.len());
    let mut to_record = Vec::with_capacity(d.len());
    let mut to_source = Vec::with_capacity(d.len());
    for i in 0..d.len() {
        let cuts = cuts_for(d.stratum(i));
        let (entry, exit) = (d.entry(i), d.exit(i));
        let lo = cuts.partition_point(|&c| c <= entry);
        let hi = cuts.partition_point(|&c| c < exit);
        let mut start = entry;
        for &c in &cuts[lo..hi] {
            records.push(piece(d, i, start, c, false));
            to_record.push(i);
            to_source.push(d.source_id(i));
            start = c;
        }
        records.push(piece(d, i, start, exit, d.is_event(i)));
        to_record.push(i);
        to_source.push(d.source_id(i));
    }
    let mut split = Dataset::new(records)?;
    split.population = d.population;
    Ok((split, SplitMap::new(to_record, to_source)))
}

fn piece(d: &Dataset, i: usize, entry: f64, exit: f64, event: bool) -> SurvivalRecord {
    SurvivalRecord {
        source_id: d.source_id(i),
        entry,
        exit,
        event,
        covariates: d.covariates(i).to_vec(),
        stratum: d.stratum(i),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeTransform {
    Identity,
    Log,
}

impl TimeTransform {
    pub fn apply(self, t: f64) -> f64 {
        match self {
            Self::Identity => t,
            Self::Log => t.ln(),
        }
    }
}

/// Appends the column `x_k * g(t)` where `t` is the event time covered by
/// each pseudo-record (its exit time, once split at event times).
pub fn apply_time_transform(d: &Dataset, covariate: usize, g: TimeTransform) -> Result<Dataset> {
    if covariate >= d.dim() {
        return Err(Error::CovariateIndex {
            index: covariate,
            dim: d.dim(),
        });
    }
    let mut column = Vec::with_capacity(d.len());
    for i in 0..d.len() {
        let (lo, hi) = d.event_span(i);
        if hi - lo > 1 {
            return Err(Error::NotSplit(i));
        }
        column.push(d.covariates(i)[covariate] * g.apply(d.exit(i)));
    }
    d.with_appended_column(&column)
}
