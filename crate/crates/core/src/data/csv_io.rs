use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use super::{Dataset, SurvivalRecord};
use crate::error::{Error, Result};

/// Column names for CSV ingestion. `id`, `stop` and `event` are required;
/// a missing `start` column means entry 0, a missing stratum column means a
/// single stratum. Every other column is a numeric covariate, in file order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvSchema {
    pub id: String,
    pub start: String,
    pub stop: String,
    pub event: String,
    pub stratum: String,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            id: "id".into(),
            start: "start".into(),
            stop: "stop".into(),
            event: "event".into(),
            stratum: "stratum".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedData {
    pub dataset: Dataset,
    pub covariate_names: Vec<String>,
    /// Original stratum labels and the integer codes assigned to them.
    pub strata_labels: Vec<(String, u32)>,
}

pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<LoadedData> {
    let file = std::fs::File::open(path)?;
    read_csv(file, schema)
}

pub fn read_csv<R: Read>(reader: R, schema: &CsvSchema) -> Result<LoadedData> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let id_col = find(&schema.id).ok_or_else(|| Error::MissingColumn(schema.id.clone()))?;
    let stop_col = find(&schema.stop).ok_or_else(|| Error::MissingColumn(schema.stop.clone()))?;
    let event_col =
        find(&schema.event).ok_or_else(|| Error::MissingColumn(schema.event.clone()))?;
    let start_col = find(&schema.start);
    let stratum_col = find(&schema.stratum);
    let reserved = [Some(id_col), Some(stop_col), Some(event_col), start_col, stratum_col];
    let covariate_cols: Vec<usize> = (0..headers.len())
        .filter(|c| !reserved.contains(&Some(*c)))
        .collect();
    let covariate_names = covariate_cols
        .iter()
        .map(|&c| headers[c].to_string())
        .collect();

    let mut raw_strata: Vec<String> = Vec::new();
    let mut records = Vec::new();
    for (row, result) in rdr.records().enumerate() {
        let rec = result?;
        let num = |col: usize| -> Result<f64> {
            rec.get(col)
                .and_then(|v| v.parse::<f64>().ok())
                .ok_or_else(|| Error::NonNumericValue {
                    row,
                    col: headers[col].to_string(),
                })
        };
        let source_id = rec
            .get(id_col)
            .and_then(|v| v.parse::<u64>().ok())
            .ok_or_else(|| Error::NonNumericValue {
                row,
                col: headers[id_col].to_string(),
            })?;
        let exit = num(stop_col)?;
        let entry = match start_col {
            Some(c) => num(c)?,
            None => 0.0,
        };
        let event = match rec.get(event_col) {
            Some("0") => false,
            Some("1") => true,
            _ => return Err(Error::InvalidEvent { row }),
        };
        if !(entry.is_finite() && exit.is_finite() && entry >= 0.0 && entry < exit) {
            return Err(Error::InvalidInterval(row));
        }
        let covariates = covariate_cols
            .iter()
            .map(|&c| num(c))
            .collect::<Result<Vec<_>>>()?;
        raw_strata.push(
            stratum_col
                .and_then(|c| rec.get(c))
                .unwrap_or("0")
                .to_string(),
        );
        records.push(SurvivalRecord::new(source_id, entry, exit, event, covariates));
    }

    let (codes, strata_labels) = code_strata(&raw_strata);
    for (rec, code) in records.iter_mut().zip(codes) {
        rec.stratum = code;
    }
    Ok(LoadedData {
        dataset: Dataset::new(records)?,
        covariate_names,
        strata_labels,
    })
}

/// Integer labels are kept as-is; otherwise labels get consecutive codes in
/// order of first appearance.
fn code_strata(raw: &[String]) -> (Vec<u32>, Vec<(String, u32)>) {
    let parsed: Option<Vec<u32>> = raw.iter().map(|s| s.parse::<u32>().ok()).collect();
    let mut mapping: Vec<(String, u32)> = Vec::new();
    let codes = match parsed {
        Some(codes) => {
            for (s, &c) in raw.iter().zip(&codes) {
                if !mapping.iter().any(|(_, m)| *m == c) {
                    mapping.push((s.clone(), c));
                }
            }
            codes
        }
        None => {
            let mut lookup: HashMap<&str, u32> = HashMap::new();
            raw.iter()
                .map(|s| {
                    let next = lookup.len() as u32;
                    *lookup.entry(s.as_str()).or_insert_with(|| {
                        mapping.push((s.clone(), next));
                        next
                    })
                })
                .collect()
        }
    };
    mapping.sort_by_key(|(_, c)| *c);
    (codes, mapping)
}

/// Writes `id,start,stop,event,stratum,<covariates>` with round-trip float
/// formatting. Covariates are named `x1..xr` unless names are given.
pub fn write_csv<W: Write>(d: &Dataset, writer: W, names: Option<&[String]>) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = ["id", "start", "stop", "event", "stratum"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    match names {
        Some(names) if names.len() == d.dim() => header.extend(names.iter().cloned()),
        _ => header.extend((1..=d.dim()).map(|k| format!("x{k}"))),
    }
    wtr.write_record(&header)?;
    let mut row: Vec<String> = Vec::with_capacity(header.len());
    for i in 0..d.len() {
        row.clear();
        row.push(d.source_id(i).to_string());
        row.push(d.entry(i).to_string());
        row.push(d.exit(i).to_string());
        row.push(if d.is_event(i) { "1" } else { "0" }.to_string());
        row.push(d.stratum(i).to_string());
        row.extend(d.covariates(i).iter().map(|v| v.to_string()));
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn read(s: &str) -> Result<LoadedData> {
        read_csv(s.as_bytes(), &CsvSchema::default())
    }

    #[test]
    fn start_defaults_to_zero() {
        let loaded = read("id,stop,event,age\n1,2.5,1,40\n2,3.0,0,51\n3,1.0,0,60\n").unwrap();
        let d = &loaded.dataset;
        assert_eq!(d.len(), 3);
        assert!((0..3).all(|i| d.entry(i) == 0.0));
        assert_eq!(loaded.covariate_names, vec!["age"]);
    }

    #[test]
    fn degenerate_interval_is_reported_with_row() {
        let err = read("id,start,stop,event,x\n1,0,2,1,0.3\n2,5,5,0,0.1\n").unwrap_err();
        assert!(matches!(err, Error::InvalidInterval(1)));
    }

    #[test]
    fn missing_column() {
        let err = read("id,time,event\n1,2,1\n").unwrap_err();
        assert!(matches!(err, Error::MissingColumn(c) if c == "stop"));
    }

    #[test]
    fn non_numeric_covariate() {
        let err = read("id,stop,event,x\n1,2,1,abc\n").unwrap_err();
        assert!(matches!(err, Error::NonNumericValue { row: 0, ref col } if col == "x"));
    }

    #[test]
    fn string_strata_are_coded() {
        let loaded =
            read("id,stop,event,stratum,x\n1,2,1,north,0\n2,3,0,south,1\n3,4,1,north,2\n").unwrap();
        let d = &loaded.dataset;
        assert_eq!(d.stratum(0), 0);
        assert_eq!(d.stratum(1), 1);
        assert_eq!(d.stratum(2), 0);
        assert_eq!(
            loaded.strata_labels,
            vec![("north".to_string(), 0), ("south".to_string(), 1)]
        );
    }

    #[test]
    fn write_then_read_is_identity() {
        let d = Dataset::new(vec![
            SurvivalRecord::new(4, 0.25, 1.0 / 3.0, true, vec![0.1, -2.0e-7]),
            SurvivalRecord::new(9, 0.0, 2.0, false, vec![3.5, 1.0e10]).with_stratum(2),
        ])
        .unwrap();
        let mut buf = Vec::new();
        write_csv(&d, &mut buf, None).unwrap();
        let back = read_csv(buf.as_slice(), &CsvSchema::default()).unwrap();
        assert_eq!(back.dataset, d);
    }
}
