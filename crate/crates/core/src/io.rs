//! CSV ingestion and export of survival datasets.

use std::collections::HashMap;
use std::io::{Read, Write};

use crate::data::{Dataset, SurvivalRecord};
use crate::error::{Error, Result};

/// Which CSV columns hold each field.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnMap {
    pub time: String,
    pub event: String,
    pub treatment: String,
    pub covariates: Vec<String>,
    pub instruments: Vec<String>,
    pub weight: Option<String>,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            time: "time".into(),
            event: "event".into(),
            treatment: "treatment".into(),
            covariates: Vec::new(),
            instruments: Vec::new(),
            weight: None,
        }
    }
}

fn is_missing(s: &str) -> bool {
    matches!(s, "" | "NA" | "na" | "NaN" | "nan" | "null" | "NULL" | ".")
}

fn parse_number(column: &str, row: usize, raw: &str) -> Result<f64> {
    let s = raw.trim();
    if is_missing(s) {
        return Err(Error::schema(column, format!("missing value on data row {row}")));
    }
    let v: f64 = s
        .parse()
        .map_err(|_| Error::schema(column, format!("`{s}` on data row {row} is not a number")))?;
    if !v.is_finite() {
        return Err(Error::schema(column, format!("non-finite value on data row {row}")));
    }
    Ok(v)
}

fn parse_event(column: &str, row: usize, raw: &str) -> Result<bool> {
    let s = raw.trim();
    match s {
        "1" | "1.0" | "true" | "TRUE" => Ok(true),
        "0" | "0.0" | "false" | "FALSE" => Ok(false),
        _ if is_missing(s) => Err(Error::schema(column, format!("missing value on data row {row}"))),
        _ => Err(Error::schema(column, format!("`{s}` on data row {row} is not a 0/1 event indicator"))),
    }
}

/// Reads a headed CSV into a [`Dataset`]. Unmapped columns are ignored.
pub fn read_dataset<R: Read>(input: R, map: &ColumnMap) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = reader.headers()?.clone();
    let position: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let locate = |name: &str| {
        position
            .get(name)
            .copied()
            .ok_or_else(|| Error::schema(name, "column not found in header"))
    };
    let mut seen: Vec<&str> = Vec::new();
    let mapped = [&map.time, &map.event, &map.treatment]
        .into_iter()
        .chain(&map.covariates)
        .chain(&map.instruments)
        .chain(map.weight.as_ref());
    for name in mapped {
        if seen.contains(&name.as_str()) {
            return Err(Error::schema(name.as_str(), "column mapped to more than one field"));
        }
        seen.push(name);
    }
    let time = locate(&map.time)?;
    let event = locate(&map.event)?;
    let treatment = locate(&map.treatment)?;
    let covs = map.covariates.iter().map(|c| locate(c)).collect::<Result<Vec<_>>>()?;
    let insts = map.instruments.iter().map(|c| locate(c)).collect::<Result<Vec<_>>>()?;
    let weight = map.weight.as_deref().map(locate).transpose()?;

    let mut records = Vec::new();
    for (k, row) in reader.records().enumerate() {
        let row = row?;
        let row_no = k + 1;
        let field = |i: usize| row.get(i).unwrap_or("");
        let t = parse_number(&map.time, row_no, field(time))?;
        if t < 0.0 {
            return Err(Error::schema(&map.time, format!("negative time on data row {row_no}")));
        }
        let mut rec = SurvivalRecord::new(
            t,
            parse_event(&map.event, row_no, field(event))?,
            parse_number(&map.treatment, row_no, field(treatment))?,
        );
        rec.covariates = covs
            .iter()
            .zip(&map.covariates)
            .map(|(&i, name)| parse_number(name, row_no, field(i)))
            .collect::<Result<_>>()?;
        rec.instrument = insts
            .iter()
            .zip(&map.instruments)
            .map(|(&i, name)| parse_number(name, row_no, field(i)))
            .collect::<Result<_>>()?;
        if let (Some(i), Some(name)) = (weight, map.weight.as_deref()) {
            let w = parse_number(name, row_no, field(i))?;
            if w <= 0.0 {
                return Err(Error::schema(name, format!("non-positive weight on data row {row_no}")));
            }
            rec.weight = w;
        }
        records.push(rec);
    }
    Dataset::new(records, map.covariates.clone(), map.instruments.clone())
}

/// Writes `time,event,treatment,<covariates>,<instruments>[,weight]`.
/// Values use the shortest representation that parses back to the same
/// `f64`, so a written dataset re-reads exactly.
pub fn write_dataset<W: Write>(output: W, data: &Dataset) -> Result<()> {
    let weighted = data.records().iter().any(|r| r.weight != 1.0);
    let mut w = csv::Writer::from_writer(output);
    let mut header = vec!["time".to_string(), "event".into(), "treatment".into()];
    header.extend(data.covariate_names().iter().cloned());
    header.extend(data.instrument_names().iter().cloned());
    if weighted {
        header.push("weight".into());
    }
    w.write_record(&header)?;
    for r in data.records() {
        let mut row = vec![r.time.to_string(), if r.event { "1".into() } else { "0".into() }, r.treatment.to_string()];
        row.extend(r.covariates.iter().map(f64::to_string));
        row.extend(r.instrument.iter().map(f64::to_string));
        if weighted {
            row.push(r.weight.to_string());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// The column map matching [`write_dataset`] output for `data`.
pub fn column_map_for(data: &Dataset) -> ColumnMap {
    ColumnMap {
        covariates: data.covariate_names().to_vec(),
        instruments: data.instrument_names().to_vec(),
        weight: if data.records().iter().any(|r| r.weight != 1.0) { Some("weight".into()) } else { None },
        ..ColumnMap::default()
    }
}
