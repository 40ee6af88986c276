//! Right-censored survival records and the immutable [`Dataset`] container.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// One subject: follow-up time `min(y, c)`, event indicator, received
/// treatment, measured covariates and instruments.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalRecord {
    pub time: f64,
    pub event: bool,
    pub treatment: f64,
    pub covariates: Vec<f64>,
    pub instrument: Vec<f64>,
    pub weight: f64,
}

impl SurvivalRecord {
    pub fn new(time: f64, event: bool, treatment: f64) -> Self {
        SurvivalRecord {
            time,
            event,
            treatment,
            covariates: Vec::new(),
            instrument: Vec::new(),
            weight: 1.0,
        }
    }

    pub fn with_covariates(mut self, covariates: Vec<f64>) -> Self {
        self.covariates = covariates;
        self
    }

    pub fn with_instrument(mut self, instrument: Vec<f64>) -> Self {
        self.instrument = instrument;
        self
    }

    pub fn with_weight(mut self, weight: f64) -> Self {
        self.weight = weight;
        self
    }
}

/// A validated collection of records. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    records: Vec<SurvivalRecord>,
    covariate_names: Vec<String>,
    instrument_names: Vec<String>,
}

impl Dataset {
    /// Validates and wraps `records`.
    ///
    /// Requires at least two records, finite non-negative times, finite
    /// treatment/covariate/instrument values, strictly positive weights and
    /// vector lengths matching the name lists.
    pub fn new(
        records: Vec<SurvivalRecord>,
        covariate_names: Vec<String>,
        instrument_names: Vec<String>,
    ) -> Result<Self> {
        if records.len() < 2 {
            return Err(Error::invalid("a dataset needs at least 2 records"));
        }
        let p = covariate_names.len();
        let q = instrument_names.len();
        for (i, r) in records.iter().enumerate() {
            if !r.time.is_finite() || r.time < 0.0 {
                return Err(Error::invalid(format!("record {i}: time must be finite and >= 0")));
            }
            if !r.treatment.is_finite() {
                return Err(Error::invalid(format!("record {i}: treatment is not finite")));
            }
            if !(r.weight.is_finite() && r.weight > 0.0) {
                return Err(Error::invalid(format!("record {i}: weight must be finite and > 0")));
            }
            if r.covariates.len() != p {
                return Err(Error::invalid(format!(
                    "record {i}: {} covariates, expected {p}",
                    r.covariates.len()
                )));
            }
            if r.instrument.len() != q {
                return Err(Error::invalid(format!(
                    "record {i}: {} instruments, expected {q}",
                    r.instrument.len()
                )));
            }
            if r.covariates.iter().chain(&r.instrument).any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("record {i}: non-finite covariate or instrument")));
            }
        }
        Ok(Dataset {
            records,
            covariate_names,
            instrument_names,
        })
    }

    /// Dataset with unnamed covariates/instruments (`z1..`, `w1..`).
    pub fn from_records(records: Vec<SurvivalRecord>) -> Result<Self> {
        let p = records.first().map_or(0, |r| r.covariates.len());
        let q = records.first().map_or(0, |r| r.instrument.len());
        let cov = (1..=p).map(|i| format!("z{i}")).collect();
        let ins = (1..=q).map(|i| format!("w{i}")).collect();
        Dataset::new(records, cov, ins)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[SurvivalRecord] {
        &self.records
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn instrument_names(&self) -> &[String] {
        &self.instrument_names
    }

    pub fn n_covariates(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn n_instruments(&self) -> usize {
        self.instrument_names.len()
    }

    pub fn n_events(&self) -> usize {
        self.records.iter().filter(|r| r.event).count()
    }

    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.time).collect()
    }

    pub fn events(&self) -> Vec<bool> {
        self.records.iter().map(|r| r.event).collect()
    }

    pub fn treatment(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.treatment).collect()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.weight).collect()
    }

    pub fn covariate(&self, j: usize) -> Vec<f64> {
        self.records.iter().map(|r| r.covariates[j]).collect()
    }

    pub fn instrument(&self, j: usize) -> Vec<f64> {
        self.records.iter().map(|r| r.instrument[j]).collect()
    }

    /// Copy with every weight replaced; used for inverse-propensity curves.
    pub fn with_weights(&self, weights: &[f64]) -> Result<Dataset> {
        if weights.len() != self.len() {
            return Err(Error::invalid("weight vector length does not match dataset"));
        }
        let records = self
            .records
            .iter()
            .zip(weights)
            .map(|(r, &w)| r.clone().with_weight(w))
            .collect();
        Dataset::new(records, self.covariate_names.clone(), self.instrument_names.clone())
    }

    /// Subset of records, keeping names.
    pub fn filter<F: Fn(&SurvivalRecord) -> bool>(&self, keep: F) -> Result<Dataset> {
        let records = self.records.iter().filter(|r| keep(r)).cloned().collect();
        Dataset::new(records, self.covariate_names.clone(), self.instrument_names.clone())
    }

    pub(crate) fn require_event(&self) -> Result<()> {
        if self.n_events() == 0 {
            Err(Error::invalid("fitting requires at least one observed event"))
        } else {
            Ok(())
        }
    }
}

/// A named regression design: one row per record (in dataset order).
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub names: Vec<String>,
    pub matrix: DMatrix<f64>,
}

impl Design {
    pub fn empty(n: usize) -> Self {
        Design {
            names: Vec::new(),
            matrix: DMatrix::zeros(n, 0),
        }
    }

    /// Columns: treatment (optional) followed by every covariate.
    pub fn from_dataset(data: &Dataset, include_treatment: bool) -> Self {
        let mut design = Design::empty(data.len());
        if include_treatment {
            design = design.with_column("treatment", &data.treatment());
        }
        for (j, name) in data.covariate_names().iter().enumerate() {
            design = design.with_column(name, &data.covariate(j));
        }
        design
    }

    pub fn with_column(mut self, name: &str, values: &[f64]) -> Self {
        assert_eq!(values.len(), self.matrix.nrows(), "column length mismatch");
        let p = self.matrix.ncols();
        self.matrix = self.matrix.insert_column(p, 0.0);
        self.matrix.column_mut(p).copy_from_slice(values);
        self.names.push(name.to_string());
        self
    }

    pub fn nrows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}
