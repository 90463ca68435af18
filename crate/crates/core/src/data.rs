//! Patient-level survival data.
//!
//! CSV layout: `time,status,<covariates...>,age,year,<stratum columns...>`
//! with time in years since diagnosis, status 1 for death and 0 for
//! censored, and the trailing columns forming the life-table key.

use std::io::{Read, Write};

use thiserror::Error;

use crate::lifetable::{LifeTable, LifeTableError, LifeTableKey};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("dataset header must be `time,status,<covariates...>,age,year,<strata...>`: {0}")]
    Header(String),
    #[error("row {row}: {message}")]
    Row { row: u64, message: String },
    #[error("stratum columns {found:?} do not match life-table strata {expected:?}")]
    StratumSchema {
        expected: Vec<String>,
        found: Vec<String>,
    },
    #[error("record {index}: life-table key cannot be resolved: {source}")]
    UnresolvableKey {
        index: usize,
        #[source]
        source: LifeTableError,
    },
    #[error("record {index}: {message}")]
    Invalid { index: usize, message: String },
    #[error("dataset is empty")]
    Empty,
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatientRecord {
    /// Follow-up time in years, strictly positive.
    pub time: f64,
    /// `true` for an observed death.
    pub status: bool,
    /// Values for [`Dataset::covariate_names`], in order.
    pub covariates: Vec<f64>,
    pub key: LifeTableKey,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub covariate_names: Vec<String>,
    pub stratum_schema: Vec<String>,
    pub records: Vec<PatientRecord>,
}

impl Dataset {
    pub fn new(
        covariate_names: Vec<String>,
        stratum_schema: Vec<String>,
        records: Vec<PatientRecord>,
    ) -> Result<Self, DataError> {
        let data = Self {
            covariate_names,
            stratum_schema,
            records,
        };
        data.validate()?;
        Ok(data)
    }

    fn validate(&self) -> Result<(), DataError> {
        for (index, r) in self.records.iter().enumerate() {
            let invalid = |message: String| DataError::Invalid { index, message };
            if !(r.time > 0.0 && r.time.is_finite()) {
                return Err(invalid(format!("time must be positive and finite, got {}", r.time)));
            }
            if r.covariates.len() != self.covariate_names.len() {
                return Err(invalid(format!(
                    "expected {} covariates, got {}",
                    self.covariate_names.len(),
                    r.covariates.len()
                )));
            }
            if let Some(j) = r.covariates.iter().position(|v| !v.is_finite()) {
                return Err(invalid(format!("covariate `{}` is not finite", self.covariate_names[j])));
            }
            if !(r.key.age.is_finite() && r.key.age >= 0.0 && r.key.year.is_finite()) {
                return Err(invalid("age/year must be finite with age >= 0".into()));
            }
            if r.key.stratum.len() != self.stratum_schema.len() {
                return Err(invalid("stratum tuple does not match schema".into()));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn n_events(&self) -> usize {
        self.records.iter().filter(|r| r.status).count()
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.covariate_names.iter().position(|c| c == name)
    }

    /// Checks every record's life-table key against `table`.
    pub fn check_keys(&self, table: &LifeTable) -> Result<(), DataError> {
        if table.stratum_schema() != self.stratum_schema.as_slice() {
            return Err(DataError::StratumSchema {
                expected: table.stratum_schema().to_vec(),
                found: self.stratum_schema.clone(),
            });
        }
        for (index, r) in self.records.iter().enumerate() {
            table
                .resolve(&r.key)
                .map_err(|source| DataError::UnresolvableKey { index, source })?;
        }
        Ok(())
    }

    /// Records for which `keep` holds, in their original order.
    pub fn filter<F: Fn(&PatientRecord) -> bool>(&self, keep: F) -> Dataset {
        Dataset {
            covariate_names: self.covariate_names.clone(),
            stratum_schema: self.stratum_schema.clone(),
            records: self.records.iter().filter(|r| keep(r)).cloned().collect(),
        }
    }

    /// Stable 64-bit FNV-1a fingerprint of times, statuses and covariates.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        for r in &self.records {
            eat(&r.time.to_bits().to_le_bytes());
            eat(&[r.status as u8]);
            for c in &r.covariates {
                eat(&c.to_bits().to_le_bytes());
            }
        }
        h
    }

    pub fn load_csv<R: Read>(source: R) -> Result<Self, DataError> {
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(source);
        let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
        if header.len() < 4 || header[0] != "time" || header[1] != "status" {
            return Err(DataError::Header(header.join(",")));
        }
        let age_col = (2..header.len() - 1)
            .find(|&i| header[i] == "age" && header[i + 1] == "year")
            .ok_or_else(|| DataError::Header(header.join(",")))?;
        let covariate_names = header[2..age_col].to_vec();
        let stratum_schema = header[age_col + 2..].to_vec();

        let mut records = Vec::new();
        for rec in reader.records() {
            let rec = rec?;
            let row = rec.position().map_or(0, |p| p.line());
            if rec.len() != header.len() {
                return Err(DataError::Row {
                    row,
                    message: format!("expected {} fields, got {}", header.len(), rec.len()),
                });
            }
            let num = |i: usize| -> Result<f64, DataError> {
                rec[i].parse().map_err(|_| DataError::Row {
                    row,
                    message: format!("column `{}`: `{}` is not a number", header[i], &rec[i]),
                })
            };
            let time = num(0)?;
            let status = match &rec[1] {
                "0" => false,
                "1" => true,
                other => {
                    return Err(DataError::Row {
                        row,
                        message: format!("status must be 0 or 1, got `{other}`"),
                    })
                }
            };
            let covariates = (2..age_col).map(num).collect::<Result<Vec<_>, _>>()?;
            let key = LifeTableKey::new(
                num(age_col)?,
                num(age_col + 1)?,
                rec.iter().skip(age_col + 2).map(str::to_owned).collect(),
            );
            records.push(PatientRecord {
                time,
                status,
                covariates,
                key,
            });
        }
        if records.is_empty() {
            return Err(DataError::Empty);
        }
        Self::new(covariate_names, stratum_schema, records)
    }

    pub fn write_csv<W: Write>(&self, sink: W) -> Result<(), DataError> {
        let mut w = csv::Writer::from_writer(sink);
        let mut header = vec!["time".to_owned(), "status".to_owned()];
        header.extend(self.covariate_names.iter().cloned());
        header.push("age".into());
        header.push("year".into());
        header.extend(self.stratum_schema.iter().cloned());
        w.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![fmt_f64(r.time), (r.status as u8).to_string()];
            row.extend(r.covariates.iter().map(|&v| fmt_f64(v)));
            row.push(fmt_f64(r.key.age));
            row.push(fmt_f64(r.key.year));
            row.extend(r.key.stratum.iter().cloned());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Shortest representation that parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}
