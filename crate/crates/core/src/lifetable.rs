//! Expected (background) mortality from life tables.
//!
//! Rates are hazards in deaths per person-year on a 1-year age by 1-year
//! calendar grid, optionally split by categorical strata (sex, deprivation,
//! ...). Lookups use attained-age and attained-year bands, clamped to the
//! table edges.

use std::collections::{BTreeMap, HashMap};
use std::io::Read;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LifeTableError {
    #[error("life table header must be `age,year,<strata...>,rate`, got `{0}`")]
    Header(String),
    #[error("row {row}: {message}")]
    Malformed { row: u64, message: String },
    #[error("row {row}: negative rate {rate}")]
    NegativeRate { row: u64, rate: f64 },
    #[error("row {row}: non-finite rate")]
    NonFiniteRate { row: u64 },
    #[error("row {row}: duplicate cell (age={age}, year={year}, stratum={stratum:?})")]
    Duplicate {
        row: u64,
        age: i32,
        year: i32,
        stratum: Vec<String>,
    },
    #[error("grid hole: missing cell (age={age}, year={year}, stratum={stratum:?})")]
    GridHole {
        age: i32,
        year: i32,
        stratum: Vec<String>,
    },
    #[error("unknown stratum {0:?}")]
    UnknownStratum(Vec<String>),
    #[error("life table has no rows")]
    Empty,
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Where a patient enters the life table: age and calendar time at
/// diagnosis plus the stratum tuple.
#[derive(Debug, Clone, PartialEq)]
pub struct LifeTableKey {
    pub age: f64,
    pub year: f64,
    pub stratum: Vec<String>,
}

impl LifeTableKey {
    pub fn new(age: f64, year: f64, stratum: Vec<String>) -> Self {
        Self { age, year, stratum }
    }
}

/// A [`LifeTableKey`] with its stratum already mapped to a table index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResolvedKey {
    pub stratum: usize,
    pub age: f64,
    pub year: f64,
}

/// Result of inverting the background cumulative hazard.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OtherCauseTime {
    pub time: f64,
    /// The table rates reached zero for good before the target was hit;
    /// `time` is then the horizon after which no more mortality accrues.
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LifeTable {
    stratum_schema: Vec<String>,
    strata: Vec<Vec<String>>,
    stratum_index: HashMap<Vec<String>, usize>,
    min_age: i32,
    max_age: i32,
    min_year: i32,
    max_year: i32,
    // [stratum][age - min_age][year - min_year]
    rates: Vec<f64>,
}

/// One life-table cell as read from a source, with its source row number.
#[derive(Debug, Clone)]
pub struct Cell {
    pub row: u64,
    pub age: i32,
    pub year: i32,
    pub stratum: Vec<String>,
    pub rate: f64,
}

impl LifeTable {
    /// Builds a table from cells, checking rates, duplicates and completeness.
    pub fn from_cells(
        stratum_schema: Vec<String>,
        cells: impl IntoIterator<Item = Cell>,
    ) -> Result<Self, LifeTableError> {
        let mut map: BTreeMap<(Vec<String>, i32, i32), f64> = BTreeMap::new();
        let (mut min_age, mut max_age) = (i32::MAX, i32::MIN);
        let (mut min_year, mut max_year) = (i32::MAX, i32::MIN);
        for cell in cells {
            if cell.stratum.len() != stratum_schema.len() {
                return Err(LifeTableError::Malformed {
                    row: cell.row,
                    message: format!(
                        "expected {} stratum values, got {}",
                        stratum_schema.len(),
                        cell.stratum.len()
                    ),
                });
            }
            if !cell.rate.is_finite() {
                return Err(LifeTableError::NonFiniteRate { row: cell.row });
            }
            if cell.rate < 0.0 {
                return Err(LifeTableError::NegativeRate {
                    row: cell.row,
                    rate: cell.rate,
                });
            }
            min_age = min_age.min(cell.age);
            max_age = max_age.max(cell.age);
            min_year = min_year.min(cell.year);
            max_year = max_year.max(cell.year);
            let key = (cell.stratum, cell.age, cell.year);
            if map.contains_key(&key) {
                let (stratum, age, year) = key;
                return Err(LifeTableError::Duplicate {
                    row: cell.row,
                    age,
                    year,
                    stratum,
                });
            }
            map.insert(key, cell.rate);
        }
        if map.is_empty() {
            return Err(LifeTableError::Empty);
        }

        let mut strata: Vec<Vec<String>> = map.keys().map(|(s, _, _)| s.clone()).collect();
        strata.dedup();
        let n_age = (max_age - min_age + 1) as usize;
        let n_year = (max_year - min_year + 1) as usize;
        let mut rates = Vec::with_capacity(strata.len() * n_age * n_year);
        for stratum in &strata {
            for age in min_age..=max_age {
                for year in min_year..=max_year {
                    match map.get(&(stratum.clone(), age, year)) {
                        Some(&rate) => rates.push(rate),
                        None => {
                            return Err(LifeTableError::GridHole {
                                age,
                                year,
                                stratum: stratum.clone(),
                            })
                        }
                    }
                }
            }
        }
        let stratum_index = strata
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        Ok(Self {
            stratum_schema,
            strata,
            stratum_index,
            min_age,
            max_age,
            min_year,
            max_year,
            rates,
        })
    }

    /// Single-cell, unstratified table: the same rate at every age and year.
    pub fn constant(rate: f64) -> Result<Self, LifeTableError> {
        Self::from_cells(
            Vec::new(),
            [Cell {
                row: 1,
                age: 0,
                year: 2000,
                stratum: Vec::new(),
                rate,
            }],
        )
    }

    /// Parses the `age,year,<strata...>,rate` CSV format. Lines starting
    /// with `#` are comments.
    pub fn load_csv<R: Read>(source: R) -> Result<Self, LifeTableError> {
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(source);
        let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
        let n = header.len();
        if n < 3 || header[0] != "age" || header[1] != "year" || header[n - 1] != "rate" {
            return Err(LifeTableError::Header(header.join(",")));
        }
        let schema = header[2..n - 1].to_vec();

        let mut cells = Vec::new();
        for record in reader.records() {
            let record = record?;
            let row = record.position().map_or(0, |p| p.line());
            if record.len() != n {
                return Err(LifeTableError::Malformed {
                    row,
                    message: format!("expected {n} fields, got {}", record.len()),
                });
            }
            let int = |i: usize| -> Result<i32, LifeTableError> {
                record[i].parse().map_err(|_| LifeTableError::Malformed {
                    row,
                    message: format!("`{}` is not an integer {}", &record[i], header[i]),
                })
            };
            let age = int(0)?;
            let year = int(1)?;
            let rate: f64 = record[n - 1].parse().map_err(|_| LifeTableError::Malformed {
                row,
                message: format!("`{}` is not a number", &record[n - 1]),
            })?;
            let stratum = (2..n - 1).map(|i| record[i].to_owned()).collect();
            cells.push(Cell {
                row,
                age,
                year,
                stratum,
                rate,
            });
        }
        Self::from_cells(schema, cells)
    }

    pub fn write_csv<W: std::io::Write>(&self, sink: W) -> Result<(), LifeTableError> {
        let mut writer = csv::Writer::from_writer(sink);
        let mut header = vec!["age".to_owned(), "year".to_owned()];
        header.extend(self.stratum_schema.iter().cloned());
        header.push("rate".to_owned());
        writer.write_record(&header)?;
        for (s, stratum) in self.strata.iter().enumerate() {
            for age in self.min_age..=self.max_age {
                for year in self.min_year..=self.max_year {
                    let mut row = vec![age.to_string(), year.to_string()];
                    row.extend(stratum.iter().cloned());
                    row.push(format!("{:?}", self.cell(s, age, year)));
                    writer.write_record(&row)?;
                }
            }
        }
        writer.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn stratum_schema(&self) -> &[String] {
        &self.stratum_schema
    }

    pub fn strata(&self) -> &[Vec<String>] {
        &self.strata
    }

    pub fn age_range(&self) -> (i32, i32) {
        (self.min_age, self.max_age)
    }

    pub fn year_range(&self) -> (i32, i32) {
        (self.min_year, self.max_year)
    }

    pub fn len(&self) -> usize {
        self.rates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rates.is_empty()
    }

    pub fn resolve(&self, key: &LifeTableKey) -> Result<ResolvedKey, LifeTableError> {
        let stratum = *self
            .stratum_index
            .get(&key.stratum)
            .ok_or_else(|| LifeTableError::UnknownStratum(key.stratum.clone()))?;
        Ok(ResolvedKey {
            stratum,
            age: key.age,
            year: key.year,
        })
    }

    fn cell(&self, stratum: usize, age: i32, year: i32) -> f64 {
        let a = (age.clamp(self.min_age, self.max_age) - self.min_age) as usize;
        let y = (year.clamp(self.min_year, self.max_year) - self.min_year) as usize;
        let n_age = (self.max_age - self.min_age + 1) as usize;
        let n_year = (self.max_year - self.min_year + 1) as usize;
        self.rates[(stratum * n_age + a) * n_year + y]
    }

    /// Expected hazard at attained age `age + t` and calendar time `year + t`.
    pub fn pop_hazard(&self, key: &LifeTableKey, t: f64) -> Result<f64, LifeTableError> {
        Ok(self.hazard_at(self.resolve(key)?, t))
    }

    pub fn hazard_at(&self, key: ResolvedKey, t: f64) -> f64 {
        let age = floor_band(key.age + t);
        let year = floor_band(key.year + t);
        self.cell(key.stratum, age, year)
    }

    /// Background cumulative hazard accrued over `[0, t]` since diagnosis.
    pub fn pop_cum_hazard(&self, key: &LifeTableKey, t: f64) -> Result<f64, LifeTableError> {
        Ok(self.cum_hazard_at(self.resolve(key)?, t))
    }

    pub fn cum_hazard_at(&self, key: ResolvedKey, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        let mut total = 0.0;
        for seg in self.segments(key) {
            if seg.end >= t {
                total += seg.rate * (t - seg.start);
                break;
            }
            total += seg.rate * (seg.end - seg.start);
        }
        total
    }

    /// Other-cause death time for a uniform draw `u`, solving
    /// `pop_cum_hazard(t) = -ln(1 - u)` exactly.
    pub fn sample_other_cause_time(
        &self,
        key: &LifeTableKey,
        u: f64,
    ) -> Result<OtherCauseTime, LifeTableError> {
        Ok(self.invert_at(self.resolve(key)?, -(-u).ln_1p()))
    }

    /// Inverts the cumulative background hazard at `target >= 0`.
    pub fn invert_at(&self, key: ResolvedKey, target: f64) -> OtherCauseTime {
        if target <= 0.0 {
            return OtherCauseTime {
                time: 0.0,
                truncated: false,
            };
        }
        let mut acc = 0.0;
        for seg in self.segments(key) {
            let mass = seg.rate * (seg.end - seg.start);
            if seg.end.is_infinite() && seg.rate == 0.0 {
                return OtherCauseTime {
                    time: seg.start,
                    truncated: true,
                };
            }
            if acc + mass >= target {
                return OtherCauseTime {
                    time: seg.start + (target - acc) / seg.rate,
                    truncated: false,
                };
            }
            acc += mass;
        }
        unreachable!("segment iterator ends with an unbounded segment")
    }

    /// Piecewise-constant pieces of the attained hazard along follow-up.
    /// The final piece is unbounded (both age and year clamped).
    fn segments(&self, key: ResolvedKey) -> Segments<'_> {
        Segments {
            table: self,
            stratum: key.stratum,
            age0: key.age,
            year0: key.year,
            age_band: floor_band(key.age),
            year_band: floor_band(key.year),
            start: 0.0,
            done: false,
        }
    }
}

fn floor_band(x: f64) -> i32 {
    x.floor().clamp(i32::MIN as f64, i32::MAX as f64) as i32
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    start: f64,
    end: f64,
    rate: f64,
}

struct Segments<'a> {
    table: &'a LifeTable,
    stratum: usize,
    age0: f64,
    year0: f64,
    age_band: i32,
    year_band: i32,
    start: f64,
    done: bool,
}

impl Iterator for Segments<'_> {
    type Item = Segment;

    fn next(&mut self) -> Option<Segment> {
        if self.done {
            return None;
        }
        let t = self.table;
        let rate = t.cell(self.stratum, self.age_band, self.year_band);
        // Boundaries below the table are skipped in one jump: the rate is
        // clamped there anyway.
        let age_next = if self.age_band >= t.max_age {
            f64::INFINITY
        } else {
            (self.age_band.max(t.min_age - 1) + 1) as f64 - self.age0
        };
        let year_next = if self.year_band >= t.max_year {
            f64::INFINITY
        } else {
            (self.year_band.max(t.min_year - 1) + 1) as f64 - self.year0
        };
        let end = age_next.min(year_next).max(self.start);
        let seg = Segment {
            start: self.start,
            end,
            rate,
        };
        if end.is_infinite() {
            self.done = true;
        } else {
            if age_next <= year_next {
                self.age_band = self.age_band.max(t.min_age - 1) + 1;
            }
            if year_next <= age_next {
                self.year_band = self.year_band.max(t.min_year - 1) + 1;
            }
            self.start = end;
        }
        Some(seg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cells(rates: &[(i32, i32, f64)]) -> Vec<Cell> {
        rates
            .iter()
            .enumerate()
            .map(|(i, &(age, year, rate))| Cell {
                row: i as u64 + 2,
                age,
                year,
                stratum: Vec::new(),
                rate,
            })
            .collect()
    }

    // rate 0.01 at age 70, 0.03 at age 71, flat in calendar time
    fn two_band() -> LifeTable {
        let mut c = Vec::new();
        for year in 2010..=2016 {
            c.push((70, year, 0.01));
            c.push((71, year, 0.03));
        }
        LifeTable::from_cells(Vec::new(), cells(&c)).unwrap()
    }

    fn key(age: f64, year: f64) -> LifeTableKey {
        LifeTableKey::new(age, year, Vec::new())
    }

    #[test]
    fn parses_small_grid() {
        let csv = "age,year,sex,rate\n# comment\n70,2012,F,0.01\n70,2013,F,0.02\n71,2012,F,0.03\n71,2013,F,0.04\n";
        let table = LifeTable::load_csv(csv.as_bytes()).unwrap();
        assert_eq!(table.len(), 4);
        assert_eq!(table.age_range(), (70, 71));
        assert_eq!(table.year_range(), (2012, 2013));
        assert_eq!(table.stratum_schema(), ["sex".to_owned()]);
        let k = LifeTableKey::new(70.2, 2012.0, vec!["F".into()]);
        assert_eq!(table.pop_hazard(&k, 0.9).unwrap(), 0.03);
    }

    #[test]
    fn reports_grid_hole() {
        let csv = "age,year,rate\n70,2012,0.01\n70,2013,0.02\n71,2012,0.03\n";
        match LifeTable::load_csv(csv.as_bytes()) {
            Err(LifeTableError::GridHole { age, year, .. }) => {
                assert_eq!((age, year), (71, 2013));
            }
            other => panic!("expected grid hole, got {other:?}"),
        }
    }

    #[test]
    fn reports_negative_rate_with_row() {
        let csv = "age,year,rate\n70,2012,0.01\n70,2013,-0.01\n";
        match LifeTable::load_csv(csv.as_bytes()) {
            Err(LifeTableError::NegativeRate { row, rate }) => {
                assert_eq!(row, 3);
                assert_eq!(rate, -0.01);
            }
            other => panic!("expected negative rate, got {other:?}"),
        }
    }

    #[test]
    fn rejects_duplicates_and_bad_rows() {
        let dup = "age,year,rate\n70,2012,0.01\n70,2012,0.02\n";
        assert!(matches!(
            LifeTable::load_csv(dup.as_bytes()),
            Err(LifeTableError::Duplicate { row: 3, .. })
        ));
        let bad = "age,year,rate\n70,abc,0.01\n";
        assert!(matches!(
            LifeTable::load_csv(bad.as_bytes()),
            Err(LifeTableError::Malformed { row: 2, .. })
        ));
        let header = "year,age,rate\n70,2012,0.01\n";
        assert!(matches!(
            LifeTable::load_csv(header.as_bytes()),
            Err(LifeTableError::Header(_))
        ));
    }

    #[test]
    fn unknown_stratum_is_an_error() {
        let csv = "age,year,sex,rate\n70,2012,F,0.01\n";
        let table = LifeTable::load_csv(csv.as_bytes()).unwrap();
        let k = LifeTableKey::new(70.0, 2012.0, vec!["M".into()]);
        assert!(matches!(
            table.pop_hazard(&k, 0.0),
            Err(LifeTableError::UnknownStratum(_))
        ));
    }

    #[test]
    fn floor_lookup_and_clamping() {
        let table = two_band();
        let k = key(70.2, 2012.0);
        assert_eq!(table.pop_hazard(&k, 0.9).unwrap(), 0.03);
        assert_eq!(table.pop_hazard(&k, 0.5).unwrap(), 0.01);
        assert_eq!(table.pop_hazard(&key(95.0, 2030.0), 3.0).unwrap(), 0.03);
        assert_eq!(table.pop_hazard(&key(20.0, 1990.0), 0.0).unwrap(), 0.01);
    }

    #[test]
    fn constant_table() {
        let table = LifeTable::constant(0.02).unwrap();
        let k = key(63.4, 2011.7);
        for t in [0.0, 0.3, 4.0, 17.5] {
            assert_eq!(table.pop_hazard(&k, t).unwrap(), 0.02);
        }
        assert!((table.pop_cum_hazard(&k, 5.0).unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(table.pop_cum_hazard(&k, 0.0).unwrap(), 0.0);
        let u = 1.0 - (-0.1f64).exp();
        let s = table.sample_other_cause_time(&k, u).unwrap();
        assert!(!s.truncated);
        assert!((s.time - 5.0).abs() < 1e-12);
        let tiny = table.sample_other_cause_time(&k, 1e-12).unwrap();
        assert!(tiny.time < 1e-9 && tiny.time > 0.0);
    }

    #[test]
    fn two_band_integral_matches_riemann_sum() {
        let table = two_band();
        let k = key(70.5, 2012.0);
        let exact = table.pop_cum_hazard(&k, 1.0).unwrap();
        assert!((exact - 0.02).abs() < 1e-15);

        // midpoint Riemann sum of the step function
        let n = 200_000;
        let dt = 1.0 / n as f64;
        let riemann: f64 = (0..n)
            .map(|i| table.pop_hazard(&k, (i as f64 + 0.5) * dt).unwrap() * dt)
            .sum();
        assert!((riemann - exact).abs() < 1e-6);
    }

    #[test]
    fn two_band_inversion() {
        let table = two_band();
        let k = key(70.5, 2012.0);
        let r = table.resolve(&k).unwrap();
        let t = table.invert_at(r, 0.015);
        assert!(!t.truncated);
        assert!((t.time - (0.5 + 0.01 / 0.03)).abs() < 1e-12);

        // bisection on the cumulative hazard as an independent check
        let (mut lo, mut hi) = (0.0, 10.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if table.cum_hazard_at(r, mid) < 0.015 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!((t.time - 0.5 * (lo + hi)).abs() < 1e-12);
    }

    #[test]
    fn zero_table_truncates() {
        let table = LifeTable::constant(0.0).unwrap();
        let s = table.sample_other_cause_time(&key(50.0, 2000.0), 0.5).unwrap();
        assert!(s.truncated);
    }

    #[test]
    fn csv_roundtrip() {
        let table = two_band();
        let mut buf = Vec::new();
        table.write_csv(&mut buf).unwrap();
        let back = LifeTable::load_csv(buf.as_slice()).unwrap();
        assert_eq!(back, table);
    }
}
