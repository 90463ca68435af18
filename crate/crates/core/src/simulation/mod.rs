//! Cohort simulation from the additive hazard decomposition and the
//! simulation-study harnesses built on it.
//!
//! Each patient gets covariates, a frailty draw, an excess-cause time by
//! inverse transform, an other-cause time from the life table, an
//! exponential drop-out time and administrative censoring. The observed time
//! is the earliest of these.

pub mod aim1;
pub mod aim2;
pub mod scenario;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::data::{Dataset, PatientRecord};
use crate::lifetable::{Cell, LifeTable, LifeTableError, LifeTableKey};
use crate::model::{FrailtySpec, GhParams};
use crate::netsurv::NetSurvivalCurve;

pub use aim1::{run_aim1, Aim1Options, Aim1Result, PerformanceRow, PerformanceTable, ReplicateFit};
pub use aim2::{run_aim2, Aim2Curve, Aim2Options, Aim2Report};
pub use scenario::{mixture_moments, Aim2Spec, CovariateGen, Scenario, StratumFrom, TruthBlock};

/// Streams reserved for auxiliary draws; replicates use streams `0..M`.
const CALIBRATION_STREAM: u64 = u64::MAX - 1;
const TRUTH_STREAM: u64 = u64::MAX - 2;
const CALIBRATION_SIZE: usize = 20_000;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("scenario file: {0}")]
    Parse(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("life table: {0}")]
    LifeTable(#[from] LifeTableError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    NetSurv(#[from] crate::netsurv::NetSurvError),
}

/// Synthetic background mortality with Gompertz-like age dependence, lower
/// rates for women and a secular decline of 1.5% per year.
///
/// Ages 0..=100, years 2000..=2030, stratified by `sex_group` (`male`,
/// `female`).
pub fn synthetic_life_table() -> LifeTable {
    let mut cells = Vec::new();
    for (label, factor) in [("male", 1.0), ("female", 0.8)] {
        for age in 0..=100 {
            for year in 2000..=2030 {
                let rate = factor * (-10.2 + 0.09 * age as f64 - 0.015 * (year - 2000) as f64).exp();
                cells.push(Cell {
                    row: 0,
                    age,
                    year,
                    stratum: vec![label.to_string()],
                    rate,
                });
            }
        }
    }
    LifeTable::from_cells(vec!["sex_group".into()], cells).expect("synthetic table is complete")
}

struct ResolvedTruth {
    when: Option<(usize, f64)>,
    params: GhParams,
    frailty: FrailtySpec,
    x_idx: Vec<usize>,
    w_idx: Vec<usize>,
}

enum Gen {
    Age {
        components: Vec<[f64; 3]>,
        center: f64,
        scale: f64,
    },
    Bernoulli(f64),
    Conditional {
        given: usize,
        p1: f64,
        p0: f64,
    },
    Normal(f64, f64),
    Categorical(Vec<f64>),
}

/// Quantity matched when calibrating the drop-out rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Calibration {
    /// Share censored by drop-out before death or administrative censoring.
    Dropout,
    /// Share censored by either mechanism.
    Censoring,
}

/// One simulated patient before censoring is applied.
#[derive(Debug, Clone)]
pub struct SimulatedPatient {
    pub covariates: Vec<f64>,
    pub key: LifeTableKey,
    pub frailty: f64,
    pub excess_time: f64,
    /// `f64::INFINITY` when the life table never reaches the drawn level.
    pub other_time: f64,
    pub dropout_time: f64,
}

/// A scenario bound to its life table, with the drop-out rate resolved.
pub struct Simulator {
    pub scenario: Scenario,
    pub table: LifeTable,
    pub columns: Vec<String>,
    pub dropout_rate: f64,
    gens: Vec<Gen>,
    truths: Vec<ResolvedTruth>,
    stratum_idx: Option<usize>,
}

impl Simulator {
    /// Binds `scenario` to `table`, calibrating the drop-out rate if needed.
    pub fn new(scenario: Scenario, table: LifeTable) -> Result<Self, SimError> {
        scenario.validate()?;
        let columns = scenario.columns();
        let col = |name: &str| {
            columns
                .iter()
                .position(|c| c == name)
                .ok_or_else(|| SimError::Invalid(format!("unknown covariate `{name}`")))
        };
        let mut gens = Vec::new();
        for g in &scenario.covariates {
            gens.push(match g {
                CovariateGen::AgeMixture {
                    components,
                    center,
                    scale,
                    ..
                } => {
                    let (m, s) = mixture_moments(components);
                    Gen::Age {
                        components: components.clone(),
                        center: center.unwrap_or(m),
                        scale: scale.unwrap_or(s),
                    }
                }
                CovariateGen::Bernoulli { p, .. } => Gen::Bernoulli(*p),
                CovariateGen::ConditionalBernoulli {
                    given,
                    p_if_one,
                    p_if_zero,
                    ..
                } => Gen::Conditional {
                    given: col(given)?,
                    p1: *p_if_one,
                    p0: *p_if_zero,
                },
                CovariateGen::Normal { mean, sd, .. } => Gen::Normal(*mean, *sd),
                CovariateGen::Categorical { probs, .. } => Gen::Categorical(probs.clone()),
            });
        }
        let mut truths = Vec::new();
        for t in &scenario.truth {
            truths.push(ResolvedTruth {
                when: match &t.when {
                    Some(c) => Some((col(&c.covariate)?, c.value)),
                    None => None,
                },
                params: GhParams::new(t.alpha.clone(), t.beta.clone(), t.baseline)
                    .map_err(|e| SimError::Invalid(e.to_string()))?,
                frailty: t.frailty,
                x_idx: t.x.iter().map(|c| col(c)).collect::<Result<_, _>>()?,
                w_idx: t.w.iter().map(|c| col(c)).collect::<Result<_, _>>()?,
            });
        }
        let stratum_idx = match scenario.stratum.as_ref().and_then(|s| s.covariate.as_ref()) {
            Some(c) => Some(col(c)?),
            None => None,
        };
        let schema: Vec<String> = scenario.stratum.iter().map(|s| s.column.clone()).collect();
        if table.stratum_schema() != schema.as_slice() {
            return Err(SimError::Invalid(format!(
                "life-table strata {:?} do not match scenario strata {schema:?}",
                table.stratum_schema()
            )));
        }
        let mut sim = Simulator {
            scenario,
            table,
            columns,
            dropout_rate: 0.0,
            gens,
            truths,
            stratum_idx,
        };
        sim.dropout_rate = match (sim.scenario.dropout_rate, sim.scenario.censoring_target) {
            (Some(r), _) => r,
            (None, Some(c)) => sim.calibrate(c, Calibration::Censoring)?,
            (None, None) => sim.calibrate(sim.scenario.dropout_target, Calibration::Dropout)?,
        };
        Ok(sim)
    }

    /// Loads the scenario's life table (`synthetic` or a CSV path relative
    /// to `base_dir`) and binds it.
    pub fn from_scenario(scenario: Scenario, base_dir: &Path) -> Result<Self, SimError> {
        let table = if scenario.life_table == "synthetic" {
            synthetic_life_table()
        } else {
            let file = std::fs::File::open(base_dir.join(&scenario.life_table))?;
            LifeTable::load_csv(file)?
        };
        Self::new(scenario, table)
    }

    /// Random stream for replicate `replicate`.
    pub fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.scenario.seed);
        rng.set_stream(stream);
        rng
    }

    fn draw_covariates<R: Rng>(&self, rng: &mut R) -> (Vec<f64>, f64) {
        let mut out = Vec::with_capacity(self.columns.len());
        let mut raw_age = f64::NAN;
        for g in &self.gens {
            match g {
                Gen::Age {
                    components,
                    center,
                    scale,
                } => {
                    let total: f64 = components.iter().map(|c| c[2]).sum();
                    let mut pick = rng.random::<f64>() * total;
                    let mut chosen = components[components.len() - 1];
                    for c in components {
                        if pick < c[2] {
                            chosen = *c;
                            break;
                        }
                        pick -= c[2];
                    }
                    raw_age = chosen[0] + rng.random::<f64>() * (chosen[1] - chosen[0]);
                    out.push((raw_age - center) / scale);
                }
                Gen::Bernoulli(p) => out.push((rng.random::<f64>() < *p) as u8 as f64),
                Gen::Conditional { given, p1, p0 } => {
                    let p = if out[*given] == 1.0 { p1 } else { p0 };
                    out.push((rng.random::<f64>() < *p) as u8 as f64);
                }
                Gen::Normal(m, s) => {
                    let z: f64 = rng.sample(rand_distr::StandardNormal);
                    out.push(m + s * z);
                }
                Gen::Categorical(probs) => {
                    let u = rng.random::<f64>();
                    let mut acc = 0.0;
                    let mut level = probs.len() - 1;
                    for (k, p) in probs.iter().enumerate() {
                        acc += p;
                        if u < acc {
                            level = k;
                            break;
                        }
                    }
                    for k in 1..probs.len() {
                        out.push((level == k) as u8 as f64);
                    }
                }
            }
        }
        (out, raw_age)
    }

    fn truth_for(&self, covariates: &[f64]) -> Option<&ResolvedTruth> {
        self.truths
            .iter()
            .find(|t| t.when.is_none_or(|(j, v)| covariates[j] == v))
    }

    fn stratum_label(&self, covariates: &[f64]) -> Vec<String> {
        let Some(st) = &self.scenario.stratum else {
            return vec![];
        };
        let k = self.stratum_idx.map_or(0, |j| covariates[j].max(0.0) as usize);
        vec![st.labels[k.min(st.labels.len() - 1)].clone()]
    }

    /// Draws one patient: covariates, key, frailty and the three latent times.
    pub fn draw_patient<R: Rng>(&self, rng: &mut R) -> Result<SimulatedPatient, SimError> {
        let (covariates, raw_age) = self.draw_covariates(rng);
        let [y0, y1] = self.scenario.diagnosis_years;
        let year = y0 + rng.random::<f64>() * (y1 - y0);
        let key = LifeTableKey::new(raw_age, year, self.stratum_label(&covariates));
        let truth = self
            .truth_for(&covariates)
            .ok_or_else(|| SimError::Invalid("no truth block matches a simulated patient".into()))?;
        let frailty = truth.frailty.sample(rng);
        let x: Vec<f64> = truth.x_idx.iter().map(|&j| covariates[j]).collect();
        let w: Vec<f64> = truth.w_idx.iter().map(|&j| covariates[j]).collect();
        let (wa, xb) = truth.params.predictors(&x, &w);
        let excess_time = truth.params.event_time_with(unit_exponential(rng), wa, xb, frailty);
        let resolved = self.table.resolve(&key)?;
        let oc = self.table.invert_at(resolved, unit_exponential(rng));
        let other_time = if oc.truncated { f64::INFINITY } else { oc.time };
        let e = unit_exponential(rng);
        let dropout_time = if self.dropout_rate > 0.0 {
            e / self.dropout_rate
        } else {
            f64::INFINITY
        };
        Ok(SimulatedPatient {
            covariates,
            key,
            frailty,
            excess_time,
            other_time,
            dropout_time,
        })
    }

    fn observe(&self, p: SimulatedPatient) -> PatientRecord {
        let death = p.excess_time.min(p.other_time);
        let censor = p.dropout_time.min(self.scenario.admin_censor);
        let status = death <= censor;
        PatientRecord {
            time: if status { death } else { censor },
            status,
            covariates: p.covariates,
            key: p.key,
        }
    }

    /// Cohort of size `n` from stream `stream`.
    pub fn generate_with(&self, n: usize, stream: u64) -> Result<Dataset, SimError> {
        let mut rng = self.rng(stream);
        let records = (0..n)
            .map(|_| self.draw_patient(&mut rng).map(|p| self.observe(p)))
            .collect::<Result<Vec<_>, _>>()?;
        let schema = self.scenario.stratum.iter().map(|s| s.column.clone()).collect();
        Dataset::new(self.columns.clone(), schema, records).map_err(|e| SimError::Invalid(e.to_string()))
    }

    /// Cohort for replicate `replicate` at the scenario's size.
    pub fn generate_cohort(&self, replicate: u64) -> Result<Dataset, SimError> {
        self.generate_with(self.scenario.n, replicate)
    }

    /// Drop-out rate giving a `target` share of patients censored by
    /// drop-out (or censored at all, for [`Calibration::Censoring`]), found
    /// by bisection on a fixed calibration sample.
    pub fn calibrate(&self, target: f64, what: Calibration) -> Result<f64, SimError> {
        let mut rng = self.rng(CALIBRATION_STREAM);
        let admin = self.scenario.admin_censor;
        let mut death = Vec::with_capacity(CALIBRATION_SIZE);
        let mut exps = Vec::with_capacity(CALIBRATION_SIZE);
        for _ in 0..CALIBRATION_SIZE {
            let p = self.draw_patient(&mut rng)?;
            death.push(p.excess_time.min(p.other_time));
            exps.push(unit_exponential(&mut rng));
        }
        let share = |r: f64| {
            let hits = death.iter().zip(&exps).filter(|(d, e)| match what {
                Calibration::Dropout => *e / r < d.min(admin),
                Calibration::Censoring => (*e / r).min(admin) < **d,
            });
            hits.count() as f64 / CALIBRATION_SIZE as f64
        };
        if share(0.0) >= target {
            return match what {
                Calibration::Dropout => Ok(0.0),
                Calibration::Censoring => Err(SimError::Invalid(format!(
                    "administrative censoring alone exceeds the censoring target {target}"
                ))),
            };
        }
        let (mut lo, mut hi) = (0.0, 0.01);
        while share(hi) < target {
            hi *= 2.0;
            if hi > 1e6 {
                return Err(SimError::Invalid("drop-out target cannot be reached".into()));
            }
        }
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if share(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// Covariate profiles for truth curves, from a dedicated stream.
    pub fn covariate_sample(&self, n: usize) -> Vec<Vec<f64>> {
        let mut rng = self.rng(TRUTH_STREAM);
        (0..n).map(|_| self.draw_covariates(&mut rng).0).collect()
    }

    /// True marginal net survival averaged over `profiles` passing `keep`.
    pub fn true_net_survival<F: Fn(&[f64]) -> bool>(
        &self,
        profiles: &[Vec<f64>],
        grid: &[f64],
        label: &str,
        keep: F,
    ) -> Result<NetSurvivalCurve, SimError> {
        let mut sum = vec![0.0; grid.len()];
        let mut count = 0usize;
        for c in profiles.iter().filter(|c| keep(c)) {
            let t = self
                .truth_for(c)
                .ok_or_else(|| SimError::Invalid("no truth block matches a profile".into()))?;
            let x: Vec<f64> = t.x_idx.iter().map(|&j| c[j]).collect();
            let w: Vec<f64> = t.w_idx.iter().map(|&j| c[j]).collect();
            let (wa, xb) = t.params.predictors(&x, &w);
            for (k, &time) in grid.iter().enumerate() {
                let h = t.params.cum_hazard_with(time, wa, xb);
                sum[k] += t.frailty.log_laplace_unchecked(h).exp();
            }
            count += 1;
        }
        if count == 0 {
            return Err(crate::netsurv::NetSurvError::EmptySubgroup(label.to_string()).into());
        }
        Ok(NetSurvivalCurve {
            time: grid.to_vec(),
            estimate: sum.iter().map(|s| s / count as f64).collect(),
            lower: None,
            upper: None,
            label: label.to_string(),
            model: "truth".into(),
        })
    }

    /// Truth at the all-zero covariate profile, using the first truth block
    /// that applies to it.
    pub fn reference_net_survival(&self, grid: &[f64]) -> Result<NetSurvivalCurve, SimError> {
        let zero = vec![vec![0.0; self.columns.len()]];
        let mut c = self.true_net_survival(&zero, grid, "reference", |_| true)?;
        c.label = "reference".into();
        Ok(c)
    }
}

/// Standard exponential draw, strictly positive.
fn unit_exponential<R: Rng>(rng: &mut R) -> f64 {
    let u: f64 = rng.random_range(f64::EPSILON..1.0);
    -(-u).ln_1p()
}

/// Default number of covariate profiles behind a truth curve.
pub const TRUTH_PROFILES: usize = 100_000;
