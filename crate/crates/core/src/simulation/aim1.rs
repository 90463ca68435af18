//! Finite-sample study: repeated generation and fitting of the correctly
//! specified model, summarised as bias, coverage and standard-error
//! calibration per parameter.

use std::io::Write;

use rayon::prelude::*;

use crate::data::fmt_f64;
use crate::inference::{fit, wald_ci, FitOptions, ModelSpec};
use crate::model::FrailtyFamily;
use crate::netsurv::profile_net_survival;

use super::{SimError, Simulator};

#[derive(Debug, Clone)]
pub struct Aim1Options {
    /// Overrides the scenario's cohort size.
    pub n: Option<usize>,
    /// Overrides the scenario's replicate count.
    pub replicates: Option<usize>,
    pub fit: FitOptions,
    pub level: f64,
    /// Also fit the no-frailty model and record both AICs.
    pub compare_classical: bool,
    /// Grid for the fitted reference-profile net survival; `None` skips it.
    pub reference_grid: Option<Vec<f64>>,
}

impl Default for Aim1Options {
    fn default() -> Self {
        Self {
            n: None,
            replicates: None,
            fit: FitOptions::default(),
            level: 0.95,
            compare_classical: false,
            reference_grid: None,
        }
    }
}

/// Outcome of one replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateFit {
    pub replicate: u64,
    pub n_events: usize,
    pub converged: bool,
    pub se_valid: bool,
    /// Natural-scale estimates in table order; empty when the fit errored.
    pub estimates: Vec<f64>,
    pub std_errors: Option<Vec<f64>>,
    pub covered: Option<Vec<bool>>,
    pub aic: f64,
    pub classical_aic: Option<f64>,
    pub classical_converged: Option<bool>,
    /// Fitted net survival at the all-zero covariate profile.
    pub reference_curve: Option<Vec<f64>>,
    pub error: Option<String>,
}

impl ReplicateFit {
    pub fn analysed(&self) -> bool {
        self.converged && self.se_valid
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerformanceRow {
    pub name: String,
    pub truth: f64,
    pub mean: f64,
    pub bias: f64,
    pub median: f64,
    pub coverage: f64,
    pub mean_se: f64,
    pub emp_sd: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerformanceTable {
    pub scenario: String,
    pub n: usize,
    pub replicates: usize,
    pub analysed: usize,
    pub excluded: usize,
    pub level: f64,
    pub rows: Vec<PerformanceRow>,
}

impl PerformanceTable {
    pub fn row(&self, name: &str) -> Option<&PerformanceRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn write_csv<W: Write>(&self, sink: W) -> Result<(), SimError> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record([
            "scenario", "n", "replicates", "analysed", "excluded", "parameter", "truth", "mean_mle", "bias",
            "median_mle", "coverage", "mean_se", "emp_sd",
        ])?;
        for r in &self.rows {
            w.write_record([
                self.scenario.clone(),
                self.n.to_string(),
                self.replicates.to_string(),
                self.analysed.to_string(),
                self.excluded.to_string(),
                r.name.clone(),
                fmt_f64(r.truth),
                fmt_f64(r.mean),
                fmt_f64(r.bias),
                fmt_f64(r.median),
                fmt_f64(r.coverage),
                fmt_f64(r.mean_se),
                fmt_f64(r.emp_sd),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Aim1Result {
    pub table: PerformanceTable,
    pub fits: Vec<ReplicateFit>,
    pub reference_grid: Option<Vec<f64>>,
}

impl Aim1Result {
    /// Share of replicates with both fits converged in which the frailty
    /// model has the strictly lower AIC, and the number of such replicates.
    pub fn frailty_aic_wins(&self) -> Option<(f64, usize)> {
        let pairs: Vec<(f64, f64)> = self
            .fits
            .iter()
            .filter(|f| f.converged && f.classical_converged == Some(true))
            .filter_map(|f| f.classical_aic.map(|c| (f.aic, c)))
            .collect();
        if pairs.is_empty() {
            return None;
        }
        let wins = pairs.iter().filter(|(f, c)| f < c).count();
        Some((wins as f64 / pairs.len() as f64, pairs.len()))
    }

    /// Pointwise mean of the fitted reference curves over analysed replicates.
    pub fn mean_reference_curve(&self) -> Option<Vec<f64>> {
        let curves: Vec<&Vec<f64>> = self
            .fits
            .iter()
            .filter(|f| f.analysed())
            .filter_map(|f| f.reference_curve.as_ref())
            .collect();
        let first = curves.first()?;
        let mut mean = vec![0.0; first.len()];
        for c in &curves {
            for (m, v) in mean.iter_mut().zip(c.iter()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= curves.len() as f64);
        Some(mean)
    }
}

/// True natural-scale values for the parameters of `spec`, read off the
/// first truth block. Effects absent from the truth are zero, as is the
/// frailty variance of a frailty-free truth.
pub fn truth_vector(sim: &Simulator, spec: &ModelSpec) -> Result<Vec<f64>, SimError> {
    let t = &sim.scenario.truth[0];
    if t.baseline.kind() != spec.baseline {
        return Err(SimError::Invalid("analysis baseline differs from the true baseline".into()));
    }
    let mut v = t.baseline.natural();
    let coef = |names: &[String], values: &[f64], c: &String| {
        names.iter().position(|n| n == c).map_or(0.0, |j| values[j])
    };
    v.extend(spec.w.iter().map(|c| coef(&t.w, &t.alpha, c)));
    v.extend(spec.x.iter().map(|c| coef(&t.x, &t.beta, c)));
    if spec.frailty != FrailtyFamily::None {
        v.push(if t.frailty.family == FrailtyFamily::None { 0.0 } else { t.frailty.variance });
    }
    Ok(v)
}

fn one_replicate(sim: &Simulator, spec: &ModelSpec, n: usize, replicate: u64, opts: &Aim1Options) -> ReplicateFit {
    let mut out = ReplicateFit {
        replicate,
        n_events: 0,
        converged: false,
        se_valid: false,
        estimates: vec![],
        std_errors: None,
        covered: None,
        aic: f64::NAN,
        classical_aic: None,
        classical_converged: None,
        reference_curve: None,
        error: None,
    };
    let data = match sim.generate_with(n, replicate) {
        Ok(d) => d,
        Err(e) => {
            out.error = Some(e.to_string());
            return out;
        }
    };
    out.n_events = data.n_events();
    let fit_opts = FitOptions {
        seed: opts.fit.seed.wrapping_add(replicate),
        ..opts.fit.clone()
    };
    let res = match fit(&data, &sim.table, spec, &fit_opts) {
        Ok(r) => r,
        Err(e) => {
            out.error = Some(e.to_string());
            return out;
        }
    };
    out.converged = res.converged();
    out.se_valid = res.se_valid();
    out.aic = res.aic;
    out.estimates = res.estimates.clone();
    out.std_errors = res.natural_std_errors.clone();
    if let Some(grid) = &opts.reference_grid {
        let x = vec![0.0; spec.x.len()];
        let w = vec![0.0; spec.w.len()];
        out.reference_curve = profile_net_survival(&res.params, &res.frailty, &x, &w, grid).ok();
    }
    if let (Ok(ci), Ok(truth)) = (wald_ci(&res, opts.level), truth_vector(sim, spec)) {
        out.covered = Some(ci.iter().zip(&truth).map(|(c, t)| c.lower <= *t && *t <= c.upper).collect());
    }
    if opts.compare_classical && spec.frailty != FrailtyFamily::None {
        let classical = ModelSpec {
            frailty: FrailtyFamily::None,
            ..spec.clone()
        };
        let c_opts = FitOptions {
            compute_se: false,
            ..fit_opts
        };
        if let Ok(c) = fit(&data, &sim.table, &classical, &c_opts) {
            out.classical_aic = Some(c.aic);
            out.classical_converged = Some(c.converged());
        } else {
            out.classical_converged = Some(false);
        }
    }
    out
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len();
    if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    }
}

/// Aggregates replicate fits; a replicate is excluded unless it converged
/// with a valid covariance.
pub fn summarise(
    scenario: &str,
    n: usize,
    names: &[String],
    truth: &[f64],
    level: f64,
    fits: &[ReplicateFit],
) -> PerformanceTable {
    let used: Vec<&ReplicateFit> = fits.iter().filter(|f| f.analysed()).collect();
    let k = used.len() as f64;
    let rows = names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let mut est: Vec<f64> = used.iter().map(|f| f.estimates[j]).collect();
            let mean = est.iter().sum::<f64>() / k;
            let var = est.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (k - 1.0);
            let mean_se = used.iter().map(|f| f.std_errors.as_ref().unwrap()[j]).sum::<f64>() / k;
            let hits = used
                .iter()
                .filter(|f| f.covered.as_ref().is_some_and(|c| c[j]))
                .count() as f64;
            PerformanceRow {
                name: name.clone(),
                truth: truth[j],
                mean,
                bias: mean - truth[j],
                median: if est.is_empty() { f64::NAN } else { median(&mut est) },
                coverage: hits / k,
                mean_se,
                emp_sd: if used.len() > 1 { var.sqrt() } else { f64::NAN },
            }
        })
        .collect();
    PerformanceTable {
        scenario: scenario.to_string(),
        n,
        replicates: fits.len(),
        analysed: used.len(),
        excluded: fits.len() - used.len(),
        level,
        rows,
    }
}

/// Runs the finite-sample study for the scenario's analysis model.
/// Replicates run in parallel on independent streams and are gathered in
/// replicate order, so results do not depend on scheduling.
pub fn run_aim1(sim: &Simulator, opts: &Aim1Options) -> Result<Aim1Result, SimError> {
    let spec = sim.scenario.analysis_spec();
    let truth = truth_vector(sim, &spec)?;
    let n = opts.n.unwrap_or(sim.scenario.n);
    let m = opts.replicates.unwrap_or(sim.scenario.replicates);
    if m == 0 {
        return Err(SimError::Invalid("at least one replicate is required".into()));
    }
    let fits: Vec<ReplicateFit> = (0..m as u64)
        .into_par_iter()
        .map(|r| one_replicate(sim, &spec, n, r, opts))
        .collect();
    let names = spec.layout().names(&spec.x, &spec.w);
    let table = summarise(&sim.scenario.name, n, &names, &truth, opts.level, &fits);
    Ok(Aim1Result {
        table,
        fits,
        reference_grid: opts.reference_grid.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(est: f64, se: f64, cov: bool, ok: bool) -> ReplicateFit {
        ReplicateFit {
            replicate: 0,
            n_events: 10,
            converged: ok,
            se_valid: ok,
            estimates: vec![est],
            std_errors: Some(vec![se]),
            covered: Some(vec![cov]),
            aic: 0.0,
            classical_aic: None,
            classical_converged: None,
            reference_curve: None,
            error: None,
        }
    }

    #[test]
    fn summary_arithmetic() {
        let fits = vec![
            row(1.0, 0.1, true, true),
            row(2.0, 0.3, false, true),
            row(4.0, 0.2, true, true),
            row(99.0, 9.0, true, false),
        ];
        let t = summarise("s", 10, &["p".to_string()], &[2.0], 0.95, &fits);
        let r = &t.rows[0];
        assert_eq!((t.analysed, t.excluded, t.replicates), (3, 1, 4));
        assert!((r.mean - 7.0 / 3.0).abs() < 1e-12);
        assert!((r.bias - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.median, 2.0);
        assert!((r.coverage - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.mean_se - 0.2).abs() < 1e-12);
        let var = ((1.0f64 - 7.0 / 3.0).powi(2) + (2.0f64 - 7.0 / 3.0).powi(2) + (4.0f64 - 7.0 / 3.0).powi(2)) / 2.0;
        assert!((r.emp_sd - var.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn csv_has_one_line_per_parameter() {
        let fits = vec![row(1.0, 0.1, true, true), row(3.0, 0.1, true, true)];
        let t = summarise("s", 10, &["a".into()], &[2.0], 0.95, &fits);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
        let line = text.lines().nth(1).unwrap();
        assert!(line.starts_with("s,10,2,2,0,a,2.0,2.0,0.0,2.0,1.0,0.1,1.41421356237309"), "{line}");
    }
}
