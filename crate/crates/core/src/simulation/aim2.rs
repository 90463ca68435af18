//! Missing-covariate study: a covariate whose distribution differs between
//! the levels of a binary split is left out of the analysis, which is then
//! run pooled (split as a covariate) or stratified (one model per level).
//! Replicate-averaged subgroup curves are compared with the truth.
//!
//! Curves run to the design horizon even where a subgroup's follow-up
//! ends earlier, since the fitted model and the truth are both parametric.

use std::io::Write;

use rayon::prelude::*;

use crate::data::{fmt_f64, Dataset};
use crate::inference::{fit, FitOptions, FitResult, ModelSpec};
use crate::model::FrailtyFamily;
use crate::netsurv::{design_horizon_curves, uniform_grid, Group, NetSurvivalCurve};

use super::{SimError, Simulator, TRUTH_PROFILES};

#[derive(Debug, Clone)]
pub struct Aim2Options {
    pub n: Option<usize>,
    pub replicates: Option<usize>,
    pub fit: FitOptions,
    /// Defaults to 101 points on `[0, admin_censor]`.
    pub grid: Option<Vec<f64>>,
    pub truth_profiles: usize,
}

impl Default for Aim2Options {
    fn default() -> Self {
        Self {
            n: None,
            replicates: None,
            fit: FitOptions {
                compute_se: false,
                ..FitOptions::default()
            },
            grid: None,
            truth_profiles: TRUTH_PROFILES,
        }
    }
}

/// Replicate-averaged curve of one analysis for one group, with its truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Aim2Curve {
    /// `pooled` or `stratified`.
    pub analysis: String,
    /// `classical` or the frailty family label.
    pub model: String,
    /// `population` or `<split>=<level>`.
    pub group: String,
    pub mean: Vec<f64>,
    pub truth: Vec<f64>,
    pub max_deviation: f64,
}

#[derive(Debug, Clone)]
pub struct Aim2Report {
    pub scenario: String,
    pub n: usize,
    pub replicates: usize,
    pub analysed: usize,
    pub excluded: usize,
    pub grid: Vec<f64>,
    pub curves: Vec<Aim2Curve>,
}

impl Aim2Report {
    pub fn curve(&self, analysis: &str, model: &str, group: &str) -> Option<&Aim2Curve> {
        self.curves
            .iter()
            .find(|c| c.analysis == analysis && c.model == model && c.group == group)
    }

    /// Largest sup-deviation over the split-level subgroups of one analysis.
    pub fn subgroup_deviation(&self, analysis: &str, model: &str) -> f64 {
        self.curves
            .iter()
            .filter(|c| c.analysis == analysis && c.model == model && c.group != "population")
            .map(|c| c.max_deviation)
            .fold(0.0, f64::max)
    }

    /// Long-format curves: one row per analysis, model, group and time.
    pub fn write_curves_csv<W: Write>(&self, sink: W) -> Result<(), SimError> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["analysis", "model", "group", "time", "mean_fitted", "truth"])?;
        for c in &self.curves {
            for (k, t) in self.grid.iter().enumerate() {
                w.write_record([
                    c.analysis.clone(),
                    c.model.clone(),
                    c.group.clone(),
                    fmt_f64(*t),
                    fmt_f64(c.mean[k]),
                    fmt_f64(c.truth[k]),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_summary_csv<W: Write>(&self, sink: W) -> Result<(), SimError> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record([
            "scenario", "n", "replicates", "analysed", "excluded", "analysis", "model", "group", "max_deviation",
        ])?;
        for c in &self.curves {
            w.write_record([
                self.scenario.clone(),
                self.n.to_string(),
                self.replicates.to_string(),
                self.analysed.to_string(),
                self.excluded.to_string(),
                c.analysis.clone(),
                c.model.clone(),
                c.group.clone(),
                fmt_f64(c.max_deviation),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

type Key = (String, String, String);

fn model_label(family: FrailtyFamily) -> String {
    match family {
        FrailtyFamily::None => "classical".into(),
        other => ModelSpec::new(crate::baseline::BaselineKind::Pgw, other, &[], &[])
            .label()
            .trim_start_matches("pgw+")
            .to_string(),
    }
}

fn fit_ok(data: &Dataset, sim: &Simulator, spec: &ModelSpec, opts: &FitOptions) -> Option<FitResult> {
    fit(data, &sim.table, spec, opts).ok().filter(|f| f.converged())
}

/// All curves of one replicate, or `None` when any fit fails.
fn one_replicate(
    sim: &Simulator,
    n: usize,
    replicate: u64,
    grid: &[f64],
    opts: &FitOptions,
) -> Option<Vec<(Key, Vec<f64>)>> {
    let a = sim.scenario.aim2.as_ref()?;
    let data = sim.generate_with(n, replicate).ok()?;
    let split = data.column(&a.split)?;
    let levels = [0.0, 1.0];
    let label = |v: f64| format!("{}={}", a.split, v as i64);
    let opts = FitOptions {
        seed: opts.seed.wrapping_add(replicate),
        ..opts.clone()
    };
    let mut out = Vec::new();
    for family in [FrailtyFamily::None, a.frailty] {
        let model = model_label(family);
        let pooled = ModelSpec {
            baseline: a.baseline,
            frailty: family,
            x: a.pooled.clone(),
            w: a.pooled.clone(),
        };
        let f = fit_ok(&data, sim, &pooled, &opts)?;
        let mut groups = vec![Group::all(&data, "population")];
        groups.extend(levels.map(|v| Group::filter(&data, &label(v), |r| r.covariates[split] == v)));
        for c in design_horizon_curves(&data, &f, grid, &groups).ok()? {
            out.push((("pooled".into(), model.clone(), c.label), c.estimate));
        }

        let stratified = ModelSpec {
            baseline: a.baseline,
            frailty: family,
            x: a.stratified.clone(),
            w: a.stratified.clone(),
        };
        let mut population = vec![0.0; grid.len()];
        for v in levels {
            let sub = data.filter(|r| r.covariates[split] == v);
            let f = fit_ok(&sub, sim, &stratified, &opts)?;
            let c = design_horizon_curves(&sub, &f, grid, &[Group::all(&sub, &label(v))])
                .ok()?
                .remove(0);
            let share = sub.len() as f64 / data.len() as f64;
            for (p, e) in population.iter_mut().zip(&c.estimate) {
                *p += share * e;
            }
            out.push((("stratified".into(), model.clone(), label(v)), c.estimate));
        }
        out.push((("stratified".into(), model, "population".into()), population));
    }
    Some(out)
}

/// True population and split-level curves from a large covariate draw.
pub fn truth_curves(sim: &Simulator, grid: &[f64], profiles: usize) -> Result<Vec<NetSurvivalCurve>, SimError> {
    let a = sim
        .scenario
        .aim2
        .as_ref()
        .ok_or_else(|| SimError::Invalid("scenario has no [aim2] section".into()))?;
    let split = sim
        .columns
        .iter()
        .position(|c| *c == a.split)
        .ok_or_else(|| SimError::Invalid(format!("unknown split covariate `{}`", a.split)))?;
    let sample = sim.covariate_sample(profiles);
    let mut out = vec![sim.true_net_survival(&sample, grid, "population", |_| true)?];
    for v in [0.0, 1.0] {
        let label = format!("{}={}", a.split, v as i64);
        out.push(sim.true_net_survival(&sample, grid, &label, |c| c[split] == v)?);
    }
    Ok(out)
}

/// Runs the pooled and stratified analyses, classical and frailty, over the
/// replicates. A replicate is excluded when any of its fits fails to
/// converge.
pub fn run_aim2(sim: &Simulator, opts: &Aim2Options) -> Result<Aim2Report, SimError> {
    if sim.scenario.aim2.is_none() {
        return Err(SimError::Invalid("scenario has no [aim2] section".into()));
    }
    let n = opts.n.unwrap_or(sim.scenario.n);
    let m = opts.replicates.unwrap_or(sim.scenario.replicates);
    if m == 0 {
        return Err(SimError::Invalid("at least one replicate is required".into()));
    }
    let grid = opts
        .grid
        .clone()
        .unwrap_or_else(|| uniform_grid(sim.scenario.admin_censor, 101));
    let truth = truth_curves(sim, &grid, opts.truth_profiles)?;

    let results: Vec<Option<Vec<(Key, Vec<f64>)>>> = (0..m as u64)
        .into_par_iter()
        .map(|r| one_replicate(sim, n, r, &grid, &opts.fit))
        .collect();
    let ok: Vec<&Vec<(Key, Vec<f64>)>> = results.iter().flatten().collect();

    let mut curves = Vec::new();
    if let Some(first) = ok.first() {
        for (j, (key, _)) in first.iter().enumerate() {
            let mut mean = vec![0.0; grid.len()];
            for rep in &ok {
                for (s, v) in mean.iter_mut().zip(&rep[j].1) {
                    *s += v;
                }
            }
            mean.iter_mut().for_each(|s| *s /= ok.len() as f64);
            let t = truth
                .iter()
                .find(|c| c.label == key.2)
                .expect("every group has a truth curve");
            let max_deviation = mean
                .iter()
                .zip(&t.estimate)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            curves.push(Aim2Curve {
                analysis: key.0.clone(),
                model: key.1.clone(),
                group: key.2.clone(),
                mean,
                truth: t.estimate.clone(),
                max_deviation,
            });
        }
    }
    Ok(Aim2Report {
        scenario: sim.scenario.name.clone(),
        n,
        replicates: m,
        analysed: ok.len(),
        excluded: m - ok.len(),
        grid,
        curves,
    })
}
