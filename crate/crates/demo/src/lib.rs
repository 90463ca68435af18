//! WebAssembly bindings behind `www/index.html`: baseline hazard shapes,
//! frailty-marginal net survival, and a simulate-then-fit round trip.

use std::fmt::Write as _;
use std::path::Path;

use wasm_bindgen::prelude::*;

use relsurv::baseline::PgwParams;
use relsurv::inference::{fit, wald_ci, FitOptions};
use relsurv::model::{FrailtyFamily, FrailtySpec};
use relsurv::simulation::{aim1::truth_vector, Scenario, Simulator};

fn grid(horizon: f64, points: usize) -> Result<Vec<f64>, String> {
    if !(horizon > 0.0 && horizon.is_finite()) || points < 2 {
        return Err("horizon must be positive and points at least 2".into());
    }
    Ok((0..points).map(|k| horizon * k as f64 / (points - 1) as f64).collect())
}

fn frailty(family: &str, variance: f64) -> Result<FrailtySpec, String> {
    let family: FrailtyFamily = family.parse()?;
    let spec = FrailtySpec { family, variance };
    spec.validate().map_err(|e| e.to_string())?;
    Ok(spec)
}

/// PGW hazard and survival on `points` equally spaced times in
/// `[0, horizon]`: the first half of the result is the hazard, the second
/// the survival.
#[wasm_bindgen]
pub fn pgw_curves(sigma: f64, nu: f64, gamma: f64, horizon: f64, points: usize) -> Result<Vec<f64>, String> {
    let p = PgwParams::new(sigma, nu, gamma).map_err(|e| e.to_string())?;
    let times = grid(horizon, points)?;
    // the hazard at 0 is 0 or infinite depending on the shape; start just after
    let eps = horizon * 1e-4;
    let mut out: Vec<f64> = times.iter().map(|&t| p.hazard(t.max(eps))).collect();
    out.extend(times.iter().map(|&t| (-p.cum_hazard(t)).exp()));
    Ok(out)
}

/// Population net survival `L(H0(t))` of a PGW baseline under a frailty law
/// (`none`, `gamma` or `ig`), next to the conditional curve `exp(-H0(t))`.
#[wasm_bindgen]
pub fn frailty_net_survival(
    family: &str,
    variance: f64,
    sigma: f64,
    nu: f64,
    gamma: f64,
    horizon: f64,
    points: usize,
) -> Result<Vec<f64>, String> {
    let p = PgwParams::new(sigma, nu, gamma).map_err(|e| e.to_string())?;
    let f = frailty(family, variance)?;
    let times = grid(horizon, points)?;
    let mut out = Vec::with_capacity(2 * points);
    for &t in &times {
        out.push(f.laplace(p.cum_hazard(t)).map_err(|e| e.to_string())?);
    }
    out.extend(times.iter().map(|&t| (-p.cum_hazard(t)).exp()));
    Ok(out)
}

/// Simulates one cohort of the four-covariate finite-sample scenario and
/// fits it; returns a plain-text table of truth, estimate and 95% interval.
#[wasm_bindgen]
pub fn simulate_and_fit(n: usize, seed: u64, family: &str) -> Result<String, String> {
    if !(100..=20_000).contains(&n) {
        return Err("n must lie between 100 and 20000".into());
    }
    let mut scenario = Scenario::builtin("sc1").ok_or("built-in scenario missing")?;
    scenario.n = n;
    scenario.seed = seed;
    let sim = Simulator::from_scenario(scenario, Path::new("")).map_err(|e| e.to_string())?;
    let data = sim.generate_cohort(0).map_err(|e| e.to_string())?;

    let mut spec = sim.scenario.analysis_spec();
    spec.frailty = family.parse()?;
    let res = fit(&data, &sim.table, &spec, &FitOptions { seed, ..FitOptions::default() })
        .map_err(|e| e.to_string())?;
    // the truth always carries a frailty variance; align it with the fitted layout
    let mut truth_spec = spec.clone();
    truth_spec.frailty = FrailtyFamily::Gamma;
    let mut truth = truth_vector(&sim, &truth_spec).map_err(|e| e.to_string())?;
    if spec.frailty == FrailtyFamily::None {
        truth.pop();
    }
    let ci = wald_ci(&res, 0.95).ok();

    let mut s = String::new();
    let censored = data.len() - data.n_events();
    let _ = writeln!(
        s,
        "n = {}, deaths = {}, censored = {:.1}%\nmodel {}: loglik {:.3}, AIC {:.3}, {}\n",
        data.len(),
        data.n_events(),
        100.0 * censored as f64 / data.len() as f64,
        spec.label(),
        res.loglik,
        res.aic,
        if res.converged() { "converged" } else { "NOT converged" }
    );
    let _ = writeln!(s, "{:<12} {:>8} {:>9}   95% interval", "parameter", "true", "estimate");
    for (j, name) in res.names.iter().enumerate() {
        let interval = ci
            .as_ref()
            .map_or("-".to_string(), |c| format!("({:.3}, {:.3})", c[j].lower, c[j].upper));
        let _ = writeln!(s, "{name:<12} {:>8.3} {:>9.3}   {interval}", truth[j], res.estimates[j]);
    }
    Ok(s)
}
