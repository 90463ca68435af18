//! Machine CSVs (round-trip precision) and three-decimal text summaries.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use relsurv::data::fmt_f64;
use relsurv::inference::{wald_ci, FitResult};
use relsurv::netsurv::NetSurvivalCurve;
use relsurv::simulation::{Aim1Result, Aim2Report, PerformanceTable};

use crate::CliError;

pub fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    let mut f = create(path)?;
    f.write_all(text.as_bytes())
        .and_then(|_| f.flush())
        .map_err(|e| CliError::io(path, e))
}

pub fn ensure_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

pub fn write_estimates_csv<W: Write>(fit: &FitResult, level: f64, sink: W) -> Result<(), CliError> {
    let ci = wald_ci(fit, level).ok();
    let mut w = csv::Writer::from_writer(sink);
    w.write_record([
        "parameter",
        "estimate",
        "std_error",
        "lower",
        "upper",
        "transformed_parameter",
        "transformed_estimate",
        "transformed_std_error",
    ])?;
    for j in 0..fit.names.len() {
        let interval = ci.as_ref().map(|c| &c[j]);
        w.write_record([
            fit.names[j].clone(),
            fmt_f64(fit.estimates[j]),
            opt(fit.natural_std_errors.as_ref().map(|s| s[j])),
            opt(interval.map(|c| c.lower)),
            opt(interval.map(|c| c.upper)),
            fit.transformed_names[j].clone(),
            fmt_f64(fit.transformed_estimates[j]),
            opt(fit.std_errors.as_ref().map(|s| s[j])),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn fit_summary(fit: &FitResult, level: f64) -> String {
    let mut s = String::new();
    let c = &fit.convergence;
    let _ = writeln!(s, "model      {}", fit.spec.label());
    let _ = writeln!(s, "x          {}", list(&fit.spec.x));
    let _ = writeln!(s, "w          {}", list(&fit.spec.w));
    let _ = writeln!(s, "n          {} ({} events)", fit.n, fit.n_events);
    let _ = writeln!(s, "loglik     {:.3}", fit.loglik);
    let _ = writeln!(s, "aic        {:.3}", fit.aic);
    let _ = writeln!(
        s,
        "converged  {} ({} iterations, {} start{}, |grad| {:.1e})",
        if c.converged { "yes" } else { "no" },
        c.iterations,
        c.starts,
        if c.starts == 1 { "" } else { "s" },
        c.gradient_norm
    );
    let pct = level * 100.0;
    let _ = writeln!(s, "\n{:<14} {:>10} {:>10}   {pct:.0}% interval", "parameter", "estimate", "std.error");
    let ci = wald_ci(fit, level).ok();
    for j in 0..fit.names.len() {
        let se = fit
            .natural_std_errors
            .as_ref()
            .map_or("-".to_string(), |v| format!("{:.3}", v[j]));
        let interval = ci
            .as_ref()
            .map_or("-".to_string(), |c| format!("({:.3}, {:.3})", c[j].lower, c[j].upper));
        let _ = writeln!(s, "{:<14} {:>10.3} {:>10}   {interval}", fit.names[j], fit.estimates[j], se);
    }
    if !fit.se_valid() {
        let _ = writeln!(s, "\nstandard errors unavailable: observed information is not positive definite");
    }
    for m in &c.messages {
        let _ = writeln!(s, "note: {m}");
    }
    s
}

fn list(v: &[String]) -> String {
    if v.is_empty() {
        "-".into()
    } else {
        v.join(", ")
    }
}

/// Curve values at whole years (and the last grid point), three decimals.
pub fn curves_summary(curves: &[NetSurvivalCurve]) -> String {
    let mut s = String::new();
    for c in curves {
        let _ = writeln!(s, "{} [{}]", c.label, c.model);
        let last = *c.time.last().unwrap_or(&0.0);
        let mut points: Vec<f64> = (1..=last.floor() as usize).map(|y| y as f64).collect();
        if points.last() != Some(&last) && last > 0.0 {
            points.push(last);
        }
        for t in points {
            let k = c.time.iter().position(|g| (g - t).abs() < 1e-9);
            let Some(k) = k else { continue };
            let band = match (&c.lower, &c.upper) {
                (Some(l), Some(u)) => format!("  ({:.3}, {:.3})", l[k], u[k]),
                _ => String::new(),
            };
            let _ = writeln!(s, "  t = {t:<6.3} {:.3}{band}", c.estimate[k]);
        }
    }
    s
}

pub fn performance_summary(table: &PerformanceTable) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{}  n = {}  replicates = {}  analysed = {}  excluded = {}",
        table.scenario, table.n, table.replicates, table.analysed, table.excluded
    );
    let _ = writeln!(
        s,
        "{:<12} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}",
        "parameter", "true", "meanMLE", "bias", "median", "coverage", "meanSE", "empSD"
    );
    for r in &table.rows {
        let _ = writeln!(
            s,
            "{:<12} {:>8.3} {:>8.3} {:>8.3} {:>8.3} {:>8.3} {:>8.3} {:>8.3}",
            r.name, r.truth, r.mean, r.bias, r.median, r.coverage, r.mean_se, r.emp_sd
        );
    }
    s
}

pub fn write_replicates_csv<W: Write>(result: &Aim1Result, sink: W) -> Result<(), CliError> {
    let names: Vec<String> = result.table.rows.iter().map(|r| r.name.clone()).collect();
    let mut w = csv::Writer::from_writer(sink);
    let mut header: Vec<String> = ["n", "replicate", "converged", "se_valid", "n_events"]
        .map(String::from)
        .to_vec();
    header.extend(names.iter().cloned());
    header.extend(names.iter().map(|n| format!("se_{n}")));
    header.extend(["aic", "classical_aic", "error"].map(String::from));
    w.write_record(&header)?;
    for f in &result.fits {
        let mut row = vec![
            result.table.n.to_string(),
            f.replicate.to_string(),
            (f.converged as u8).to_string(),
            (f.se_valid as u8).to_string(),
            f.n_events.to_string(),
        ];
        for j in 0..names.len() {
            row.push(opt(f.estimates.get(j).copied()));
        }
        for j in 0..names.len() {
            row.push(opt(f.std_errors.as_ref().map(|s| s[j])));
        }
        row.push(if f.aic.is_finite() { fmt_f64(f.aic) } else { String::new() });
        row.push(opt(f.classical_aic));
        row.push(f.error.clone().unwrap_or_default());
        w.write_record(&row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn aim2_summary(report: &Aim2Report) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{}  n = {}  replicates = {}  analysed = {}  excluded = {}",
        report.scenario, report.n, report.replicates, report.analysed, report.excluded
    );
    let _ = writeln!(s, "{:<11} {:<10} {:<12} {:>14}", "analysis", "model", "group", "max |mean-true|");
    for c in &report.curves {
        let _ = writeln!(s, "{:<11} {:<10} {:<12} {:>14.3}", c.analysis, c.model, c.group, c.max_deviation);
    }
    s
}
