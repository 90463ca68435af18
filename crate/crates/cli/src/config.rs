//! Run settings from command-line flags and an optional TOML config file.
//!
//! Every setting may come from either source but not both: a key set in the
//! config file and again on the command line is rejected.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::Deserialize;

use relsurv::baseline::BaselineKind;
use relsurv::model::FrailtyFamily;

use crate::CliError;

#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// TOML file with any of the settings below (relative paths resolve
    /// against the file's directory).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Patient CSV: time,status,<covariates...>,age,year,<strata...>
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Life-table CSV (age,year,<strata...>,rate), or `synthetic`.
    #[arg(long)]
    pub lifetable: Option<String>,
    /// Baseline hazard: pgw or lognormal.
    #[arg(long)]
    pub baseline: Option<String>,
    /// Frailty law: none, gamma or ig.
    #[arg(long)]
    pub frailty: Option<String>,
    /// Hazard-level covariates, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub x: Option<Vec<String>>,
    /// Time-level covariates, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub w: Option<Vec<String>>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Time grid: `from:to:points` or a comma-separated list of times.
    #[arg(long)]
    pub grid: Option<String>,
    /// Monte-Carlo draws for confidence bands (0 disables bands).
    #[arg(long)]
    pub draws: Option<usize>,
    /// Confidence level.
    #[arg(long)]
    pub level: Option<f64>,
    /// Scenario name (sc1, sc1-nofrailty, aim2-s1, aim2-s2, lung) or TOML path.
    #[arg(long)]
    pub scenario: Option<String>,
    /// Run the full sample-size grid with 1000 replicates each.
    #[arg(long)]
    pub full: bool,
    /// Saved fit (fit.json or a directory holding one).
    #[arg(long)]
    pub fit: Option<PathBuf>,
    /// Fits to compare, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub fits: Option<Vec<PathBuf>>,
    /// Subgroup covariates for curves; a categorical stored as dummies
    /// `<name>2..<name>K` is given by its stem.
    #[arg(long, value_delimiter = ',')]
    pub by: Option<Vec<String>>,
    /// Cohort size override.
    #[arg(long)]
    pub n: Option<usize>,
    /// Replicate count override.
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Replicate stream for `simulate`.
    #[arg(long)]
    pub replicate: Option<u64>,
    /// Also fit the no-frailty model in `bench` and report AIC wins.
    #[arg(long)]
    pub classical: bool,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub restarts: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileSettings {
    data: Option<PathBuf>,
    lifetable: Option<String>,
    baseline: Option<String>,
    frailty: Option<String>,
    x: Option<Vec<String>>,
    w: Option<Vec<String>>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    grid: Option<String>,
    draws: Option<usize>,
    level: Option<f64>,
    scenario: Option<String>,
    full: Option<bool>,
    fit: Option<PathBuf>,
    fits: Option<Vec<PathBuf>>,
    by: Option<Vec<String>>,
    n: Option<usize>,
    replicates: Option<usize>,
    replicate: Option<u64>,
    classical: Option<bool>,
    max_iter: Option<usize>,
    restarts: Option<usize>,
}

/// Settings after merging flags and config file.
#[derive(Debug, Clone, Default)]
pub struct Settings {
    pub data: Option<PathBuf>,
    pub lifetable: Option<String>,
    pub baseline: Option<BaselineKind>,
    pub frailty: Option<FrailtyFamily>,
    pub x: Option<Vec<String>>,
    pub w: Option<Vec<String>>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub grid: Option<String>,
    pub draws: Option<usize>,
    pub level: Option<f64>,
    pub scenario: Option<String>,
    pub full: bool,
    pub fit: Option<PathBuf>,
    pub fits: Option<Vec<PathBuf>>,
    pub by: Option<Vec<String>>,
    pub n: Option<usize>,
    pub replicates: Option<usize>,
    pub replicate: Option<u64>,
    pub classical: bool,
    pub max_iter: Option<usize>,
    pub restarts: Option<usize>,
}

fn pick<T>(key: &str, flag: Option<T>, file: Option<T>) -> Result<Option<T>, CliError> {
    match (flag, file) {
        (Some(_), Some(_)) => Err(CliError::Usage(format!(
            "`{key}` is set both in the config file and on the command line"
        ))),
        (a, b) => Ok(a.or(b)),
    }
}

fn switch(key: &str, flag: bool, file: Option<bool>) -> Result<bool, CliError> {
    pick(key, flag.then_some(true), file).map(|v| v.unwrap_or(false))
}

/// Drops empty names so `--x ""` means no covariates.
fn names(v: Option<Vec<String>>) -> Option<Vec<String>> {
    v.map(|v| v.into_iter().map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect())
}

impl Settings {
    pub fn resolve(flags: Flags) -> Result<Settings, CliError> {
        let (file, base) = match &flags.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
                let parsed: FileSettings =
                    toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
                (parsed, path.parent().map(Path::to_path_buf).unwrap_or_default())
            }
            None => (FileSettings::default(), PathBuf::new()),
        };
        let rel = |p: PathBuf| if p.is_absolute() { p } else { base.join(p) };
        let rel_str = |s: String| {
            if s == "synthetic" || relsurv::simulation::Scenario::builtin(&s).is_some() {
                s
            } else {
                rel(PathBuf::from(&s)).to_string_lossy().into_owned()
            }
        };
        let baseline = pick("baseline", flags.baseline, file.baseline)?
            .map(|s| s.parse::<BaselineKind>().map_err(CliError::Usage))
            .transpose()?;
        let frailty = pick("frailty", flags.frailty, file.frailty)?
            .map(|s| s.parse::<FrailtyFamily>().map_err(CliError::Usage))
            .transpose()?;
        Ok(Settings {
            data: pick("data", flags.data, file.data.map(rel))?,
            lifetable: pick("lifetable", flags.lifetable, file.lifetable.map(rel_str))?,
            baseline,
            frailty,
            x: names(pick("x", flags.x, file.x)?),
            w: names(pick("w", flags.w, file.w)?),
            seed: pick("seed", flags.seed, file.seed)?,
            out: pick("out", flags.out, file.out.map(rel))?,
            grid: pick("grid", flags.grid, file.grid)?,
            draws: pick("draws", flags.draws, file.draws)?,
            level: pick("level", flags.level, file.level)?,
            scenario: pick("scenario", flags.scenario, file.scenario.map(rel_str))?,
            full: switch("full", flags.full, file.full)?,
            fit: pick("fit", flags.fit, file.fit.map(rel))?,
            fits: pick("fits", flags.fits, file.fits.map(|v| v.into_iter().map(rel).collect()))?,
            by: names(pick("by", flags.by, file.by)?),
            n: pick("n", flags.n, file.n)?,
            replicates: pick("replicates", flags.replicates, file.replicates)?,
            replicate: pick("replicate", flags.replicate, file.replicate)?,
            classical: switch("classical", flags.classical, file.classical)?,
            max_iter: pick("max_iter", flags.max_iter, file.max_iter)?,
            restarts: pick("restarts", flags.restarts, file.restarts)?,
        })
    }

    pub fn require<'a, T>(value: &'a Option<T>, key: &str) -> Result<&'a T, CliError> {
        value.as_ref().ok_or_else(|| CliError::Usage(format!("`--{key}` is required")))
    }

    pub fn level(&self) -> Result<f64, CliError> {
        let level = self.level.unwrap_or(0.95);
        if level > 0.0 && level < 1.0 {
            Ok(level)
        } else {
            Err(CliError::Usage(format!("--level must lie in (0, 1), got {level}")))
        }
    }
}

/// Parses `from:to:points` or a comma-separated list.
pub fn parse_grid(text: &str) -> Result<Vec<f64>, CliError> {
    let bad = || CliError::Usage(format!("invalid grid `{text}`"));
    let parts: Vec<&str> = text.split(':').collect();
    let grid = if parts.len() == 3 {
        let from: f64 = parts[0].trim().parse().map_err(|_| bad())?;
        let to: f64 = parts[1].trim().parse().map_err(|_| bad())?;
        let points: usize = parts[2].trim().parse().map_err(|_| bad())?;
        if points < 2 || !(to > from) {
            return Err(bad());
        }
        (0..points)
            .map(|k| from + (to - from) * k as f64 / (points - 1) as f64)
            .collect()
    } else {
        text.split(',')
            .map(|s| s.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<Vec<_>, _>>()?
    };
    if grid.is_empty() || grid.iter().any(|t| !(t.is_finite() && *t >= 0.0)) || grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(bad());
    }
    Ok(grid)
}
