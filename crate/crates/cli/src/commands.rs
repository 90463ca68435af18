use std::fs::File;
use std::path::{Path, PathBuf};
use std::time::Instant;

use relsurv::baseline::BaselineKind;
use relsurv::data::{fmt_f64, Dataset};
use relsurv::inference::{self, aic_compare, FitOptions, FitResult, ModelSpec};
use relsurv::lifetable::LifeTable;
use relsurv::model::FrailtyFamily;
use relsurv::netsurv::{self, net_survival_bands, net_survival_curves, write_curves_csv, Group};
use relsurv::simulation::{
    run_aim1, run_aim2, synthetic_life_table, Aim1Options, Aim2Options, Scenario, Simulator,
};

use crate::config::{parse_grid, Settings};
use crate::output::{self, create, ensure_dir, write_text};
use crate::CliError;

const FULL_SIZES: [usize; 4] = [500, 1000, 2000, 5000];
const FULL_REPLICATES: usize = 1000;

fn req<'a, T>(v: &'a Option<T>, key: &str) -> Result<&'a T, CliError> {
    Settings::require(v, key)
}

pub fn load_data(s: &Settings) -> Result<Dataset, CliError> {
    let path = req(&s.data, "data")?;
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    Dataset::load_csv(file).map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))
}

pub fn load_table(s: &Settings) -> Result<LifeTable, CliError> {
    let spec = req(&s.lifetable, "lifetable")?;
    if spec == "synthetic" {
        return Ok(synthetic_life_table());
    }
    let path = Path::new(spec);
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    LifeTable::load_csv(file).map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))
}

fn model_spec(s: &Settings) -> ModelSpec {
    ModelSpec {
        baseline: s.baseline.unwrap_or(BaselineKind::Pgw),
        frailty: s.frailty.unwrap_or(FrailtyFamily::None),
        x: s.x.clone().unwrap_or_default(),
        w: s.w.clone().unwrap_or_default(),
    }
}

fn fit_options(s: &Settings) -> Result<FitOptions, CliError> {
    let mut opts = FitOptions {
        seed: *req(&s.seed, "seed")?,
        ..FitOptions::default()
    };
    if let Some(m) = s.max_iter {
        opts.bfgs.max_iter = m;
    }
    if let Some(r) = s.restarts {
        opts.restarts = r;
    }
    Ok(opts)
}

fn fit_model(s: &Settings, data: &Dataset, table: &LifeTable) -> Result<FitResult, CliError> {
    let spec = model_spec(s);
    spec.mapping(&data.covariate_names)
        .map_err(|e| CliError::Schema(e.to_string()))?;
    data.check_keys(table)?;
    Ok(inference::fit(data, table, &spec, &fit_options(s)?)?)
}

pub fn fit(s: &Settings) -> Result<(), CliError> {
    let out = req(&s.out, "out")?;
    let level = s.level()?;
    let data = load_data(s)?;
    let table = load_table(s)?;
    let res = fit_model(s, &data, &table)?;

    ensure_dir(out)?;
    let json = serde_json::to_string_pretty(&res).map_err(|e| CliError::Failure(e.to_string()))?;
    write_text(&out.join("fit.json"), &(json + "\n"))?;
    output::write_estimates_csv(&res, level, create(&out.join("estimates.csv"))?)?;
    let summary = output::fit_summary(&res, level);
    write_text(&out.join("summary.txt"), &summary)?;
    print!("{summary}");
    if !res.converged() {
        return Err(CliError::NotConverged(format!(
            "optimiser did not converge ({} iterations); results written to {}",
            res.convergence.iterations,
            out.display()
        )));
    }
    Ok(())
}

pub fn load_fit(path: &Path) -> Result<FitResult, CliError> {
    let file: PathBuf = if path.is_dir() { path.join("fit.json") } else { path.to_path_buf() };
    let text = std::fs::read_to_string(&file).map_err(|e| CliError::io(&file, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Schema(format!("{}: {e}", file.display())))
}

fn fit_label(path: &Path) -> String {
    let named = if path.is_dir() || path.file_name().is_some_and(|f| f == "fit.json") {
        if path.is_dir() {
            path.file_name()
        } else {
            path.parent().and_then(Path::file_name)
        }
    } else {
        path.file_stem()
    };
    named.map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned())
}

fn level_label(v: f64) -> String {
    if v.fract() == 0.0 {
        format!("{}", v as i64)
    } else {
        fmt_f64(v)
    }
}

/// Groups for one `--by` entry: the levels of a covariate column, or of a
/// categorical stored as dummies `<stem>2..<stem>K` (level 1 = all zero).
pub fn groups_for(data: &Dataset, by: &str) -> Result<Vec<Group>, CliError> {
    if let Some(j) = data.column(by) {
        let mut levels: Vec<f64> = data.records.iter().map(|r| r.covariates[j]).collect();
        levels.sort_by(f64::total_cmp);
        levels.dedup();
        if levels.len() > 20 {
            return Err(CliError::Usage(format!("`{by}` has {} distinct values; not a grouping", levels.len())));
        }
        return Ok(levels
            .into_iter()
            .map(|v| Group::filter(data, &format!("{by}={}", level_label(v)), |r| r.covariates[j] == v))
            .collect());
    }
    let mut dummies: Vec<(u32, usize)> = data
        .covariate_names
        .iter()
        .enumerate()
        .filter_map(|(j, name)| {
            let k = name.strip_prefix(by)?.parse::<u32>().ok()?;
            Some((k, j))
        })
        .collect();
    if dummies.is_empty() {
        return Err(CliError::Schema(format!("grouping column `{by}` not found in the dataset")));
    }
    dummies.sort_unstable();
    let cols: Vec<usize> = dummies.iter().map(|d| d.1).collect();
    let mut groups = vec![Group::filter(data, &format!("{by}=1"), |r| {
        cols.iter().all(|&j| r.covariates[j] == 0.0)
    })];
    for (k, j) in dummies {
        groups.push(Group::filter(data, &format!("{by}={k}"), |r| r.covariates[j] == 1.0));
    }
    Ok(groups)
}

fn file_label(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect()
}

pub fn netsurv(s: &Settings) -> Result<(), CliError> {
    let out = req(&s.out, "out")?;
    let level = s.level()?;
    let draws = s.draws.unwrap_or(netsurv::DEFAULT_DRAWS);
    let data = load_data(s)?;
    let table = load_table(s)?;
    let fit = match &s.fit {
        Some(path) => {
            if s.baseline.is_some() || s.frailty.is_some() || s.x.is_some() || s.w.is_some() {
                return Err(CliError::Usage(
                    "give either --fit or a model (--baseline/--frailty/--x/--w), not both".into(),
                ));
            }
            let fit = load_fit(path)?;
            if fit.data_fingerprint != data.fingerprint() || fit.n != data.len() {
                return Err(CliError::Schema(format!(
                    "{} was fitted to a different dataset",
                    path.display()
                )));
            }
            fit
        }
        None => fit_model(s, &data, &table)?,
    };
    let grid = match &s.grid {
        Some(g) => parse_grid(g)?,
        None => {
            let follow_up = data.records.iter().map(|r| r.time).fold(0.0, f64::max);
            netsurv::uniform_grid(follow_up.min(netsurv::DEFAULT_HORIZON), netsurv::DEFAULT_GRID_POINTS)
        }
    };
    let mut groups = vec![Group::all(&data, "population")];
    for by in s.by.iter().flatten() {
        groups.extend(groups_for(&data, by)?);
    }
    let curves = if draws == 0 {
        net_survival_curves(&data, &fit, &grid, &groups)?
    } else {
        let seed = *req(&s.seed, "seed")?;
        net_survival_bands(&data, &fit, &grid, &groups, level, draws, seed)?
    };

    ensure_dir(out)?;
    write_curves_csv(&curves, create(&out.join("curves.csv"))?)?;
    for c in &curves {
        let path = out.join(format!("curve_{}.csv", file_label(&c.label)));
        write_curves_csv(std::slice::from_ref(c), create(&path)?)?;
    }
    let summary = output::curves_summary(&curves);
    write_text(&out.join("summary.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}

/// Built-in scenario by name, or a TOML file (whose directory anchors a
/// relative life-table path).
pub fn load_scenario(spec: &str) -> Result<(Scenario, PathBuf), CliError> {
    if let Some(s) = Scenario::builtin(spec) {
        return Ok((s, PathBuf::new()));
    }
    let path = Path::new(spec);
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let scenario = Scenario::from_toml(&text).map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))?;
    Ok((scenario, path.parent().map(Path::to_path_buf).unwrap_or_default()))
}

fn simulator(s: &Settings) -> Result<Simulator, CliError> {
    let (mut scenario, base) = load_scenario(req(&s.scenario, "scenario")?)?;
    if let Some(seed) = s.seed {
        scenario.seed = seed;
    }
    if let Some(n) = s.n {
        scenario.n = n;
    }
    if let Some(m) = s.replicates {
        scenario.replicates = m;
    }
    scenario.validate()?;
    Ok(Simulator::from_scenario(scenario, &base)?)
}

pub fn simulate(s: &Settings) -> Result<(), CliError> {
    let out = req(&s.out, "out")?;
    let sim = simulator(s)?;
    let replicate = s.replicate.unwrap_or(0);
    let data = sim.generate_cohort(replicate)?;

    ensure_dir(out)?;
    let path = out.join("data.csv");
    data.write_csv(create(&path)?)?;
    let path = out.join("lifetable.csv");
    sim.table.write_csv(create(&path)?)?;
    write_text(&out.join("scenario.toml"), &sim.scenario.to_toml())?;
    let censored = data.len() - data.n_events();
    println!(
        "{}: n = {}, events = {}, censored = {} ({:.3}), drop-out rate = {:.3}/yr, seed = {}, replicate = {}",
        sim.scenario.name,
        data.len(),
        data.n_events(),
        censored,
        censored as f64 / data.len() as f64,
        sim.dropout_rate,
        sim.scenario.seed,
        replicate
    );
    Ok(())
}

pub fn bench(s: &Settings) -> Result<(), CliError> {
    let out = req(&s.out, "out")?;
    let level = s.level()?;
    let sim = simulator(s)?;
    ensure_dir(out)?;

    if sim.scenario.aim2.is_some() {
        if s.full {
            return Err(CliError::Usage("--full applies to finite-sample scenarios only".into()));
        }
        let grid = s.grid.as_deref().map(parse_grid).transpose()?;
        let report = run_aim2(
            &sim,
            &Aim2Options {
                grid,
                ..Aim2Options::default()
            },
        )?;
        report.write_curves_csv(create(&out.join("aim2_curves.csv"))?)?;
        report.write_summary_csv(create(&out.join("aim2_summary.csv"))?)?;
        let summary = output::aim2_summary(&report);
        write_text(&out.join("summary.txt"), &summary)?;
        print!("{summary}");
        return Ok(());
    }

    let base = Aim1Options {
        level,
        compare_classical: s.classical,
        fit: fit_options_for_bench(s),
        ..Aim1Options::default()
    };
    let sizes: Vec<usize> = if s.full {
        if s.n.is_some() || s.replicates.is_some() {
            return Err(CliError::Usage("--full fixes n and replicates; drop --n/--replicates".into()));
        }
        warn_full_runtime(&sim, &base)?;
        FULL_SIZES.to_vec()
    } else {
        vec![sim.scenario.n]
    };
    let replicates = if s.full { FULL_REPLICATES } else { sim.scenario.replicates };

    let mut perf = csv_concat::Concat::default();
    let mut reps = csv_concat::Concat::default();
    let mut summary = String::new();
    for n in sizes {
        let res = run_aim1(
            &sim,
            &Aim1Options {
                n: Some(n),
                replicates: Some(replicates),
                ..base.clone()
            },
        )?;
        let mut buf = Vec::new();
        res.table.write_csv(&mut buf).map_err(CliError::from)?;
        perf.push(&buf);
        let mut buf = Vec::new();
        output::write_replicates_csv(&res, &mut buf)?;
        reps.push(&buf);
        summary += &output::performance_summary(&res.table);
        if let Some((share, used)) = res.frailty_aic_wins() {
            summary += &format!("frailty model preferred by AIC in {share:.3} of {used} replicates\n");
        }
        summary += "\n";
    }
    write_text(&out.join("performance.csv"), &perf.text)?;
    write_text(&out.join("replicates.csv"), &reps.text)?;
    write_text(&out.join("summary.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}

fn fit_options_for_bench(s: &Settings) -> FitOptions {
    let mut opts = FitOptions::default();
    if let Some(m) = s.max_iter {
        opts.bfgs.max_iter = m;
    }
    if let Some(r) = s.restarts {
        opts.restarts = r;
    }
    opts
}

/// Times one replicate at the smallest and largest size and extrapolates.
fn warn_full_runtime(sim: &Simulator, base: &Aim1Options) -> Result<(), CliError> {
    let time_one = |n: usize| -> Result<f64, CliError> {
        let start = Instant::now();
        run_aim1(
            sim,
            &Aim1Options {
                n: Some(n),
                replicates: Some(1),
                ..base.clone()
            },
        )?;
        Ok(start.elapsed().as_secs_f64())
    };
    let (lo, hi) = (FULL_SIZES[0], FULL_SIZES[FULL_SIZES.len() - 1]);
    let (t_lo, t_hi) = (time_one(lo)?, time_one(hi)?);
    let per_rep: f64 = FULL_SIZES
        .iter()
        .map(|&n| t_lo + (t_hi - t_lo) * (n - lo) as f64 / (hi - lo) as f64)
        .sum();
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    let minutes = per_rep * FULL_REPLICATES as f64 / threads as f64 / 60.0;
    eprintln!(
        "warning: --full runs {} replicates at each of n = {:?}; estimated runtime about {:.0} min on {} thread{}",
        FULL_REPLICATES,
        FULL_SIZES,
        minutes,
        threads,
        if threads == 1 { "" } else { "s" }
    );
    Ok(())
}

mod csv_concat {
    /// Concatenates CSV documents sharing one header.
    #[derive(Default)]
    pub struct Concat {
        pub text: String,
    }

    impl Concat {
        pub fn push(&mut self, doc: &[u8]) {
            let doc = String::from_utf8_lossy(doc);
            if self.text.is_empty() {
                self.text.push_str(&doc);
            } else {
                self.text.extend(doc.split_inclusive('\n').skip(1));
            }
        }
    }
}

pub fn compare(s: &Settings) -> Result<(), CliError> {
    let paths = req(&s.fits, "fits")?;
    let fits = paths.iter().map(|p| load_fit(p)).collect::<Result<Vec<_>, _>>()?;
    let refs: Vec<&FitResult> = fits.iter().collect();
    let order = aic_compare(&refs)?;
    let best = fits[order[0]].aic;

    let mut text = format!(
        "{:<4} {:<10} {:<16} {:>3} {:>12} {:>12} {:>9}\n",
        "rank", "fit", "model", "k", "loglik", "aic", "delta"
    );
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(["rank", "fit", "model", "n_params", "loglik", "aic", "delta_aic", "converged"])?;
        for (rank, &i) in order.iter().enumerate() {
            let f = &fits[i];
            let name = fit_label(&paths[i]);
            w.write_record([
                (rank + 1).to_string(),
                name.clone(),
                f.spec.label(),
                f.n_params.to_string(),
                fmt_f64(f.loglik),
                fmt_f64(f.aic),
                fmt_f64(f.aic - best),
                (f.converged() as u8).to_string(),
            ])?;
            text += &format!(
                "{:<4} {:<10} {:<16} {:>3} {:>12.3} {:>12.3} {:>9.3}\n",
                rank + 1,
                name,
                f.spec.label(),
                f.n_params,
                f.loglik,
                f.aic,
                f.aic - best
            );
        }
        w.flush().map_err(csv::Error::from)?;
    }
    if let Some(out) = &s.out {
        ensure_dir(out)?;
        write_text(&out.join("aic.csv"), &String::from_utf8_lossy(&buf))?;
        write_text(&out.join("aic.txt"), &text)?;
    }
    print!("{text}");
    Ok(())
}
