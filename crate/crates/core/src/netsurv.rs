//! Marginal net survival curves for a fitted model.
//!
//! A population (or subgroup) curve is the average of the individual net
//! survival curves `L(H_E(t; x_i, w_i))` over the records it covers; without
//! frailty `L(s) = exp(-s)`. Monte Carlo bands resample the transformed
//! parameter vector from its asymptotic normal law.

use std::io::Write;

use nalgebra::{Cholesky, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{fmt_f64, Dataset, PatientRecord};
use crate::inference::{normal_quantile, FitResult, InferenceError};
use crate::model::{FrailtySpec, GhParams, ModelError};

pub const DEFAULT_DRAWS: usize = 1000;
pub const DEFAULT_GRID_POINTS: usize = 101;
pub const DEFAULT_HORIZON: f64 = 5.0;

#[derive(Debug, Error)]
pub enum NetSurvError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("subgroup `{0}` selects no records")]
    EmptySubgroup(String),
    #[error("time grid must be finite, non-negative and nondecreasing")]
    InvalidGrid,
    #[error("time grid reaches {grid} beyond the maximum follow-up {follow_up}")]
    GridBeyondFollowUp { grid: f64, follow_up: f64 },
    #[error("fit has no valid covariance; bands unavailable")]
    SeInvalid,
    #[error("at least 100 draws are required, got {0}")]
    TooFewDraws(usize),
    #[error("only {accepted} finite draws out of {attempts} attempts")]
    TooManyRejections { accepted: usize, attempts: usize },
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetSurvivalCurve {
    pub time: Vec<f64>,
    pub estimate: Vec<f64>,
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
    pub label: String,
    pub model: String,
}

impl NetSurvivalCurve {
    /// Value at grid point closest to `t`.
    pub fn at(&self, t: f64) -> f64 {
        let i = self
            .time
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))
            .map_or(0, |(i, _)| i);
        self.estimate[i]
    }

    /// Largest absolute pointwise difference in estimates on a shared grid.
    pub fn sup_distance(&self, other: &NetSurvivalCurve) -> f64 {
        self.estimate
            .iter()
            .zip(&other.estimate)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// `points` equally spaced times on `[0, horizon]`.
pub fn uniform_grid(horizon: f64, points: usize) -> Vec<f64> {
    if points <= 1 {
        return vec![0.0];
    }
    let step = horizon / (points - 1) as f64;
    (0..points).map(|i| i as f64 * step).collect()
}

pub fn default_grid() -> Vec<f64> {
    uniform_grid(DEFAULT_HORIZON, DEFAULT_GRID_POINTS)
}

fn check_grid(grid: &[f64]) -> Result<(), NetSurvError> {
    let ok = grid.iter().all(|t| t.is_finite() && *t >= 0.0) && grid.windows(2).all(|w| w[0] <= w[1]);
    if ok && !grid.is_empty() {
        Ok(())
    } else {
        Err(NetSurvError::InvalidGrid)
    }
}

fn check_follow_up(data: &Dataset, grid: &[f64]) -> Result<(), NetSurvError> {
    if data.is_empty() || grid.is_empty() {
        return Ok(());
    }
    let follow_up = data.records.iter().map(|r| r.time).fold(0.0, f64::max);
    let last = *grid.last().expect("grid checked non-empty");
    if last > follow_up * (1.0 + 1e-12) {
        return Err(NetSurvError::GridBeyondFollowUp { grid: last, follow_up });
    }
    Ok(())
}

/// Predictor pairs `(w'alpha, x'beta)` are recomputed per parameter draw, so
/// only the covariate rows are cached.
struct Rows {
    x: Vec<Vec<f64>>,
    w: Vec<Vec<f64>>,
}

impl Rows {
    fn new(data: &Dataset, fit: &FitResult, members: &[usize]) -> Result<Self, NetSurvError> {
        let mapping = fit.spec.mapping(&data.covariate_names)?;
        Ok(Rows {
            x: members.iter().map(|&i| mapping.gather_x(&data.records[i].covariates)).collect(),
            w: members.iter().map(|&i| mapping.gather_w(&data.records[i].covariates)).collect(),
        })
    }
}

/// Average of individual curves over `rows` for each group in `groups`
/// (indices into `rows`).
fn group_curves(rows: &Rows, groups: &[Vec<usize>], g: &GhParams, f: &FrailtySpec, grid: &[f64]) -> Vec<Vec<f64>> {
    let n = rows.x.len();
    let mut individual = vec![0.0; n * grid.len()];
    for i in 0..n {
        let (wa, xb) = g.predictors(&rows.x[i], &rows.w[i]);
        for (k, &t) in grid.iter().enumerate() {
            let h = g.cum_hazard_with(t, wa, xb);
            individual[i * grid.len() + k] = f.log_laplace_unchecked(h).exp();
        }
    }
    groups
        .iter()
        .map(|members| {
            let mut curve = vec![0.0; grid.len()];
            for &i in members {
                for (k, c) in curve.iter_mut().enumerate() {
                    *c += individual[i * grid.len() + k];
                }
            }
            let m = members.len() as f64;
            let mut running = 1.0f64;
            curve
                .iter_mut()
                .map(|c| {
                    // guards against last-bit rounding in the individual curves
                    running = running.min(*c / m);
                    running
                })
                .collect()
        })
        .collect()
}

/// A named subset of records.
pub struct Group {
    pub label: String,
    pub members: Vec<usize>,
}

impl Group {
    pub fn all(data: &Dataset, label: &str) -> Self {
        Group {
            label: label.to_string(),
            members: (0..data.len()).collect(),
        }
    }

    pub fn filter<F: Fn(&PatientRecord) -> bool>(data: &Dataset, label: &str, keep: F) -> Self {
        Group {
            label: label.to_string(),
            members: data
                .records
                .iter()
                .enumerate()
                .filter(|(_, r)| keep(r))
                .map(|(i, _)| i)
                .collect(),
        }
    }
}

/// Plug-in curves for several groups at once.
pub fn net_survival_curves(
    data: &Dataset,
    fit: &FitResult,
    grid: &[f64],
    groups: &[Group],
) -> Result<Vec<NetSurvivalCurve>, NetSurvError> {
    check_follow_up(data, grid)?;
    design_horizon_curves(data, fit, grid, groups)
}

/// [`net_survival_curves`] without the follow-up guard, for simulation
/// studies whose horizon is fixed by design rather than by the data.
pub(crate) fn design_horizon_curves(
    data: &Dataset,
    fit: &FitResult,
    grid: &[f64],
    groups: &[Group],
) -> Result<Vec<NetSurvivalCurve>, NetSurvError> {
    let (rows, local) = prepare(data, fit, grid, groups)?;
    let curves = group_curves(&rows, &local, &fit.params, &fit.frailty, grid);
    Ok(groups
        .iter()
        .zip(curves)
        .map(|(grp, estimate)| NetSurvivalCurve {
            time: grid.to_vec(),
            estimate,
            lower: None,
            upper: None,
            label: grp.label.clone(),
            model: fit.spec.label(),
        })
        .collect())
}

fn prepare(data: &Dataset, fit: &FitResult, grid: &[f64], groups: &[Group]) -> Result<(Rows, Vec<Vec<usize>>), NetSurvError> {
    if data.is_empty() {
        return Err(NetSurvError::EmptyDataset);
    }
    check_grid(grid)?;
    if let Some(g) = groups.iter().find(|g| g.members.is_empty()) {
        return Err(NetSurvError::EmptySubgroup(g.label.clone()));
    }
    // rows for the union of members, groups re-indexed into it
    let mut used: Vec<usize> = groups.iter().flat_map(|g| g.members.iter().copied()).collect();
    used.sort_unstable();
    used.dedup();
    let mut position = vec![usize::MAX; data.len()];
    for (k, &i) in used.iter().enumerate() {
        position[i] = k;
    }
    let local = groups
        .iter()
        .map(|g| g.members.iter().map(|&i| position[i]).collect())
        .collect();
    Ok((Rows::new(data, fit, &used)?, local))
}

pub fn population_net_survival(data: &Dataset, fit: &FitResult, grid: &[f64]) -> Result<NetSurvivalCurve, NetSurvError> {
    let mut v = net_survival_curves(data, fit, grid, &[Group::all(data, "population")])?;
    Ok(v.remove(0))
}

pub fn subgroup_net_survival<F: Fn(&PatientRecord) -> bool>(
    data: &Dataset,
    fit: &FitResult,
    grid: &[f64],
    label: &str,
    keep: F,
) -> Result<NetSurvivalCurve, NetSurvError> {
    let mut v = net_survival_curves(data, fit, grid, &[Group::filter(data, label, keep)])?;
    Ok(v.remove(0))
}

/// Net survival of a single covariate profile under `(g, f)`.
pub fn profile_net_survival(g: &GhParams, f: &FrailtySpec, x: &[f64], w: &[f64], grid: &[f64]) -> Result<Vec<f64>, NetSurvError> {
    check_grid(grid)?;
    f.validate()?;
    if x.len() != g.beta.len() || w.len() != g.alpha.len() {
        return Err(ModelError::DimensionMismatch {
            what: "covariate profile",
            expected: g.beta.len() + g.alpha.len(),
            actual: x.len() + w.len(),
        }
        .into());
    }
    let rows = Rows {
        x: vec![x.to_vec()],
        w: vec![w.to_vec()],
    };
    Ok(group_curves(&rows, &[vec![0]], g, f, grid).remove(0))
}

/// Plug-in curves with pointwise Monte Carlo bands for each group.
///
/// `draws` parameter vectors are sampled from `N(psi_hat, J^{-1})`; draws
/// that fail to map to valid parameters or give non-finite curves are
/// replaced, up to `10 * draws` attempts.
pub fn net_survival_bands(
    data: &Dataset,
    fit: &FitResult,
    grid: &[f64],
    groups: &[Group],
    level: f64,
    draws: usize,
    seed: u64,
) -> Result<Vec<NetSurvivalCurve>, NetSurvError> {
    normal_quantile(level)?;
    if draws < 100 {
        return Err(NetSurvError::TooFewDraws(draws));
    }
    let cov = fit.covariance_matrix().ok_or(NetSurvError::SeInvalid)?;
    let chol = Cholesky::new(cov).ok_or(NetSurvError::SeInvalid)?;
    let l = chol.l();
    check_follow_up(data, grid)?;
    let (rows, local) = prepare(data, fit, grid, groups)?;
    let layout = fit.layout();
    let mean = DVector::from_column_slice(&fit.transformed_estimates);
    let dim = mean.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut samples: Vec<Vec<Vec<f64>>> = Vec::with_capacity(draws);
    let mut attempts = 0;
    let cap = 10 * draws;
    while samples.len() < draws && attempts < cap {
        // draw a batch sequentially for determinism, evaluate in parallel
        let need = (draws - samples.len()).min(cap - attempts);
        let batch: Vec<DVector<f64>> = (0..need)
            .map(|_| {
                let e = DVector::from_fn(dim, |_, _| StandardNormal.sample(&mut rng));
                &mean + &l * e
            })
            .collect();
        attempts += need;
        let curves: Vec<Option<Vec<Vec<f64>>>> = batch
            .par_iter()
            .map(|psi| {
                let (g, f) = layout.unpack(psi.as_slice())?;
                let c = group_curves(&rows, &local, &g, &f, grid);
                c.iter().flatten().all(|v| v.is_finite()).then_some(c)
            })
            .collect();
        samples.extend(curves.into_iter().flatten());
    }
    if samples.len() < draws {
        return Err(NetSurvError::TooManyRejections {
            accepted: samples.len(),
            attempts,
        });
    }

    let tau = 1.0 - level;
    let plug = group_curves(&rows, &local, &fit.params, &fit.frailty, grid);
    let mut out = Vec::with_capacity(groups.len());
    for (gi, grp) in groups.iter().enumerate() {
        let mut lower = Vec::with_capacity(grid.len());
        let mut upper = Vec::with_capacity(grid.len());
        let mut column = vec![0.0; draws];
        for k in 0..grid.len() {
            for (d, s) in samples.iter().enumerate() {
                column[d] = s[gi][k];
            }
            column.sort_by(f64::total_cmp);
            let est = plug[gi][k];
            lower.push(quantile_sorted(&column, tau / 2.0).min(est));
            upper.push(quantile_sorted(&column, 1.0 - tau / 2.0).max(est));
        }
        out.push(NetSurvivalCurve {
            time: grid.to_vec(),
            estimate: plug[gi].clone(),
            lower: Some(lower),
            upper: Some(upper),
            label: grp.label.clone(),
            model: fit.spec.label(),
        });
    }
    Ok(out)
}

/// Single-curve form of [`net_survival_bands`]; `None` means the whole
/// dataset.
#[allow(clippy::too_many_arguments)]
pub fn net_survival_mc_ci(
    data: &Dataset,
    fit: &FitResult,
    grid: &[f64],
    level: f64,
    draws: usize,
    seed: u64,
    filter: Option<(&str, &dyn Fn(&PatientRecord) -> bool)>,
) -> Result<NetSurvivalCurve, NetSurvError> {
    let group = match filter {
        None => Group::all(data, "population"),
        Some((label, keep)) => Group::filter(data, label, keep),
    };
    let mut v = net_survival_bands(data, fit, grid, &[group], level, draws, seed)?;
    Ok(v.remove(0))
}

/// Linear-interpolation quantile of sorted values.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = p * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Long-format CSV `time,estimate,lower,upper,label,model`.
pub fn write_curves_csv<W: Write>(curves: &[NetSurvivalCurve], sink: W) -> Result<(), NetSurvError> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["time", "estimate", "lower", "upper", "label", "model"])?;
    for c in curves {
        for k in 0..c.time.len() {
            let band = |b: &Option<Vec<f64>>| b.as_ref().map_or(String::new(), |v| fmt_f64(v[k]));
            w.write_record([
                fmt_f64(c.time[k]),
                fmt_f64(c.estimate[k]),
                band(&c.lower),
                band(&c.upper),
                c.label.clone(),
                c.model.clone(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baseline::{Baseline, BaselineKind, PgwParams};
    use crate::inference::{Convergence, ModelSpec};
    use crate::lifetable::LifeTableKey;
    use crate::model::FrailtyFamily;

    fn fake_fit(g: GhParams, f: FrailtySpec, spec: ModelSpec, cov_scale: f64) -> FitResult {
        let layout = spec.layout();
        let psi = layout.pack(&g, &f);
        let n = psi.len();
        let covariance = (cov_scale > 0.0).then(|| {
            (0..n)
                .map(|i| (0..n).map(|j| if i == j { cov_scale } else { 0.0 }).collect())
                .collect()
        });
        FitResult {
            names: layout.names(&spec.x, &spec.w),
            estimates: layout.natural(&psi),
            transformed_names: layout.transformed_names(&spec.x, &spec.w),
            transformed_estimates: psi,
            std_errors: covariance.as_ref().map(|_| vec![cov_scale.sqrt(); n]),
            natural_std_errors: covariance.as_ref().map(|_| vec![cov_scale.sqrt(); n]),
            covariance,
            spec,
            params: g,
            frailty: f,
            loglik: 0.0,
            aic: 0.0,
            n_params: n,
            n: 0,
            n_events: 0,
            data_fingerprint: 0,
            b_at_boundary: false,
            convergence: Convergence {
                converged: true,
                iterations: 0,
                gradient_norm: 0.0,
                starts: 1,
                messages: vec![],
            },
        }
    }

    fn data(zs: &[f64]) -> Dataset {
        let records = zs
            .iter()
            .map(|&z| PatientRecord {
                time: 5.0,
                status: false,
                covariates: vec![z],
                key: LifeTableKey::new(60.0, 2010.0, vec![]),
            })
            .collect();
        Dataset::new(vec!["z".into()], vec![], records).unwrap()
    }

    fn sc_fit(frailty: FrailtySpec, cov_scale: f64) -> FitResult {
        let g = GhParams::new(
            vec![0.5],
            vec![1.0],
            Baseline::Pgw(PgwParams::new(0.75, 1.75, 8.0).unwrap()),
        )
        .unwrap();
        let spec = ModelSpec::new(BaselineKind::Pgw, frailty.family, &["z"], &["z"]);
        fake_fit(g, frailty, spec, cov_scale)
    }

    #[test]
    fn starts_at_one_and_single_record_matches_profile() {
        let d = data(&[0.3]);
        let fit = sc_fit(FrailtySpec::gamma(0.5), 0.0);
        let grid = default_grid();
        let c = population_net_survival(&d, &fit, &grid).unwrap();
        assert_eq!(c.estimate[0], 1.0);
        let p = profile_net_survival(&fit.params, &fit.frailty, &[0.3], &[0.3], &grid).unwrap();
        assert_eq!(c.estimate, p);
        assert!(c.estimate.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn reference_profile_has_closed_form() {
        let fit = sc_fit(FrailtySpec::gamma(0.5), 0.0);
        let grid = uniform_grid(5.0, 11);
        let p = profile_net_survival(&fit.params, &fit.frailty, &[0.0], &[0.0], &grid).unwrap();
        for (t, s) in grid.iter().zip(p) {
            let h0 = fit.params.baseline.cum_hazard(*t);
            assert!((s - (1.0 + 0.5 * h0).powf(-2.0)).abs() < 1e-14);
        }
    }

    #[test]
    fn huge_hazard_record_halves_the_average() {
        let d = data(&[0.0, 40.0]);
        let fit = sc_fit(FrailtySpec::none(), 0.0);
        let c = population_net_survival(&d, &fit, &[0.0, 2.0]).unwrap();
        assert_eq!(c.estimate[0], 1.0);
        let single = profile_net_survival(&fit.params, &fit.frailty, &[0.0], &[0.0], &[2.0]).unwrap()[0];
        assert!((c.estimate[1] - 0.5 * single).abs() < 1e-12);
    }

    #[test]
    fn partition_identity_and_errors() {
        let d = data(&[-1.0, -0.2, 0.1, 0.5, 1.3]);
        let fit = sc_fit(FrailtySpec::inverse_gaussian(0.8), 0.0);
        let grid = default_grid();
        let all = population_net_survival(&d, &fit, &grid).unwrap();
        let lo = subgroup_net_survival(&d, &fit, &grid, "lo", |r| r.covariates[0] < 0.0).unwrap();
        let hi = subgroup_net_survival(&d, &fit, &grid, "hi", |r| r.covariates[0] >= 0.0).unwrap();
        for k in 0..grid.len() {
            let mix = (2.0 * lo.estimate[k] + 3.0 * hi.estimate[k]) / 5.0;
            assert!((mix - all.estimate[k]).abs() <= 1e-12);
        }
        let everyone = subgroup_net_survival(&d, &fit, &grid, "population", |_| true).unwrap();
        assert_eq!(everyone, all);
        assert!(matches!(
            subgroup_net_survival(&d, &fit, &grid, "none", |_| false),
            Err(NetSurvError::EmptySubgroup(_))
        ));
        assert!(matches!(
            population_net_survival(&d, &fit, &[0.0, 6.0]),
            Err(NetSurvError::GridBeyondFollowUp { .. })
        ));
        assert!(matches!(
            population_net_survival(&d, &fit, &[1.0, 0.5]),
            Err(NetSurvError::InvalidGrid)
        ));
    }

    #[test]
    fn bands_shrink_with_covariance_and_bracket_estimate() {
        let d = data(&[-1.0, -0.2, 0.1, 0.5, 1.3]);
        let grid = uniform_grid(5.0, 21);
        let wide = sc_fit(FrailtySpec::gamma(0.5), 0.01);
        let c = net_survival_mc_ci(&d, &wide, &grid, 0.95, 400, 7, None).unwrap();
        let (lo, hi) = (c.lower.as_ref().unwrap(), c.upper.as_ref().unwrap());
        for k in 0..grid.len() {
            assert!(lo[k] <= c.estimate[k] && c.estimate[k] <= hi[k]);
        }
        assert!(hi[10] - lo[10] > 1e-3);
        let again = net_survival_mc_ci(&d, &wide, &grid, 0.95, 400, 7, None).unwrap();
        assert_eq!(again, c);

        let tight = sc_fit(FrailtySpec::gamma(0.5), 1e-12 * 0.01);
        let c = net_survival_mc_ci(&d, &tight, &grid, 0.95, 400, 7, None).unwrap();
        let width = c
            .lower
            .unwrap()
            .iter()
            .zip(c.upper.unwrap())
            .fold(0.0f64, |m, (l, u)| m.max(u - l));
        assert!(width < 1e-6);

        let none = sc_fit(FrailtySpec::gamma(0.5), 0.0);
        assert!(matches!(
            net_survival_mc_ci(&d, &none, &grid, 0.95, 400, 7, None),
            Err(NetSurvError::SeInvalid)
        ));
        assert!(matches!(
            net_survival_mc_ci(&d, &wide, &grid, 0.95, 10, 7, None),
            Err(NetSurvError::TooFewDraws(10))
        ));
        assert_eq!(FrailtyFamily::Gamma, wide.frailty.family);
    }

    #[test]
    fn csv_layout() {
        let d = data(&[0.0]);
        let fit = sc_fit(FrailtySpec::none(), 0.0);
        let c = population_net_survival(&d, &fit, &[0.0, 1.0]).unwrap();
        let mut buf = Vec::new();
        write_curves_csv(&[c], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("time,estimate,lower,upper,label,model"));
        assert_eq!(lines.next(), Some("0.0,1.0,,,population,pgw"));
    }

    #[test]
    fn quantile_interpolates() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&v, 0.0), 1.0);
        assert_eq!(quantile_sorted(&v, 1.0), 4.0);
        assert!((quantile_sorted(&v, 0.5) - 2.5).abs() < 1e-15);
    }
}
