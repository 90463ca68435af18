//! Maximum-likelihood fitting of the excess hazard model, Wald intervals and
//! AIC comparison.
//!
//! Optimisation runs on an unconstrained vector `psi`: positive baseline
//! parameters and the frailty variance enter on the log scale, regression
//! coefficients as they are.

pub mod hessian;
pub mod likelihood;
pub mod optim;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as StdNormal};
use thiserror::Error;

use crate::baseline::{Baseline, BaselineKind};
use crate::data::{DataError, Dataset};
use crate::lifetable::LifeTable;
use crate::model::{CovariateMapping, FrailtyFamily, FrailtySpec, GhParams, ModelError};

pub use likelihood::{loglik_classical, loglik_frailty, Prepared};
pub use optim::{BfgsOptions, Termination};

/// Below this fitted variance the frailty estimate is reported as sitting on
/// the boundary of the parameter space.
pub const BOUNDARY_VARIANCE: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("dataset has no events")]
    NoEvents,
    #[error("starting vector has length {actual}, expected {expected}")]
    InitLength { expected: usize, actual: usize },
    #[error("confidence level must lie in (0, 1), got {0}")]
    InvalidLevel(f64),
    #[error("standard errors are not available for this fit")]
    SeInvalid,
    #[error("fits were obtained on different datasets")]
    MismatchedDatasets,
    #[error("nothing to compare")]
    EmptyComparison,
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Which model to fit: baseline family, frailty law and the covariates that
/// act on the hazard level (`x`) and on the time scale (`w`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub baseline: BaselineKind,
    pub frailty: FrailtyFamily,
    pub x: Vec<String>,
    pub w: Vec<String>,
}

impl ModelSpec {
    pub fn new(baseline: BaselineKind, frailty: FrailtyFamily, x: &[&str], w: &[&str]) -> Self {
        Self {
            baseline,
            frailty,
            x: x.iter().map(|s| s.to_string()).collect(),
            w: w.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn layout(&self) -> ParamLayout {
        ParamLayout {
            baseline: self.baseline,
            frailty: self.frailty,
            n_alpha: self.w.len(),
            n_beta: self.x.len(),
        }
    }

    pub fn n_params(&self) -> usize {
        self.layout().len()
    }

    /// Short label such as `pgw+gamma` or `lognormal`.
    pub fn label(&self) -> String {
        match self.frailty {
            FrailtyFamily::None => self.baseline.to_string(),
            f => format!("{}+{f}", self.baseline),
        }
    }

    pub fn mapping(&self, columns: &[String]) -> Result<CovariateMapping, ModelError> {
        CovariateMapping::resolve(columns, &self.x, &self.w)
    }
}

/// Positions of the parameter blocks in `psi`:
/// `[theta | alpha | beta | log b]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub baseline: BaselineKind,
    pub frailty: FrailtyFamily,
    pub n_alpha: usize,
    pub n_beta: usize,
}

impl ParamLayout {
    pub fn len(&self) -> usize {
        self.baseline.n_params() + self.n_alpha + self.n_beta + self.b_index().map_or(0, |_| 1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn theta_start(&self) -> usize {
        0
    }

    pub fn alpha_start(&self) -> usize {
        self.baseline.n_params()
    }

    pub fn beta_start(&self) -> usize {
        self.alpha_start() + self.n_alpha
    }

    pub fn b_index(&self) -> Option<usize> {
        (self.frailty != FrailtyFamily::None).then(|| self.beta_start() + self.n_beta)
    }

    /// Whether entry `i` of `psi` is the log of its natural parameter.
    pub fn is_log(&self, i: usize) -> bool {
        let k = self.baseline.n_params();
        if i < k {
            self.baseline.log_transformed()[i]
        } else {
            Some(i) == self.b_index()
        }
    }

    /// Model parameters at `psi`, or `None` if `psi` maps outside the
    /// parameter space (wrong length, overflow).
    pub fn unpack(&self, psi: &[f64]) -> Option<(GhParams, FrailtySpec)> {
        if psi.len() != self.len() || psi.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let k = self.baseline.n_params();
        let baseline = Baseline::from_transformed(self.baseline, &psi[..k]).ok()?;
        let alpha = psi[self.alpha_start()..self.beta_start()].to_vec();
        let beta = psi[self.beta_start()..self.beta_start() + self.n_beta].to_vec();
        let g = GhParams::new(alpha, beta, baseline).ok()?;
        let f = match self.b_index() {
            None => FrailtySpec::none(),
            Some(i) => {
                let b = psi[i].exp();
                if !b.is_finite() {
                    return None;
                }
                FrailtySpec {
                    family: self.frailty,
                    variance: b,
                }
            }
        };
        Some((g, f))
    }

    pub fn pack(&self, g: &GhParams, f: &FrailtySpec) -> Vec<f64> {
        let mut psi = g.baseline.transformed();
        psi.extend_from_slice(&g.alpha);
        psi.extend_from_slice(&g.beta);
        if self.b_index().is_some() {
            psi.push(f.variance.ln());
        }
        psi
    }

    /// Natural-scale values of `psi`.
    pub fn natural(&self, psi: &[f64]) -> Vec<f64> {
        psi.iter()
            .enumerate()
            .map(|(i, &v)| if self.is_log(i) { v.exp() } else { v })
            .collect()
    }

    /// Natural-scale parameter names given the covariate names.
    pub fn names(&self, x: &[String], w: &[String]) -> Vec<String> {
        let mut names: Vec<String> = self.baseline.param_names().iter().map(|s| s.to_string()).collect();
        names.extend(w.iter().map(|c| format!("alpha_{c}")));
        names.extend(x.iter().map(|c| format!("beta_{c}")));
        if self.b_index().is_some() {
            names.push("b".into());
        }
        names
    }

    /// Names of the entries of `psi` (`log_` prefix on log-scale entries).
    pub fn transformed_names(&self, x: &[String], w: &[String]) -> Vec<String> {
        self.names(x, w)
            .into_iter()
            .enumerate()
            .map(|(i, n)| if self.is_log(i) { format!("log_{n}") } else { n })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub bfgs: BfgsOptions,
    /// Jittered restarts tried when the first run does not converge.
    pub restarts: usize,
    pub jitter_sd: f64,
    /// Seed for the restart jitter.
    pub seed: u64,
    /// Starting vector on the transformed scale; default is the two-stage
    /// start from a proportional hazards fit.
    pub init: Option<Vec<f64>>,
    pub compute_se: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            bfgs: BfgsOptions::default(),
            restarts: 5,
            jitter_sd: 0.3,
            seed: 0x5eed,
            init: None,
            compute_se: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub converged: bool,
    pub iterations: usize,
    pub gradient_norm: f64,
    /// Number of optimiser runs, including restarts.
    pub starts: usize,
    pub messages: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub spec: ModelSpec,
    pub params: GhParams,
    pub frailty: FrailtySpec,
    /// Natural-scale names and estimates, in `psi` order.
    pub names: Vec<String>,
    pub estimates: Vec<f64>,
    pub transformed_names: Vec<String>,
    pub transformed_estimates: Vec<f64>,
    /// Inverse observed information on the transformed scale (row-major).
    pub covariance: Option<Vec<Vec<f64>>>,
    /// Standard errors on the transformed scale.
    pub std_errors: Option<Vec<f64>>,
    /// Delta-method standard errors on the natural scale.
    pub natural_std_errors: Option<Vec<f64>>,
    pub loglik: f64,
    pub aic: f64,
    pub n_params: usize,
    pub n: usize,
    pub n_events: usize,
    pub data_fingerprint: u64,
    pub b_at_boundary: bool,
    pub convergence: Convergence,
}

impl FitResult {
    pub fn layout(&self) -> ParamLayout {
        self.spec.layout()
    }

    pub fn se_valid(&self) -> bool {
        self.std_errors.is_some()
    }

    pub fn converged(&self) -> bool {
        self.convergence.converged
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn covariance_matrix(&self) -> Option<DMatrix<f64>> {
        let c = self.covariance.as_ref()?;
        let n = c.len();
        Some(DMatrix::from_fn(n, n, |i, j| c[i][j]))
    }
}

/// Fits `spec` to `data` by maximum likelihood.
pub fn fit(
    data: &Dataset,
    table: &LifeTable,
    spec: &ModelSpec,
    opts: &FitOptions,
) -> Result<FitResult, InferenceError> {
    let mapping = spec.mapping(&data.covariate_names)?;
    let prep = Prepared::new(data, table, &mapping)?;
    fit_prepared(&prep, spec, opts, data.fingerprint())
}

/// As [`fit`] on data already flattened against a life table with the
/// covariate mapping of `spec`.
pub fn fit_prepared(
    prep: &Prepared,
    spec: &ModelSpec,
    opts: &FitOptions,
    fingerprint: u64,
) -> Result<FitResult, InferenceError> {
    let n_events = prep.n_events();
    if n_events == 0 {
        return Err(InferenceError::NoEvents);
    }
    let layout = spec.layout();
    let start = match &opts.init {
        Some(init) => {
            if init.len() != layout.len() {
                return Err(InferenceError::InitLength {
                    expected: layout.len(),
                    actual: init.len(),
                });
            }
            init.clone()
        }
        None => two_stage_start(prep, &layout, &opts.bfgs),
    };

    let mut messages = Vec::new();
    let mut best = run(prep, &layout, &start, &opts.bfgs);
    let mut iterations = best.iterations;
    let mut starts = 1;
    if !best.converged() {
        messages.push(format!("initial run ended with {:?}", best.termination));
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let noise = Normal::new(0.0, opts.jitter_sd).expect("jitter sd must be non-negative");
        for _ in 0..opts.restarts {
            let jittered: Vec<f64> = start.iter().map(|v| v + noise.sample(&mut rng)).collect();
            let m = run(prep, &layout, &jittered, &opts.bfgs);
            iterations += m.iterations;
            starts += 1;
            let better = match (m.converged(), best.converged()) {
                (true, false) => true,
                (false, true) => false,
                _ => m.value.is_finite() && !(m.value >= best.value),
            };
            if better {
                best = m;
            }
        }
        messages.push(format!(
            "{} restarts; kept run ending with {:?}",
            opts.restarts, best.termination
        ));
    }
    if best.termination == Termination::Stalled {
        messages.push("line search stalled near the optimum".into());
    }

    let psi = best.x.clone();
    let loglik = -best.value;
    let (g, f) = layout.unpack(&psi).unwrap_or_else(|| {
        layout
            .unpack(&start)
            .expect("starting point maps to valid parameters")
    });
    let b_at_boundary = f.family != FrailtyFamily::None && f.variance < BOUNDARY_VARIANCE;
    if b_at_boundary {
        messages.push("frailty variance at the lower boundary; its interval is unreliable".into());
    }

    let mut covariance = None;
    let mut std_errors = None;
    let mut natural_std_errors = None;
    if opts.compute_se && loglik.is_finite() {
        let neg_h = hessian::hessian_from_gradient(
            |x, out| {
                likelihood::loglik_and_grad(prep, &layout, x, out);
                out.iter_mut().for_each(|v| *v = -*v);
            },
            &psi,
        );
        match hessian::invert_spd(&neg_h) {
            Some(cov) => {
                let se: Vec<f64> = (0..cov.nrows()).map(|i| cov[(i, i)].sqrt()).collect();
                let nat = se
                    .iter()
                    .enumerate()
                    .map(|(i, s)| if layout.is_log(i) { s * psi[i].exp() } else { *s })
                    .collect();
                covariance = Some(
                    (0..cov.nrows())
                        .map(|i| (0..cov.ncols()).map(|j| cov[(i, j)]).collect())
                        .collect(),
                );
                std_errors = Some(se);
                natural_std_errors = Some(nat);
            }
            None => messages.push("observed information is not positive definite; standard errors unavailable".into()),
        }
    }

    let n_params = layout.len();
    Ok(FitResult {
        spec: spec.clone(),
        params: g,
        frailty: f,
        names: layout.names(&spec.x, &spec.w),
        estimates: layout.natural(&psi),
        transformed_names: layout.transformed_names(&spec.x, &spec.w),
        transformed_estimates: psi,
        covariance,
        std_errors,
        natural_std_errors,
        loglik,
        aic: 2.0 * n_params as f64 - 2.0 * loglik,
        n_params,
        n: prep.n,
        n_events,
        data_fingerprint: fingerprint,
        b_at_boundary,
        convergence: Convergence {
            converged: best.converged(),
            iterations,
            gradient_norm: best.grad_norm(),
            starts,
            messages,
        },
    })
}

fn run(prep: &Prepared, layout: &ParamLayout, start: &[f64], opts: &BfgsOptions) -> optim::Minimum {
    optim::minimize(
        |x, g| {
            let ll = likelihood::loglik_and_grad(prep, layout, x, g);
            g.iter_mut().for_each(|v| *v = -*v);
            -ll
        },
        start,
        opts,
    )
}

/// Layout of the proportional hazards submodel without frailty used for
/// initialisation.
pub fn ph_layout(layout: &ParamLayout) -> ParamLayout {
    ParamLayout {
        baseline: layout.baseline,
        frailty: FrailtyFamily::None,
        n_alpha: 0,
        n_beta: layout.n_beta,
    }
}

/// Fits the proportional hazards submodel from a crude start and returns
/// its transformed estimate.
pub fn fit_ph_submodel(prep: &Prepared, layout: &ParamLayout, opts: &BfgsOptions) -> Vec<f64> {
    let ph = ph_layout(layout);
    let crude = likelihood::crude_start(prep, &ph);
    let m = run(prep, &ph, &crude, opts);
    if m.value.is_finite() {
        m.x
    } else {
        crude
    }
}

/// Full-model start from a PH estimate: baseline and `beta` copied, `alpha`
/// zero and frailty variance one.
pub fn start_from_ph(ph_psi: &[f64], layout: &ParamLayout) -> Vec<f64> {
    let ph = ph_layout(layout);
    let mut psi = vec![0.0; layout.len()];
    let k = layout.baseline.n_params();
    psi[..k].copy_from_slice(&ph_psi[..k]);
    psi[layout.beta_start()..layout.beta_start() + layout.n_beta]
        .copy_from_slice(&ph_psi[ph.beta_start()..ph.beta_start() + ph.n_beta]);
    if let Some(i) = layout.b_index() {
        psi[i] = 0.0;
    }
    psi
}

fn two_stage_start(prep: &Prepared, layout: &ParamLayout, opts: &BfgsOptions) -> Vec<f64> {
    let ph = fit_ph_submodel(prep, layout, opts);
    start_from_ph(&ph, layout)
}

/// Two-sided standard normal quantile for `level`.
pub fn normal_quantile(level: f64) -> Result<f64, InferenceError> {
    if !(level > 0.0 && level < 1.0) {
        return Err(InferenceError::InvalidLevel(level));
    }
    Ok(StdNormal::standard().inverse_cdf(0.5 + 0.5 * level))
}

/// Interval `estimate ± z se` on the transformed scale, mapped through `exp`
/// when `log_scale` is set.
pub fn wald_interval(estimate: f64, se: f64, level: f64, log_scale: bool) -> Result<(f64, f64), InferenceError> {
    let z = normal_quantile(level)?;
    let (lo, hi) = (estimate - z * se, estimate + z * se);
    Ok(if log_scale { (lo.exp(), hi.exp()) } else { (lo, hi) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaldInterval {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Natural-scale Wald intervals for every parameter.
pub fn wald_ci(fit: &FitResult, level: f64) -> Result<Vec<WaldInterval>, InferenceError> {
    let se = fit.std_errors.as_ref().ok_or(InferenceError::SeInvalid)?;
    let nat_se = fit.natural_std_errors.as_ref().ok_or(InferenceError::SeInvalid)?;
    let layout = fit.layout();
    (0..fit.names.len())
        .map(|i| {
            let (lower, upper) =
                wald_interval(fit.transformed_estimates[i], se[i], level, layout.is_log(i))?;
            Ok(WaldInterval {
                name: fit.names[i].clone(),
                estimate: fit.estimates[i],
                std_error: nat_se[i],
                lower,
                upper,
            })
        })
        .collect()
}

/// Indices of `fits` ordered by AIC, fewer parameters first on ties.
pub fn aic_compare(fits: &[&FitResult]) -> Result<Vec<usize>, InferenceError> {
    let first = fits.first().ok_or(InferenceError::EmptyComparison)?;
    if fits
        .iter()
        .any(|f| f.data_fingerprint != first.data_fingerprint || f.n != first.n)
    {
        return Err(InferenceError::MismatchedDatasets);
    }
    let mut order: Vec<usize> = (0..fits.len()).collect();
    order.sort_by(|&a, &b| {
        fits[a]
            .aic
            .total_cmp(&fits[b].aic)
            .then(fits[a].n_params.cmp(&fits[b].n_params))
    });
    Ok(order)
}
