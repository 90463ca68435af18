//! Scenario files: cohort size, covariate laws, true model, censoring.

use serde::{Deserialize, Serialize};

use crate::baseline::{Baseline, BaselineKind};
use crate::inference::ModelSpec;
use crate::model::{FrailtyFamily, FrailtySpec};

use super::SimError;

/// One covariate generator. Generators run in file order, so a conditional
/// generator must come after the covariate it depends on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovariateGen {
    /// Age at diagnosis drawn from a mixture of uniforms `[lo, hi, weight]`.
    /// The covariate is `(age - center) / scale`, by default the mixture
    /// mean and standard deviation; the raw age feeds the life-table key.
    AgeMixture {
        name: String,
        components: Vec<[f64; 3]>,
        #[serde(default)]
        center: Option<f64>,
        #[serde(default)]
        scale: Option<f64>,
    },
    Bernoulli {
        name: String,
        p: f64,
    },
    /// Binary covariate whose success probability depends on an earlier
    /// binary covariate.
    ConditionalBernoulli {
        name: String,
        given: String,
        p_if_one: f64,
        p_if_zero: f64,
    },
    Normal {
        name: String,
        mean: f64,
        sd: f64,
    },
    /// Categorical with level probabilities; emitted as dummies
    /// `<name>2 .. <name>K` against level 1.
    Categorical {
        name: String,
        probs: Vec<f64>,
    },
}

impl CovariateGen {
    pub fn name(&self) -> &str {
        match self {
            CovariateGen::AgeMixture { name, .. }
            | CovariateGen::Bernoulli { name, .. }
            | CovariateGen::ConditionalBernoulli { name, .. }
            | CovariateGen::Normal { name, .. }
            | CovariateGen::Categorical { name, .. } => name,
        }
    }

    /// Dataset columns produced by this generator.
    pub fn columns(&self) -> Vec<String> {
        match self {
            CovariateGen::Categorical { name, probs } => {
                (2..=probs.len()).map(|k| format!("{name}{k}")).collect()
            }
            other => vec![other.name().to_string()],
        }
    }
}

/// Mean and standard deviation of a mixture of uniforms.
pub fn mixture_moments(components: &[[f64; 3]]) -> (f64, f64) {
    let total: f64 = components.iter().map(|c| c[2]).sum();
    let mut m1 = 0.0;
    let mut m2 = 0.0;
    for &[lo, hi, w] in components {
        let p = w / total;
        m1 += p * 0.5 * (lo + hi);
        m2 += p * (lo * lo + lo * hi + hi * hi) / 3.0;
    }
    (m1, (m2 - m1 * m1).sqrt())
}

/// Selects the truth block applying to a patient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Condition {
    pub covariate: String,
    pub value: f64,
}

/// True model for patients matching `when` (all patients when absent).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthBlock {
    #[serde(default)]
    pub when: Option<Condition>,
    pub baseline: Baseline,
    #[serde(default = "FrailtySpec::none")]
    pub frailty: FrailtySpec,
    #[serde(default)]
    pub x: Vec<String>,
    #[serde(default)]
    pub beta: Vec<f64>,
    #[serde(default)]
    pub w: Vec<String>,
    #[serde(default)]
    pub alpha: Vec<f64>,
}

/// Life-table stratum column, labelled by the value of a discrete covariate
/// or fixed to `labels[0]` when `covariate` is absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StratumFrom {
    pub column: String,
    #[serde(default)]
    pub covariate: Option<String>,
    /// Label for covariate value 0, 1, ...
    pub labels: Vec<String>,
}

/// Analyses of the missing-covariate study: a pooled model on `pooled`
/// covariates and per-level models of `split` on `stratified` covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Aim2Spec {
    pub split: String,
    pub pooled: Vec<String>,
    pub stratified: Vec<String>,
    #[serde(default = "default_family")]
    pub frailty: FrailtyFamily,
    #[serde(default = "default_baseline")]
    pub baseline: BaselineKind,
}

fn default_family() -> FrailtyFamily {
    FrailtyFamily::Gamma
}

fn default_baseline() -> BaselineKind {
    BaselineKind::Pgw
}

fn default_replicates() -> usize {
    1
}

fn default_dropout_target() -> f64 {
    0.05
}

fn default_years() -> [f64; 2] {
    [2010.0, 2012.0]
}

fn default_life_table() -> String {
    "synthetic".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub n: usize,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    pub seed: u64,
    /// Administrative censoring time in years.
    pub admin_censor: f64,
    /// Exponential drop-out rate per year; calibrated to `dropout_target`
    /// when absent.
    #[serde(default)]
    pub dropout_rate: Option<f64>,
    #[serde(default = "default_dropout_target")]
    pub dropout_target: f64,
    /// When set, the drop-out rate is instead calibrated so that this share
    /// of patients is censored overall (drop-out or administrative).
    #[serde(default)]
    pub censoring_target: Option<f64>,
    /// Calendar years of diagnosis, drawn uniformly on `[from, to)`.
    #[serde(default = "default_years")]
    pub diagnosis_years: [f64; 2],
    /// `synthetic` or a path (relative to the scenario file) to a life-table CSV.
    #[serde(default = "default_life_table")]
    pub life_table: String,
    #[serde(default)]
    pub stratum: Option<StratumFrom>,
    pub covariates: Vec<CovariateGen>,
    pub truth: Vec<TruthBlock>,
    /// Model fitted in the finite-sample study; defaults to the true
    /// structure of the first truth block.
    #[serde(default)]
    pub analysis: Option<ModelSpec>,
    #[serde(default)]
    pub aim2: Option<Aim2Spec>,
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        let s: Scenario = toml::from_str(text).map_err(|e| SimError::Parse(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serialises")
    }

    /// Built-in scenario by name.
    pub fn builtin(name: &str) -> Option<Scenario> {
        let text = match name {
            "sc1" => include_str!("../../scenarios/sc1.toml"),
            "sc1-nofrailty" => include_str!("../../scenarios/sc1-nofrailty.toml"),
            "aim2-s1" => include_str!("../../scenarios/aim2-s1.toml"),
            "aim2-s2" => include_str!("../../scenarios/aim2-s2.toml"),
            "lung" => include_str!("../../scenarios/lung.toml"),
            _ => return None,
        };
        Some(Scenario::from_toml(text).expect("built-in scenario is valid"))
    }

    pub fn builtin_names() -> &'static [&'static str] {
        &["sc1", "sc1-nofrailty", "aim2-s1", "aim2-s2", "lung"]
    }

    pub fn columns(&self) -> Vec<String> {
        self.covariates.iter().flat_map(|g| g.columns()).collect()
    }

    /// Model matching the first truth block, used when `analysis` is absent.
    pub fn analysis_spec(&self) -> ModelSpec {
        self.analysis.clone().unwrap_or_else(|| {
            let t = &self.truth[0];
            ModelSpec {
                baseline: t.baseline.kind(),
                frailty: t.frailty.family,
                x: t.x.clone(),
                w: t.w.clone(),
            }
        })
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Invalid(m));
        if self.n == 0 {
            return bad("n must be positive".into());
        }
        if !(self.admin_censor > 0.0) {
            return bad("admin_censor must be positive".into());
        }
        if let Some(r) = self.dropout_rate {
            if !(r >= 0.0 && r.is_finite()) {
                return bad(format!("dropout_rate must be non-negative, got {r}"));
            }
        }
        if !(0.0..1.0).contains(&self.dropout_target) {
            return bad("dropout_target must lie in [0, 1)".into());
        }
        if self.censoring_target.is_some_and(|c| !(0.0..1.0).contains(&c)) {
            return bad("censoring_target must lie in [0, 1)".into());
        }
        if self.censoring_target.is_some() && self.dropout_rate.is_some() {
            return bad("set at most one of dropout_rate and censoring_target".into());
        }
        let [y0, y1] = self.diagnosis_years;
        if !(y0.is_finite() && y1 > y0) {
            return bad("diagnosis_years must be an increasing pair".into());
        }
        let prob = |p: f64, what: &str| -> Result<(), SimError> {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(SimError::Invalid(format!("{what}: probability {p} outside [0, 1]")))
            }
        };
        let mut seen: Vec<String> = Vec::new();
        let mut ages = 0;
        for g in &self.covariates {
            match g {
                CovariateGen::AgeMixture {
                    components, scale, ..
                } => {
                    ages += 1;
                    if components.is_empty()
                        || components
                            .iter()
                            .any(|c| !(c[0] >= 0.0 && c[1] > c[0] && c[2] >= 0.0))
                        || components.iter().map(|c| c[2]).sum::<f64>() <= 0.0
                    {
                        return bad(format!("{}: invalid mixture components", g.name()));
                    }
                    if scale.is_some_and(|s| !(s > 0.0)) {
                        return bad(format!("{}: scale must be positive", g.name()));
                    }
                }
                CovariateGen::Bernoulli { p, .. } => prob(*p, g.name())?,
                CovariateGen::ConditionalBernoulli {
                    given,
                    p_if_one,
                    p_if_zero,
                    ..
                } => {
                    prob(*p_if_one, g.name())?;
                    prob(*p_if_zero, g.name())?;
                    if !seen.contains(given) {
                        return bad(format!("{}: `{given}` must be generated earlier", g.name()));
                    }
                }
                CovariateGen::Normal { sd, .. } => {
                    if !(*sd >= 0.0) {
                        return bad(format!("{}: sd must be non-negative", g.name()));
                    }
                }
                CovariateGen::Categorical { probs, .. } => {
                    for p in probs {
                        prob(*p, g.name())?;
                    }
                    if probs.len() < 2 || (probs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                        return bad(format!("{}: probabilities must sum to one over >= 2 levels", g.name()));
                    }
                }
            }
            for c in g.columns() {
                if seen.contains(&c) {
                    return bad(format!("covariate `{c}` defined twice"));
                }
                seen.push(c);
            }
        }
        if ages != 1 {
            return bad("exactly one age_mixture covariate is required".into());
        }
        if let Some(st) = &self.stratum {
            if st.labels.is_empty() {
                return bad("stratum labels are empty".into());
            }
            if let Some(c) = &st.covariate {
                if !seen.contains(c) {
                    return bad(format!("stratum source `{c}` is not a covariate"));
                }
            }
        }
        if self.truth.is_empty() {
            return bad("at least one truth block is required".into());
        }
        for t in &self.truth {
            if t.x.len() != t.beta.len() || t.w.len() != t.alpha.len() {
                return bad("truth covariate lists and coefficients differ in length".into());
            }
            for c in t.x.iter().chain(&t.w) {
                if !seen.contains(c) {
                    return bad(format!("truth refers to unknown covariate `{c}`"));
                }
            }
            if let Some(cond) = &t.when {
                if !seen.contains(&cond.covariate) {
                    return bad(format!("condition on unknown covariate `{}`", cond.covariate));
                }
            }
            t.frailty
                .validate()
                .map_err(|e| SimError::Invalid(e.to_string()))?;
            let natural = t.baseline.natural();
            Baseline::from_natural(t.baseline.kind(), &natural)
                .map_err(|e| SimError::Invalid(e.to_string()))?;
        }
        if let Some(spec) = &self.analysis {
            for c in spec.x.iter().chain(&spec.w) {
                if !seen.contains(c) {
                    return bad(format!("analysis refers to unknown covariate `{c}`"));
                }
            }
        }
        if let Some(a) = &self.aim2 {
            for c in a.pooled.iter().chain(&a.stratified).chain(std::iter::once(&a.split)) {
                if !seen.contains(c) {
                    return bad(format!("aim2 refers to unknown covariate `{c}`"));
                }
            }
        }
        Ok(())
    }
}
