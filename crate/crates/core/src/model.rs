//! General-hazard excess hazard model with multiplicative individual
//! frailties.
//!
//! The excess hazard has the general hazard (GH) structure
//! `h_E(t) = h0(t exp(w'alpha)) exp(x'beta)`, which nests proportional
//! hazards (`alpha = 0`), accelerated hazards (`beta = 0`) and accelerated
//! failure time (`alpha = beta`, `w = x`). Conditionally on a frailty
//! `lambda` with unit mean, the individual hazard is `h_P + lambda h_E`;
//! integrating `lambda` out gives marginal quantities through the Laplace
//! transform of the frailty law.

use rand::Rng;
use rand_distr::{Distribution, Gamma, InverseGaussian};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baseline::Baseline;
use crate::lifetable::{LifeTable, LifeTableError, LifeTableKey};

/// Below this variance the frailty is treated as degenerate at one.
pub const NO_FRAILTY_THRESHOLD: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("{what} has length {actual}, expected {expected}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("time must be positive, got {0}")]
    NonPositiveTime(f64),
    #[error("time must be non-negative, got {0}")]
    NegativeTime(f64),
    #[error("Laplace argument must be non-negative, got {0}")]
    NegativeArgument(f64),
    #[error("uniform draw must lie in (0, 1), got {0}")]
    InvalidUniform(f64),
    #[error("frailty value must be positive, got {0}")]
    InvalidFrailtyValue(f64),
    #[error("frailty variance must be non-negative and finite, got {0}")]
    InvalidVariance(f64),
    #[error("coefficient is not finite")]
    NonFiniteCoefficient,
    #[error("covariate `{0}` not found")]
    UnknownCovariate(String),
    #[error("covariate `{0}` listed twice")]
    DuplicateCovariate(String),
    #[error(transparent)]
    LifeTable(#[from] LifeTableError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrailtyFamily {
    None,
    Gamma,
    #[serde(rename = "ig")]
    InverseGaussian,
}

impl std::str::FromStr for FrailtyFamily {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(FrailtyFamily::None),
            "gamma" => Ok(FrailtyFamily::Gamma),
            "ig" | "inverse-gaussian" | "inversegaussian" => Ok(FrailtyFamily::InverseGaussian),
            other => Err(format!("unknown frailty `{other}` (expected none, gamma or ig)")),
        }
    }
}

impl std::fmt::Display for FrailtyFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FrailtyFamily::None => "none",
            FrailtyFamily::Gamma => "gamma",
            FrailtyFamily::InverseGaussian => "ig",
        })
    }
}

/// Unit-mean frailty law with variance `variance`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrailtySpec {
    pub family: FrailtyFamily,
    pub variance: f64,
}

/// Laplace-transform quantities needed by the likelihood and its gradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaplaceTerms {
    /// `ln L(s)`.
    pub log_laplace: f64,
    /// `-L'(s)/L(s)`, the mean frailty among those surviving to `s`.
    pub mean: f64,
    /// `d mean / ds`.
    pub dmean_ds: f64,
    /// `d ln L / d b`.
    pub dlog_laplace_db: f64,
    /// `d mean / d b`.
    pub dmean_db: f64,
}

impl FrailtySpec {
    pub fn none() -> Self {
        Self {
            family: FrailtyFamily::None,
            variance: 0.0,
        }
    }

    pub fn gamma(variance: f64) -> Self {
        Self {
            family: FrailtyFamily::Gamma,
            variance,
        }
    }

    pub fn inverse_gaussian(variance: f64) -> Self {
        Self {
            family: FrailtyFamily::InverseGaussian,
            variance,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.family != FrailtyFamily::None
            && !(self.variance.is_finite() && self.variance >= 0.0)
        {
            return Err(ModelError::InvalidVariance(self.variance));
        }
        Ok(())
    }

    fn is_degenerate(&self) -> bool {
        self.family == FrailtyFamily::None || self.variance < NO_FRAILTY_THRESHOLD
    }

    /// `E[exp(-s lambda)]`.
    pub fn laplace(&self, s: f64) -> Result<f64, ModelError> {
        check_arg(s)?;
        self.validate()?;
        Ok(self.log_laplace_unchecked(s).exp())
    }

    pub fn log_laplace(&self, s: f64) -> Result<f64, ModelError> {
        check_arg(s)?;
        self.validate()?;
        Ok(self.log_laplace_unchecked(s))
    }

    /// `-L'(s)/L(s)`: expected frailty among individuals whose cumulative
    /// excess hazard reached `s` without the event.
    pub fn laplace_log_deriv(&self, s: f64) -> Result<f64, ModelError> {
        check_arg(s)?;
        self.validate()?;
        Ok(self.conditional_mean_unchecked(s))
    }

    pub(crate) fn log_laplace_unchecked(&self, s: f64) -> f64 {
        if self.is_degenerate() {
            return -s;
        }
        let b = self.variance;
        match self.family {
            FrailtyFamily::Gamma => -(b * s).ln_1p() / b,
            // (1 - sqrt(1 + 2bs)) / b without cancellation
            FrailtyFamily::InverseGaussian => -2.0 * s / (1.0 + (1.0 + 2.0 * b * s).sqrt()),
            FrailtyFamily::None => unreachable!(),
        }
    }

    pub(crate) fn conditional_mean_unchecked(&self, s: f64) -> f64 {
        if self.is_degenerate() {
            return 1.0;
        }
        let b = self.variance;
        match self.family {
            FrailtyFamily::Gamma => 1.0 / (1.0 + b * s),
            FrailtyFamily::InverseGaussian => 1.0 / (1.0 + 2.0 * b * s).sqrt(),
            FrailtyFamily::None => unreachable!(),
        }
    }

    /// All Laplace quantities at `s`, with derivatives in `s` and `b`.
    pub(crate) fn terms(&self, s: f64) -> LaplaceTerms {
        let b = self.variance;
        if self.family == FrailtyFamily::None {
            return LaplaceTerms {
                log_laplace: -s,
                mean: 1.0,
                dmean_ds: 0.0,
                dlog_laplace_db: 0.0,
                dmean_db: 0.0,
            };
        }
        if b < NO_FRAILTY_THRESHOLD {
            // both families share the same first-order behaviour at b = 0
            return LaplaceTerms {
                log_laplace: -s,
                mean: 1.0,
                dmean_ds: -b,
                dlog_laplace_db: 0.5 * s * s,
                dmean_db: -s,
            };
        }
        match self.family {
            FrailtyFamily::Gamma => {
                let y = b * s;
                let m = 1.0 / (1.0 + y);
                LaplaceTerms {
                    log_laplace: -y.ln_1p() / b,
                    mean: m,
                    dmean_ds: -b * m * m,
                    dlog_laplace_db: gamma_dlog_laplace_db(s, y, b),
                    dmean_db: -s * m * m,
                }
            }
            FrailtyFamily::InverseGaussian => {
                let q = (1.0 + 2.0 * b * s).sqrt();
                let m = 1.0 / q;
                LaplaceTerms {
                    log_laplace: -2.0 * s / (1.0 + q),
                    mean: m,
                    dmean_ds: -b * m * m * m,
                    dlog_laplace_db: 2.0 * s * s / (q * (1.0 + q) * (1.0 + q)),
                    dmean_db: -s * m * m * m,
                }
            }
            FrailtyFamily::None => unreachable!(),
        }
    }

    /// Draws one frailty value; `1` for the degenerate law.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.is_degenerate() {
            return 1.0;
        }
        let b = self.variance;
        match self.family {
            FrailtyFamily::Gamma => Gamma::new(1.0 / b, b)
                .expect("valid gamma parameters")
                .sample(rng),
            FrailtyFamily::InverseGaussian => InverseGaussian::new(1.0, 1.0 / b)
                .expect("valid inverse Gaussian parameters")
                .sample(rng),
            FrailtyFamily::None => unreachable!(),
        }
    }
}

/// `d/db [-ln(1 + b s)/b] = [ln(1+y) - y/(1+y)] / b^2` with `y = b s`.
fn gamma_dlog_laplace_db(s: f64, y: f64, b: f64) -> f64 {
    if y.abs() < 0.05 {
        // ln(1+y) - y/(1+y) = sum_{k>=2} (-1)^k (k-1)/k y^k
        let mut sum = 0.0;
        let mut pow = 1.0; // y^(k-2)
        for k in 2..30 {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            sum += sign * (k - 1) as f64 / k as f64 * pow;
            pow *= y;
        }
        s * s * sum
    } else {
        (y.ln_1p() - y / (1.0 + y)) / (b * b)
    }
}

fn check_arg(s: f64) -> Result<(), ModelError> {
    if s >= 0.0 {
        Ok(())
    } else {
        Err(ModelError::NegativeArgument(s))
    }
}

/// Regression coefficients and baseline of the GH excess hazard.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GhParams {
    /// Time-level effects, paired with `w`.
    pub alpha: Vec<f64>,
    /// Hazard-level effects, paired with `x`.
    pub beta: Vec<f64>,
    pub baseline: Baseline,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl GhParams {
    pub fn new(alpha: Vec<f64>, beta: Vec<f64>, baseline: Baseline) -> Result<Self, ModelError> {
        if alpha.iter().chain(&beta).any(|v| !v.is_finite()) {
            return Err(ModelError::NonFiniteCoefficient);
        }
        Ok(Self {
            alpha,
            beta,
            baseline,
        })
    }

    fn check_dims(&self, x: &[f64], w: &[f64]) -> Result<(), ModelError> {
        if x.len() != self.beta.len() {
            return Err(ModelError::DimensionMismatch {
                what: "x",
                expected: self.beta.len(),
                actual: x.len(),
            });
        }
        if w.len() != self.alpha.len() {
            return Err(ModelError::DimensionMismatch {
                what: "w",
                expected: self.alpha.len(),
                actual: w.len(),
            });
        }
        Ok(())
    }

    /// Linear predictors `(w'alpha, x'beta)`.
    pub fn predictors(&self, x: &[f64], w: &[f64]) -> (f64, f64) {
        (dot(w, &self.alpha), dot(x, &self.beta))
    }

    pub fn excess_hazard(&self, t: f64, x: &[f64], w: &[f64]) -> Result<f64, ModelError> {
        self.check_dims(x, w)?;
        if !(t > 0.0) {
            return Err(ModelError::NonPositiveTime(t));
        }
        Ok(self.excess_hazard_unchecked(t, x, w))
    }

    pub fn excess_cum_hazard(&self, t: f64, x: &[f64], w: &[f64]) -> Result<f64, ModelError> {
        self.check_dims(x, w)?;
        if !(t >= 0.0) {
            return Err(ModelError::NegativeTime(t));
        }
        Ok(self.excess_cum_hazard_unchecked(t, x, w))
    }

    pub(crate) fn excess_hazard_unchecked(&self, t: f64, x: &[f64], w: &[f64]) -> f64 {
        let (wa, xb) = self.predictors(x, w);
        (self.baseline.log_hazard(t * wa.exp()) + xb).exp()
    }

    pub(crate) fn excess_cum_hazard_unchecked(&self, t: f64, x: &[f64], w: &[f64]) -> f64 {
        let (wa, xb) = self.predictors(x, w);
        self.cum_hazard_with(t, wa, xb)
    }

    /// Cumulative excess hazard given precomputed predictors.
    pub fn cum_hazard_with(&self, t: f64, wa: f64, xb: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        self.baseline.cum_hazard(t * wa.exp()) * (xb - wa).exp()
    }

    /// Inverse-transform draw of the excess-cause event time for frailty
    /// value `lambda`. The returned `t` satisfies
    /// `lambda * H_E(t) = -ln(1 - u)`.
    pub fn simulate_event_time(
        &self,
        u: f64,
        x: &[f64],
        w: &[f64],
        lambda: f64,
    ) -> Result<f64, ModelError> {
        self.check_dims(x, w)?;
        if !(u > 0.0 && u < 1.0) {
            return Err(ModelError::InvalidUniform(u));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(ModelError::InvalidFrailtyValue(lambda));
        }
        let (wa, xb) = self.predictors(x, w);
        Ok(self.event_time_with(-(-u).ln_1p(), wa, xb, lambda))
    }

    /// Event time for a unit-exponential draw `e = -ln(1-u)`.
    pub fn event_time_with(&self, e: f64, wa: f64, xb: f64, lambda: f64) -> f64 {
        let target = e * (wa - xb).exp() / lambda;
        self.baseline.quantile(target) / wa.exp()
    }
}

/// Names and dataset column indices of the hazard-level (`x`) and
/// time-level (`w`) covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateMapping {
    pub x_names: Vec<String>,
    pub w_names: Vec<String>,
    pub x_idx: Vec<usize>,
    pub w_idx: Vec<usize>,
    pub w_subset_of_x: bool,
}

impl CovariateMapping {
    pub fn resolve(
        columns: &[String],
        x_names: &[String],
        w_names: &[String],
    ) -> Result<Self, ModelError> {
        let lookup = |names: &[String]| -> Result<Vec<usize>, ModelError> {
            let mut idx = Vec::with_capacity(names.len());
            for (i, name) in names.iter().enumerate() {
                if names[..i].contains(name) {
                    return Err(ModelError::DuplicateCovariate(name.clone()));
                }
                let j = columns
                    .iter()
                    .position(|c| c == name)
                    .ok_or_else(|| ModelError::UnknownCovariate(name.clone()))?;
                idx.push(j);
            }
            Ok(idx)
        };
        let x_idx = lookup(x_names)?;
        let w_idx = lookup(w_names)?;
        let w_subset_of_x = w_idx.iter().all(|j| x_idx.contains(j));
        Ok(Self {
            x_names: x_names.to_vec(),
            w_names: w_names.to_vec(),
            x_idx,
            w_idx,
            w_subset_of_x,
        })
    }

    pub fn gather_x(&self, row: &[f64]) -> Vec<f64> {
        self.x_idx.iter().map(|&j| row[j]).collect()
    }

    pub fn gather_w(&self, row: &[f64]) -> Vec<f64> {
        self.w_idx.iter().map(|&j| row[j]).collect()
    }
}

/// Frailty-marginalised net survival `L(H_E(t))`; `exp(-H_E)` without
/// frailty.
pub fn marginal_net_survival(
    t: f64,
    x: &[f64],
    w: &[f64],
    g: &GhParams,
    f: &FrailtySpec,
) -> Result<f64, ModelError> {
    f.validate()?;
    let h = g.excess_cum_hazard(t, x, w)?;
    Ok(f.log_laplace_unchecked(h).exp())
}

/// Marginal all-cause hazard `h_P + E[lambda | survived] h_E`.
pub fn marginal_hazard(
    t: f64,
    x: &[f64],
    w: &[f64],
    key: &LifeTableKey,
    table: &LifeTable,
    g: &GhParams,
    f: &FrailtySpec,
) -> Result<f64, ModelError> {
    f.validate()?;
    let he = g.excess_hazard(t, x, w)?;
    let cum = g.excess_cum_hazard_unchecked(t, x, w);
    let hp = table.pop_hazard(key, t)?;
    Ok(hp + f.conditional_mean_unchecked(cum) * he)
}

/// Marginal all-cause survival `exp(-[H_P(age+t) - H_P(age)]) L(H_E(t))`.
pub fn marginal_all_cause_survival(
    t: f64,
    x: &[f64],
    w: &[f64],
    key: &LifeTableKey,
    table: &LifeTable,
    g: &GhParams,
    f: &FrailtySpec,
) -> Result<f64, ModelError> {
    let net = marginal_net_survival(t, x, w, g, f)?;
    let hp = table.pop_cum_hazard(key, t)?;
    Ok((-hp).exp() * net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baseline::PgwParams;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pgw(s: f64, n: f64, g: f64) -> Baseline {
        Baseline::Pgw(PgwParams::new(s, n, g).unwrap())
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn laplace_values() {
        for f in [FrailtySpec::gamma(0.5), FrailtySpec::inverse_gaussian(0.5)] {
            assert_eq!(f.laplace(0.0).unwrap(), 1.0);
            assert_eq!(f.laplace_log_deriv(0.0).unwrap(), 1.0);
            assert!(f.laplace(-1.0).is_err());
            assert!(f.laplace_log_deriv(-1.0).is_err());
        }
        let g = FrailtySpec::gamma(0.5);
        assert!((g.laplace(1.0).unwrap() - 1.0 / 2.25).abs() < 1e-15);
        assert!((g.laplace_log_deriv(2.0).unwrap() - 0.5).abs() < 1e-15);
        let ig = FrailtySpec::inverse_gaussian(0.5);
        assert!(rel(ig.laplace(1.5).unwrap(), ((1.0 - 2.5f64.sqrt()) / 0.5).exp()) < 1e-14);
        for f in [FrailtySpec::gamma(0.0), FrailtySpec::inverse_gaussian(1e-9)] {
            assert!(rel(f.laplace(0.7).unwrap(), (-0.7f64).exp()) < 1e-15);
        }
        assert!(FrailtySpec::gamma(-0.1).laplace(1.0).is_err());
    }

    #[test]
    fn conditional_mean_is_log_derivative() {
        for f in [FrailtySpec::gamma(0.8), FrailtySpec::inverse_gaussian(1.3)] {
            for s in [0.05, 0.4, 1.0, 3.0, 10.0] {
                let h = 1e-5;
                let fd = -(f.log_laplace(s + h).unwrap() - f.log_laplace(s - h).unwrap())
                    / (2.0 * h);
                assert!((f.laplace_log_deriv(s).unwrap() - fd).abs() < 1e-7);
            }
            let mut prev = 1.0;
            for i in 0..100 {
                let m = f.laplace_log_deriv(i as f64 * 0.2).unwrap();
                assert!(m <= prev && m > 0.0);
                prev = m;
            }
        }
    }

    #[test]
    fn laplace_terms_derivatives() {
        for f in [
            FrailtySpec::gamma(0.7),
            FrailtySpec::gamma(0.01),
            FrailtySpec::gamma(2e-4),
            FrailtySpec::inverse_gaussian(0.9),
            FrailtySpec::inverse_gaussian(3e-4),
        ] {
            for s in [0.1, 1.0, 4.0] {
                let t = f.terms(s);
                let b = f.variance;
                let hb = 1e-6 * b;
                let up = FrailtySpec { variance: b + hb, ..f };
                let dn = FrailtySpec { variance: b - hb, ..f };
                let fd_l = (up.log_laplace_unchecked(s) - dn.log_laplace_unchecked(s)) / (2.0 * hb);
                let fd_m = (up.conditional_mean_unchecked(s) - dn.conditional_mean_unchecked(s))
                    / (2.0 * hb);
                assert!((t.dlog_laplace_db - fd_l).abs() < 1e-6 * (1.0 + fd_l.abs()), "{f:?} {s}");
                assert!((t.dmean_db - fd_m).abs() < 1e-6 * (1.0 + fd_m.abs()));
                let hs = 1e-6;
                let fd_ms = (f.conditional_mean_unchecked(s + hs)
                    - f.conditional_mean_unchecked(s - hs))
                    / (2.0 * hs);
                assert!((t.dmean_ds - fd_ms).abs() < 1e-7);
                assert_eq!(t.log_laplace, f.log_laplace_unchecked(s));
            }
        }
    }

    #[test]
    fn frailty_draws_have_unit_mean_and_variance_b() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for f in [FrailtySpec::gamma(0.5), FrailtySpec::inverse_gaussian(0.5)] {
            let n = 200_000;
            let draws: Vec<f64> = (0..n).map(|_| f.sample(&mut rng)).collect();
            let mean = draws.iter().sum::<f64>() / n as f64;
            let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n as f64;
            assert!((mean - 1.0).abs() < 0.01, "{mean}");
            assert!((var - 0.5).abs() < 0.03, "{var}");
        }
        assert_eq!(FrailtySpec::none().sample(&mut rng), 1.0);
    }

    #[test]
    fn gh_reductions() {
        let base = pgw(1.3, 0.8, 2.0);
        let zero = GhParams::new(vec![0.0, 0.0], vec![0.0], base).unwrap();
        let (x, w) = ([0.7], [1.0, -2.0]);
        for t in [0.1, 1.0, 3.5] {
            assert!(rel(zero.excess_hazard(t, &x, &w).unwrap(), base.hazard(t)) < 1e-14);
            assert!(rel(zero.excess_cum_hazard(t, &x, &w).unwrap(), base.cum_hazard(t)) < 1e-14);
        }
        assert_eq!(zero.excess_cum_hazard(0.0, &x, &w).unwrap(), 0.0);

        let ph = GhParams::new(vec![0.0, 0.0], vec![0.4], base).unwrap();
        for t in [0.1, 1.0, 3.5] {
            let ratio = ph.excess_hazard(t, &x, &w).unwrap() / base.hazard(t);
            assert!(rel(ratio, (0.4f64 * 0.7).exp()) < 1e-13);
        }
    }

    #[test]
    fn dimension_and_domain_errors() {
        let g = GhParams::new(vec![0.0], vec![0.0, 0.0], pgw(1.0, 1.0, 1.0)).unwrap();
        assert!(matches!(
            g.excess_hazard(1.0, &[0.0], &[0.0]),
            Err(ModelError::DimensionMismatch { what: "x", .. })
        ));
        assert!(matches!(
            g.excess_cum_hazard(1.0, &[0.0, 0.0], &[]),
            Err(ModelError::DimensionMismatch { what: "w", .. })
        ));
        assert!(matches!(
            g.excess_hazard(0.0, &[0.0, 0.0], &[0.0]),
            Err(ModelError::NonPositiveTime(_))
        ));
        assert!(g.simulate_event_time(1.0, &[0.0, 0.0], &[0.0], 1.0).is_err());
        assert!(g.simulate_event_time(0.5, &[0.0, 0.0], &[0.0], 0.0).is_err());
        assert!(GhParams::new(vec![f64::NAN], vec![], pgw(1.0, 1.0, 1.0)).is_err());
    }

    #[test]
    fn simulated_time_hits_target() {
        let g = GhParams::new(vec![0.3, -0.5], vec![1.0, 0.2], pgw(0.75, 1.75, 8.0)).unwrap();
        let (x, w) = ([0.5, 1.0], [1.0, 0.2]);
        for (u, lambda) in [(0.1, 1.0), (0.5, 0.3), (0.93, 2.5), (1e-9, 1.0)] {
            let t = g.simulate_event_time(u, &x, &w, lambda).unwrap();
            let lhs = lambda * g.excess_cum_hazard(t, &x, &w).unwrap();
            assert!(rel(lhs, -(-u).ln_1p()) < 1e-10);
        }
        let base = GhParams::new(vec![0.0, 0.0], vec![0.0, 0.0], pgw(0.75, 1.75, 8.0)).unwrap();
        let t = base.simulate_event_time(0.4, &x, &w, 1.0).unwrap();
        assert!(rel(t, base.baseline.quantile(-(0.6f64).ln())) < 1e-14);
    }

    #[test]
    fn marginal_functions() {
        let g = GhParams::new(vec![0.5], vec![0.5], pgw(1.0, 1.0, 1.0)).unwrap();
        let table = LifeTable::constant(0.0).unwrap();
        let key = LifeTableKey::new(60.0, 2010.0, vec![]);
        let (x, w) = ([1.0], [1.0]);
        let f = FrailtySpec::gamma(0.5);
        assert_eq!(marginal_net_survival(0.0, &x, &w, &g, &f).unwrap(), 1.0);
        let near = FrailtySpec::gamma(1e-8);
        for t in [0.2, 1.0, 4.0] {
            let a = marginal_net_survival(t, &x, &w, &g, &near).unwrap();
            let b = marginal_net_survival(t, &x, &w, &g, &FrailtySpec::none()).unwrap();
            assert!((a - b).abs() < 1e-6);
            let s = marginal_all_cause_survival(t, &x, &w, &key, &table, &g, &f).unwrap();
            assert_eq!(s, marginal_net_survival(t, &x, &w, &g, &f).unwrap());
        }
        // AFT with unit exponential baseline: H_E(t) = t e^{x'beta}; pick t with H_E = 1
        let t1 = (-0.5f64).exp();
        let s = marginal_net_survival(t1, &x, &w, &g, &f).unwrap();
        assert!((s - 1.0 / 2.25).abs() < 1e-14);

        let table = LifeTable::constant(0.01).unwrap();
        let he = g.excess_hazard(1.0, &x, &w).unwrap();
        let h0 = marginal_hazard(1.0, &x, &w, &key, &table, &g, &FrailtySpec::gamma(0.0)).unwrap();
        assert!(rel(h0, 0.01 + he) < 1e-15);
        // H_E(t) = 2 at t = 2 e^{-0.5}: weight 1/(1 + 0.5 * 2)
        let t2 = 2.0 * (-0.5f64).exp();
        let hw = marginal_hazard(t2, &x, &w, &key, &table, &g, &f).unwrap();
        let he2 = g.excess_hazard(t2, &x, &w).unwrap();
        assert!(rel(hw, 0.01 + 0.5 * he2) < 1e-14);
    }

    #[test]
    fn covariate_mapping() {
        let cols: Vec<String> = ["agec", "sex", "x1"].iter().map(|s| s.to_string()).collect();
        let m = CovariateMapping::resolve(&cols, &cols[..2], &cols[..1]).unwrap();
        assert_eq!(m.x_idx, [0, 1]);
        assert!(m.w_subset_of_x);
        assert_eq!(m.gather_x(&[1.0, 2.0, 3.0]), [1.0, 2.0]);
        let bad = CovariateMapping::resolve(&cols, &["imd".to_string()], &[]);
        assert!(matches!(bad, Err(ModelError::UnknownCovariate(c)) if c == "imd"));
        let dup = CovariateMapping::resolve(&cols, &[cols[0].clone(), cols[0].clone()], &[]);
        assert!(matches!(dup, Err(ModelError::DuplicateCovariate(_))));
    }
}
