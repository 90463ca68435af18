//! Parametric baseline hazards.
//!
//! The Power Generalised Weibull (PGW) family is the workhorse: with scale
//! `sigma` and shapes `nu`, `gamma` it has
//!
//! ```text
//! h0(t) = nu / (gamma sigma^nu) t^(nu-1) (1 + (t/sigma)^nu)^(1/gamma - 1)
//! H0(t) = (1 + (t/sigma)^nu)^(1/gamma) - 1
//! ```
//!
//! and covers increasing, decreasing, unimodal and bathtub hazards. The
//! two-parameter Log-Normal is offered as a simpler unimodal alternative.
//! Further families plug in by adding a [`Baseline`] variant.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum BaselineError {
    #[error("PGW parameters must be positive and finite (sigma={sigma}, nu={nu}, gamma={gamma})")]
    InvalidPgw { sigma: f64, nu: f64, gamma: f64 },
    #[error("log-normal log-sd must be positive and finite, got {0}")]
    InvalidLogSd(f64),
    #[error("log-normal log-mean must be finite, got {0}")]
    InvalidLogMean(f64),
    #[error("time must be positive, got {0}")]
    NonPositiveTime(f64),
    #[error("time must be non-negative, got {0}")]
    NegativeTime(f64),
    #[error("cumulative hazard target must be non-negative, got {0}")]
    NegativeTarget(f64),
    #[error("expected {expected} baseline parameters, got {actual}")]
    ParameterCount { expected: usize, actual: usize },
}

/// Maximum number of parameters of any baseline family.
pub const MAX_BASELINE_PARAMS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PgwParams {
    pub sigma: f64,
    pub nu: f64,
    pub gamma: f64,
}

impl PgwParams {
    pub fn new(sigma: f64, nu: f64, gamma: f64) -> Result<Self, BaselineError> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if ok(sigma) && ok(nu) && ok(gamma) {
            Ok(Self { sigma, nu, gamma })
        } else {
            Err(BaselineError::InvalidPgw { sigma, nu, gamma })
        }
    }

    /// `ln(1 + (t/sigma)^nu)` from `ln(t/sigma)^nu`, safe for huge ratios.
    fn log1p_z(log_z: f64) -> f64 {
        softplus(log_z)
    }

    pub fn hazard(&self, t: f64) -> f64 {
        self.log_hazard(t).exp()
    }

    pub fn log_hazard(&self, t: f64) -> f64 {
        let Self { sigma, nu, gamma } = *self;
        let log_t = t.ln();
        let l = Self::log1p_z(nu * (log_t - sigma.ln()));
        nu.ln() - gamma.ln() - nu * sigma.ln() + (nu - 1.0) * log_t + (1.0 / gamma - 1.0) * l
    }

    pub fn cum_hazard(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        let l = Self::log1p_z(self.nu * (t.ln() - self.sigma.ln()));
        (l / self.gamma).exp_m1()
    }

    /// Time at which the cumulative hazard reaches `q`.
    pub fn quantile(&self, q: f64) -> f64 {
        if q <= 0.0 {
            return 0.0;
        }
        // sigma * ((1+q)^gamma - 1)^(1/nu), evaluated in log space
        let x = self.gamma * q.ln_1p();
        let log_inner = if x > 35.0 { x + (-(-x).exp()).ln_1p() } else { x.exp_m1().ln() };
        self.sigma * (log_inner / self.nu).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogNormalParams {
    pub log_mean: f64,
    pub log_sd: f64,
}

impl LogNormalParams {
    pub fn new(log_mean: f64, log_sd: f64) -> Result<Self, BaselineError> {
        if !log_mean.is_finite() {
            return Err(BaselineError::InvalidLogMean(log_mean));
        }
        if !(log_sd.is_finite() && log_sd > 0.0) {
            return Err(BaselineError::InvalidLogSd(log_sd));
        }
        Ok(Self { log_mean, log_sd })
    }

    fn z(&self, t: f64) -> f64 {
        (t.ln() - self.log_mean) / self.log_sd
    }

    pub fn hazard(&self, t: f64) -> f64 {
        self.log_hazard(t).exp()
    }

    pub fn log_hazard(&self, t: f64) -> f64 {
        let z = self.z(t);
        inverse_mills(z).ln() - self.log_sd.ln() - t.ln()
    }

    pub fn cum_hazard(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        -log_normal_sf(self.z(t))
    }

    /// Time at which the cumulative hazard reaches `q`, by bisection on
    /// log-time.
    pub fn quantile(&self, q: f64) -> f64 {
        if q <= 0.0 {
            return 0.0;
        }
        let (mut lo, mut hi) = (-40.0, 40.0);
        while -log_normal_sf(hi) < q {
            lo = hi;
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if -log_normal_sf(mid) < q {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-15 * mid.abs().max(1.0) {
                break;
            }
        }
        (self.log_mean + self.log_sd * 0.5 * (lo + hi)).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    Pgw,
    LogNormal,
}

impl BaselineKind {
    pub fn n_params(self) -> usize {
        match self {
            BaselineKind::Pgw => 3,
            BaselineKind::LogNormal => 2,
        }
    }

    /// Names of the natural-scale parameters.
    pub fn param_names(self) -> &'static [&'static str] {
        match self {
            BaselineKind::Pgw => &["sigma", "nu", "gamma"],
            BaselineKind::LogNormal => &["log_mean", "log_sd"],
        }
    }

    /// Which natural parameters are optimised on the log scale.
    pub fn log_transformed(self) -> &'static [bool] {
        match self {
            BaselineKind::Pgw => &[true, true, true],
            BaselineKind::LogNormal => &[false, true],
        }
    }
}

impl std::str::FromStr for BaselineKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "pgw" => Ok(BaselineKind::Pgw),
            "lognormal" | "log-normal" => Ok(BaselineKind::LogNormal),
            other => Err(format!("unknown baseline `{other}` (expected pgw or lognormal)")),
        }
    }
}

impl std::fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BaselineKind::Pgw => "pgw",
            BaselineKind::LogNormal => "lognormal",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum Baseline {
    Pgw(PgwParams),
    LogNormal(LogNormalParams),
}

/// Baseline quantities at `u` with derivatives with respect to the
/// transformed parameters and to `ln u`.
#[derive(Debug, Clone, Copy, Default)]
pub struct BaselineEval {
    pub log_hazard: f64,
    pub cum_hazard: f64,
    pub d_log_hazard: [f64; MAX_BASELINE_PARAMS],
    pub d_cum_hazard: [f64; MAX_BASELINE_PARAMS],
    pub d_log_hazard_dlogu: f64,
    pub d_cum_hazard_dlogu: f64,
}

impl Baseline {
    pub fn kind(&self) -> BaselineKind {
        match self {
            Baseline::Pgw(_) => BaselineKind::Pgw,
            Baseline::LogNormal(_) => BaselineKind::LogNormal,
        }
    }

    pub fn n_params(&self) -> usize {
        self.kind().n_params()
    }

    pub fn hazard(&self, t: f64) -> f64 {
        match self {
            Baseline::Pgw(p) => p.hazard(t),
            Baseline::LogNormal(p) => p.hazard(t),
        }
    }

    pub fn log_hazard(&self, t: f64) -> f64 {
        match self {
            Baseline::Pgw(p) => p.log_hazard(t),
            Baseline::LogNormal(p) => p.log_hazard(t),
        }
    }

    pub fn cum_hazard(&self, t: f64) -> f64 {
        match self {
            Baseline::Pgw(p) => p.cum_hazard(t),
            Baseline::LogNormal(p) => p.cum_hazard(t),
        }
    }

    pub fn quantile(&self, q: f64) -> f64 {
        match self {
            Baseline::Pgw(p) => p.quantile(q),
            Baseline::LogNormal(p) => p.quantile(q),
        }
    }

    pub fn survival(&self, t: f64) -> f64 {
        (-self.cum_hazard(t)).exp()
    }

    /// Distribution-function inverse: the time `t` with `F0(t) = p`.
    pub fn inverse_cdf(&self, p: f64) -> f64 {
        self.quantile(-(-p).ln_1p())
    }

    /// Natural-scale parameters in [`BaselineKind::param_names`] order.
    pub fn natural(&self) -> Vec<f64> {
        match *self {
            Baseline::Pgw(p) => vec![p.sigma, p.nu, p.gamma],
            Baseline::LogNormal(p) => vec![p.log_mean, p.log_sd],
        }
    }

    pub fn transformed(&self) -> Vec<f64> {
        match *self {
            Baseline::Pgw(p) => vec![p.sigma.ln(), p.nu.ln(), p.gamma.ln()],
            Baseline::LogNormal(p) => vec![p.log_mean, p.log_sd.ln()],
        }
    }

    pub fn from_natural(kind: BaselineKind, v: &[f64]) -> Result<Self, BaselineError> {
        check_len(kind, v)?;
        match kind {
            BaselineKind::Pgw => PgwParams::new(v[0], v[1], v[2]).map(Baseline::Pgw),
            BaselineKind::LogNormal => LogNormalParams::new(v[0], v[1]).map(Baseline::LogNormal),
        }
    }

    pub fn from_transformed(kind: BaselineKind, v: &[f64]) -> Result<Self, BaselineError> {
        check_len(kind, v)?;
        match kind {
            BaselineKind::Pgw => {
                PgwParams::new(v[0].exp(), v[1].exp(), v[2].exp()).map(Baseline::Pgw)
            }
            BaselineKind::LogNormal => {
                LogNormalParams::new(v[0], v[1].exp()).map(Baseline::LogNormal)
            }
        }
    }

    /// Value and gradient information at `u = exp(log_u)`.
    pub fn eval_log(&self, log_u: f64) -> BaselineEval {
        match *self {
            Baseline::Pgw(p) => pgw_eval(&p, log_u),
            Baseline::LogNormal(p) => lognormal_eval(&p, log_u),
        }
    }
}

fn check_len(kind: BaselineKind, v: &[f64]) -> Result<(), BaselineError> {
    if v.len() == kind.n_params() {
        Ok(())
    } else {
        Err(BaselineError::ParameterCount {
            expected: kind.n_params(),
            actual: v.len(),
        })
    }
}

fn pgw_eval(p: &PgwParams, log_u: f64) -> BaselineEval {
    let PgwParams { sigma, nu, gamma } = *p;
    let log_sigma = sigma.ln();
    let log_z = nu * (log_u - log_sigma);
    let l = softplus(log_z);
    // z / (1 + z)
    let frac = logistic(log_z);
    let inv_gamma = 1.0 / gamma;
    let pow = (l * inv_gamma).exp();
    let cum = (l * inv_gamma).exp_m1();

    // d z / d(ln sigma) = -nu z ; d z / d(ln nu) = log_z z ; d z / d(ln u) = nu z
    // dH0/dz = pow / (gamma (1+z)), so dH0 = pow/gamma * frac * d(ln z)
    let dcum_dlogz = pow * inv_gamma * frac;
    let dlogh_dlogz = (inv_gamma - 1.0) * frac;

    let mut out = BaselineEval {
        log_hazard: nu.ln() - gamma.ln() - nu * log_sigma
            + (nu - 1.0) * log_u
            + (inv_gamma - 1.0) * l,
        cum_hazard: cum,
        ..BaselineEval::default()
    };
    out.d_cum_hazard = [
        dcum_dlogz * (-nu),
        dcum_dlogz * log_z,
        -pow * l * inv_gamma,
    ];
    out.d_log_hazard = [
        -nu + dlogh_dlogz * (-nu),
        1.0 + nu * (log_u - log_sigma) + dlogh_dlogz * log_z,
        -1.0 - l * inv_gamma,
    ];
    out.d_cum_hazard_dlogu = dcum_dlogz * nu;
    out.d_log_hazard_dlogu = (nu - 1.0) + dlogh_dlogz * nu;
    out
}

fn lognormal_eval(p: &LogNormalParams, log_u: f64) -> BaselineEval {
    let s = p.log_sd;
    let z = (log_u - p.log_mean) / s;
    let r = inverse_mills(z);
    // dH/dz = r ; d ln h / dz = r - z
    let dlh = r - z;
    let mut out = BaselineEval {
        log_hazard: r.ln() - s.ln() - log_u,
        cum_hazard: -log_normal_sf(z),
        ..BaselineEval::default()
    };
    // dz/d(mu) = -1/s ; dz/d(ln s) = -z ; dz/d(ln u) = 1/s
    out.d_cum_hazard = [-r / s, -r * z, 0.0];
    out.d_log_hazard = [-dlh / s, -dlh * z - 1.0, 0.0];
    out.d_cum_hazard_dlogu = r / s;
    out.d_log_hazard_dlogu = dlh / s - 1.0;
    out
}

/// `ln(1 + e^x)` without overflow.
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 35.0 {
        x + (-x).exp()
    } else {
        x.exp().ln_1p()
    }
}

/// `1 / (1 + e^-x)`.
pub(crate) fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// `ln P(Z > z)` for a standard normal `Z`.
pub(crate) fn log_normal_sf(z: f64) -> f64 {
    if z < 0.0 {
        // lower tail mass is small here; keep its digits
        (-0.5 * erfc(-z / std::f64::consts::SQRT_2)).ln_1p()
    } else if z < 30.0 {
        (0.5 * erfc(z / std::f64::consts::SQRT_2)).ln()
    } else {
        // asymptotic Mills-ratio expansion
        let z2 = z * z;
        let u = 1.0 / z2;
        -0.5 * z2 - z.ln() - LN_SQRT_2PI + (u * (-1.0 + u * (3.0 + u * (-15.0 + 105.0 * u)))).ln_1p()
    }
}

/// `phi(z) / P(Z > z)`.
pub(crate) fn inverse_mills(z: f64) -> f64 {
    let log_phi = -0.5 * z * z - LN_SQRT_2PI;
    (log_phi - log_normal_sf(z)).exp()
}

/// Checked PGW hazard.
pub fn pgw_hazard(t: f64, p: &PgwParams) -> Result<f64, BaselineError> {
    PgwParams::new(p.sigma, p.nu, p.gamma)?;
    if !(t > 0.0) {
        return Err(BaselineError::NonPositiveTime(t));
    }
    Ok(p.hazard(t))
}

/// Checked PGW cumulative hazard.
pub fn pgw_cum_hazard(t: f64, p: &PgwParams) -> Result<f64, BaselineError> {
    PgwParams::new(p.sigma, p.nu, p.gamma)?;
    if !(t >= 0.0) {
        return Err(BaselineError::NegativeTime(t));
    }
    Ok(p.cum_hazard(t))
}

/// Checked PGW inverse cumulative hazard.
pub fn pgw_quantile(q: f64, p: &PgwParams) -> Result<f64, BaselineError> {
    PgwParams::new(p.sigma, p.nu, p.gamma)?;
    if !(q >= 0.0) {
        return Err(BaselineError::NegativeTarget(q));
    }
    Ok(p.quantile(q))
}

pub fn lognormal_hazard(t: f64, p: &LogNormalParams) -> Result<f64, BaselineError> {
    LogNormalParams::new(p.log_mean, p.log_sd)?;
    if !(t > 0.0) {
        return Err(BaselineError::NonPositiveTime(t));
    }
    Ok(p.hazard(t))
}

pub fn lognormal_cum_hazard(t: f64, p: &LogNormalParams) -> Result<f64, BaselineError> {
    LogNormalParams::new(p.log_mean, p.log_sd)?;
    if !(t >= 0.0) {
        return Err(BaselineError::NegativeTime(t));
    }
    Ok(p.cum_hazard(t))
}

pub fn lognormal_quantile(q: f64, p: &LogNormalParams) -> Result<f64, BaselineError> {
    LogNormalParams::new(p.log_mean, p.log_sd)?;
    if !(q >= 0.0) {
        return Err(BaselineError::NegativeTarget(q));
    }
    Ok(p.quantile(q))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pgw(s: f64, n: f64, g: f64) -> PgwParams {
        PgwParams::new(s, n, g).unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    // Adaptive Simpson, kept here as an oracle independent of the closed forms.
    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
        fn rec<F: Fn(f64) -> f64>(
            f: &F,
            a: f64,
            b: f64,
            fa: f64,
            fm: f64,
            fb: f64,
            whole: f64,
            tol: f64,
            depth: u32,
        ) -> f64 {
            let m = 0.5 * (a + b);
            let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
            let (flm, frm) = (f(lm), f(rm));
            let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
                return left + right + (left + right - whole) / 15.0;
            }
            rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
        let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
        let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
        rec(f, a, b, fa, fm, fb, whole, tol, 50)
    }

    #[test]
    fn pgw_quantile_survives_large_cumulative_hazard() {
        let p = pgw(0.75, 1.75, 8.0);
        for q in [10.0, 46.0, 1e3, 1e6, 1e12] {
            let t = p.quantile(q);
            assert!(t.is_finite() && t > 0.0, "q = {q}: t = {t}");
            assert!(rel(p.cum_hazard(t), q) < 1e-10, "q = {q}");
        }
    }

    #[test]
    fn lognormal_quantile_reaches_far_tail() {
        let p = LogNormalParams::new(0.5, 0.8).unwrap();
        for q in [1e-6, 1.0, 500.0, 2159.0, 1e5] {
            let t = p.quantile(q);
            assert!(t.is_finite() && t > 0.0, "q = {q}: t = {t}");
            assert!(rel(p.cum_hazard(t), q) < 1e-10, "q = {q}");
        }
        // the two branches of the log survival agree where they meet
        let below = log_normal_sf(30.0 - 1e-12);
        assert!((log_normal_sf(30.0) - below).abs() < 1e-9, "{below} vs {}", log_normal_sf(30.0));
    }

    #[test]
    fn pgw_degenerate_cases() {
        assert!((pgw_hazard(3.0, &pgw(1.0, 1.0, 1.0)).unwrap() - 1.0).abs() < 1e-15);
        assert!((pgw_hazard(1.0, &pgw(2.0, 2.0, 1.0)).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(pgw_cum_hazard(0.0, &pgw(0.75, 1.75, 8.0)).unwrap(), 0.0);
        assert!((pgw_cum_hazard(2.0, &pgw(1.0, 1.0, 1.0)).unwrap() - 2.0).abs() < 1e-15);
        assert_eq!(pgw_quantile(0.0, &pgw(0.75, 1.75, 8.0)).unwrap(), 0.0);
        assert!((pgw_quantile(2.0, &pgw(1.0, 1.0, 1.0)).unwrap() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn pgw_errors() {
        assert!(PgwParams::new(0.0, 1.0, 1.0).is_err());
        assert!(PgwParams::new(1.0, -1.0, 1.0).is_err());
        assert!(PgwParams::new(1.0, 1.0, f64::NAN).is_err());
        let p = pgw(1.0, 1.0, 1.0);
        assert_eq!(pgw_hazard(0.0, &p), Err(BaselineError::NonPositiveTime(0.0)));
        assert!(pgw_cum_hazard(-1.0, &p).is_err());
        assert!(pgw_quantile(-0.1, &p).is_err());
        let bad = PgwParams { sigma: -1.0, nu: 1.0, gamma: 1.0 };
        assert!(pgw_hazard(1.0, &bad).is_err());
    }

    #[test]
    fn sc1_baseline_values_against_oracles() {
        let p = pgw(0.75, 1.75, 8.0);
        // derivative of the cumulative hazard at t = 1 (Richardson-extrapolated
        // central differences)
        let d = |h: f64| (p.cum_hazard(1.0 + h) - p.cum_hazard(1.0 - h)) / (2.0 * h);
        let fd = (4.0 * d(1e-3) - d(2e-3)) / 3.0;
        let v = pgw_hazard(1.0, &p).unwrap();
        assert!(rel(v, fd) < 1e-9, "{v} vs {fd}");
        // frozen from 30-digit differentiation of H0 at t = 1
        assert!(rel(v, 0.154_034_868_260_428_54) < 1e-12, "{v:.16}");

        let quad = simpson(&|t| p.hazard(t), 0.0, 1.0, 1e-13);
        let cum = pgw_cum_hazard(1.0, &p).unwrap();
        assert!(rel(cum, quad) < 1e-10, "{cum} vs {quad}");
        // frozen from 30-digit quadrature of h0 over (0, 1]
        assert!(rel(cum, 0.129_785_438_037_819_78) < 1e-12, "{cum:.17}");
    }

    #[test]
    fn reductions() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let t: f64 = rng.random_range(0.01..10.0);
            let (s, n) = (rng.random_range(0.2..3.0), rng.random_range(0.3..3.0));
            let weib = pgw(s, n, 1.0);
            let h = n / s * (t / s).powf(n - 1.0);
            assert!(rel(weib.hazard(t), h) < 1e-12);
            assert!(rel(weib.cum_hazard(t), (t / s).powf(n)) < 1e-12);
            let expo = pgw(s, 1.0, 1.0);
            assert!(rel(expo.hazard(t), 1.0 / s) < 1e-12);
            assert!(rel(expo.cum_hazard(t), t / s) < 1e-12);
        }
    }

    fn families(rng: &mut ChaCha8Rng) -> Vec<Baseline> {
        vec![
            Baseline::Pgw(pgw(
                rng.random_range(0.2..3.0),
                rng.random_range(0.4..3.0),
                rng.random_range(0.2..10.0),
            )),
            Baseline::LogNormal(
                LogNormalParams::new(rng.random_range(-1.0..2.0), rng.random_range(0.3..2.0))
                    .unwrap(),
            ),
        ]
    }

    #[test]
    fn hazard_is_derivative_of_cum_hazard() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let t: f64 = rng.random_range(0.05..6.0);
            for b in families(&mut rng) {
                let h = 1e-5 * t;
                let fd = (b.cum_hazard(t + h) - b.cum_hazard(t - h)) / (2.0 * h);
                assert!(rel(b.hazard(t), fd) < 1e-6, "{b:?} t={t}");
            }
        }
    }

    #[test]
    fn quantile_inverts_cum_hazard() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..50 {
            let t: f64 = rng.random_range(0.01..8.0);
            for b in families(&mut rng) {
                let tol = match b {
                    Baseline::Pgw(_) => 1e-9,
                    Baseline::LogNormal(_) => 1e-7,
                };
                assert!(rel(b.quantile(b.cum_hazard(t)), t) < tol, "{b:?} t={t}");
                let q: f64 = rng.random_range(0.0..6.0);
                if let Baseline::Pgw(_) = b {
                    assert!(rel(b.cum_hazard(b.quantile(q)), q) < 1e-10);
                }
            }
        }
    }

    #[test]
    fn lognormal_median() {
        let p = LogNormalParams::new(0.7, 1.3).unwrap();
        let median = 0.7f64.exp();
        assert!((p.cum_hazard(median) - 2f64.ln()).abs() < 1e-14);
        assert_eq!(lognormal_cum_hazard(0.0, &p).unwrap(), 0.0);
        assert!(rel(lognormal_quantile(2f64.ln(), &p).unwrap(), median) < 1e-12);
        assert!(LogNormalParams::new(0.0, 0.0).is_err());
        assert!(lognormal_hazard(1.0, &LogNormalParams { log_mean: 0.0, log_sd: -1.0 }).is_err());
    }

    #[test]
    fn far_tail_is_finite() {
        let p = pgw(0.75, 1.75, 8.0);
        assert!(p.cum_hazard(1e200).is_finite());
        assert!(p.quantile(1e6).is_finite());
        let ln = LogNormalParams::new(0.0, 0.5).unwrap();
        assert!(ln.hazard(1e30).is_finite());
        assert!(ln.cum_hazard(1e30).is_finite());
    }

    #[test]
    fn analytic_parameter_derivatives() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..30 {
            let log_u: f64 = rng.random_range(-3.0..2.5);
            for b in families(&mut rng) {
                let kind = b.kind();
                let psi = b.transformed();
                let e = b.eval_log(log_u);
                for j in 0..kind.n_params() {
                    let h = 1e-6;
                    let mut up = psi.clone();
                    up[j] += h;
                    let mut dn = psi.clone();
                    dn[j] -= h;
                    let bu = Baseline::from_transformed(kind, &up).unwrap();
                    let bd = Baseline::from_transformed(kind, &dn).unwrap();
                    let fd_h = (bu.eval_log(log_u).cum_hazard - bd.eval_log(log_u).cum_hazard)
                        / (2.0 * h);
                    let fd_lh = (bu.eval_log(log_u).log_hazard - bd.eval_log(log_u).log_hazard)
                        / (2.0 * h);
                    assert!((e.d_cum_hazard[j] - fd_h).abs() < 1e-6 * (1.0 + fd_h.abs()));
                    assert!((e.d_log_hazard[j] - fd_lh).abs() < 1e-6 * (1.0 + fd_lh.abs()));
                }
                let h = 1e-6;
                let fd_h = (b.eval_log(log_u + h).cum_hazard - b.eval_log(log_u - h).cum_hazard)
                    / (2.0 * h);
                let fd_lh = (b.eval_log(log_u + h).log_hazard
                    - b.eval_log(log_u - h).log_hazard)
                    / (2.0 * h);
                assert!((e.d_cum_hazard_dlogu - fd_h).abs() < 1e-6 * (1.0 + fd_h.abs()));
                assert!((e.d_log_hazard_dlogu - fd_lh).abs() < 1e-6 * (1.0 + fd_lh.abs()));
                assert!(rel(e.log_hazard, b.log_hazard(log_u.exp())) < 1e-12);
                assert!(rel(e.cum_hazard, b.cum_hazard(log_u.exp())) < 1e-12);
            }
        }
    }
}
