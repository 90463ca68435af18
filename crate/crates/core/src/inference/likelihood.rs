//! Classical and frailty log-likelihoods with analytic gradients on the
//! transformed parameter scale.
//!
//! Record `i` contributes
//!
//! ```text
//! delta_i ln(h_P,i + m(H_E) h_E) + ln L(H_E)
//! ```
//!
//! where `L` is the frailty Laplace transform and `m = -L'/L`; without a
//! frailty `m = 1` and `ln L(s) = -s`. The background survival factor has no
//! free parameters and is left out.

use crate::baseline::{BaselineKind, MAX_BASELINE_PARAMS};
use crate::data::{DataError, Dataset};
use crate::lifetable::LifeTable;
use crate::model::{CovariateMapping, FrailtyFamily, FrailtySpec, GhParams};

use super::ParamLayout;

/// Dataset flattened for repeated likelihood evaluation: covariates in
/// row-major blocks and the background hazard at exit precomputed.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub n: usize,
    pub n_x: usize,
    pub n_w: usize,
    pub time: Vec<f64>,
    pub log_time: Vec<f64>,
    pub status: Vec<bool>,
    pub pop_hazard: Vec<f64>,
    pub x: Vec<f64>,
    pub w: Vec<f64>,
}

impl Prepared {
    pub fn new(
        data: &Dataset,
        table: &LifeTable,
        mapping: &CovariateMapping,
    ) -> Result<Self, DataError> {
        data.check_keys(table)?;
        let n = data.len();
        let mut prep = Prepared {
            n,
            n_x: mapping.x_idx.len(),
            n_w: mapping.w_idx.len(),
            time: Vec::with_capacity(n),
            log_time: Vec::with_capacity(n),
            status: Vec::with_capacity(n),
            pop_hazard: Vec::with_capacity(n),
            x: Vec::with_capacity(n * mapping.x_idx.len()),
            w: Vec::with_capacity(n * mapping.w_idx.len()),
        };
        let mut rows = Vec::with_capacity(n);
        for (index, r) in data.records.iter().enumerate() {
            let key = table
                .resolve(&r.key)
                .map_err(|source| DataError::UnresolvableKey { index, source })?;
            let mut values = vec![r.time, f64::from(u8::from(r.status)), table.hazard_at(key, r.time)];
            values.extend(mapping.x_idx.iter().map(|&j| r.covariates[j]));
            values.extend(mapping.w_idx.iter().map(|&j| r.covariates[j]));
            rows.push(values);
        }
        // Canonical row order makes every sum over records, and so the
        // likelihood, exactly invariant to the order of the input.
        rows.sort_by(|a, b| {
            a.iter()
                .zip(b)
                .map(|(u, v)| u.total_cmp(v))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let n_x = prep.n_x;
        for v in rows {
            prep.time.push(v[0]);
            prep.log_time.push(v[0].ln());
            prep.status.push(v[1] == 1.0);
            prep.pop_hazard.push(v[2]);
            prep.x.extend_from_slice(&v[3..3 + n_x]);
            prep.w.extend_from_slice(&v[3 + n_x..]);
        }
        Ok(prep)
    }

    pub fn x_row(&self, i: usize) -> &[f64] {
        &self.x[i * self.n_x..(i + 1) * self.n_x]
    }

    pub fn w_row(&self, i: usize) -> &[f64] {
        &self.w[i * self.n_w..(i + 1) * self.n_w]
    }

    pub fn n_events(&self) -> usize {
        self.status.iter().filter(|&&s| s).count()
    }
}

/// Neumaier-compensated running sum.
#[derive(Debug, Default, Clone, Copy)]
pub(crate) struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub(crate) fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.carry += (self.sum - t) + v;
        } else {
            self.carry += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub(crate) fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// Log-likelihood at `(g, f)`; `-inf` if any contribution is not finite.
pub fn loglik_prepared(prep: &Prepared, g: &GhParams, f: &FrailtySpec) -> f64 {
    accumulate(prep, g, f, None)
}

/// Log-likelihood and its gradient with respect to the transformed vector
/// `psi` laid out by `layout`. Returns `-inf` (and leaves `grad` unspecified)
/// when the point is infeasible.
pub fn loglik_and_grad(prep: &Prepared, layout: &ParamLayout, psi: &[f64], grad: &mut [f64]) -> f64 {
    let Some((g, f)) = layout.unpack(psi) else {
        return f64::NEG_INFINITY;
    };
    accumulate(prep, &g, &f, Some((layout, grad)))
}

/// Value-only evaluation at a transformed vector.
pub fn loglik_psi(prep: &Prepared, layout: &ParamLayout, psi: &[f64]) -> f64 {
    match layout.unpack(psi) {
        Some((g, f)) => accumulate(prep, &g, &f, None),
        None => f64::NEG_INFINITY,
    }
}

fn accumulate(
    prep: &Prepared,
    g: &GhParams,
    f: &FrailtySpec,
    mut grad: Option<(&ParamLayout, &mut [f64])>,
) -> f64 {
    let n_theta = g.baseline.n_params();
    if let Some((_, gr)) = grad.as_mut() {
        gr.iter_mut().for_each(|v| *v = 0.0);
    }
    let with_b = f.family != FrailtyFamily::None;
    let b = f.variance;
    let mut total = CompensatedSum::default();

    for i in 0..prep.n {
        let x = prep.x_row(i);
        let w = prep.w_row(i);
        let (wa, xb) = g.predictors(x, w);
        let log_u = prep.log_time[i] + wa;
        let be = g.baseline.eval_log(log_u);
        let scale = (xb - wa).exp();
        let cum = be.cum_hazard * scale;
        let haz = (be.log_hazard + xb).exp();
        let terms = f.terms(cum);
        let event = prep.status[i];

        let mut contrib = terms.log_laplace;
        let mut inv_a = 0.0;
        if event {
            let a = prep.pop_hazard[i] + terms.mean * haz;
            contrib += a.ln();
            inv_a = 1.0 / a;
        }
        if !contrib.is_finite() {
            return f64::NEG_INFINITY;
        }
        total.add(contrib);

        let Some((layout, gr)) = grad.as_mut() else {
            continue;
        };
        // partials of the contribution with respect to H_E, h_E and b
        let (d_cum, d_haz, d_b) = if event {
            (
                haz * terms.dmean_ds * inv_a - terms.mean,
                terms.mean * inv_a,
                haz * terms.dmean_db * inv_a + terms.dlog_laplace_db,
            )
        } else {
            (-terms.mean, 0.0, terms.dlog_laplace_db)
        };

        let mut d_theta = [0.0; MAX_BASELINE_PARAMS];
        for (j, d) in d_theta.iter_mut().enumerate().take(n_theta) {
            *d = d_cum * be.d_cum_hazard[j] * scale + d_haz * haz * be.d_log_hazard[j];
        }
        for (j, d) in d_theta.iter().enumerate().take(n_theta) {
            gr[layout.theta_start() + j] += d;
        }
        let d_logu = d_cum * (be.d_cum_hazard_dlogu * scale - cum)
            + d_haz * haz * be.d_log_hazard_dlogu;
        let a0 = layout.alpha_start();
        // the PH submodel evaluates a layout without alpha on the full design
        for (k, wk) in w.iter().enumerate().take(layout.n_alpha) {
            gr[a0 + k] += d_logu * wk;
        }
        let d_xb = d_cum * cum + d_haz * haz;
        let b0 = layout.beta_start();
        for (k, xk) in x.iter().enumerate() {
            gr[b0 + k] += d_xb * xk;
        }
        if with_b {
            if let Some(ib) = layout.b_index() {
                gr[ib] += b * d_b;
            }
        }
    }
    total.value()
}

/// Log-likelihood of the model without frailty.
pub fn loglik_classical(
    data: &Dataset,
    table: &LifeTable,
    mapping: &CovariateMapping,
    g: &GhParams,
) -> Result<f64, DataError> {
    let prep = Prepared::new(data, table, mapping)?;
    Ok(loglik_prepared(&prep, g, &FrailtySpec::none()))
}

/// Log-likelihood of the frailty model, marginalised over the frailty law.
pub fn loglik_frailty(
    data: &Dataset,
    table: &LifeTable,
    mapping: &CovariateMapping,
    g: &GhParams,
    f: &FrailtySpec,
) -> Result<f64, DataError> {
    let prep = Prepared::new(data, table, mapping)?;
    Ok(loglik_prepared(&prep, g, f))
}

/// Default starting point for a PH fit without frailty: exponential-like
/// baseline matched to the crude event rate, zero coefficients.
pub(crate) fn crude_start(prep: &Prepared, layout: &ParamLayout) -> Vec<f64> {
    let total_time: f64 = prep.time.iter().sum();
    let events = prep.n_events().max(1) as f64;
    let mut psi = vec![0.0; layout.len()];
    match layout.baseline {
        BaselineKind::Pgw => {
            psi[0] = (total_time / events).ln();
        }
        BaselineKind::LogNormal => {
            let mut t = prep.time.clone();
            t.sort_by(f64::total_cmp);
            psi[0] = t[t.len() / 2].ln();
        }
    }
    psi
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baseline::{Baseline, PgwParams};
    use crate::data::PatientRecord;
    use crate::lifetable::LifeTableKey;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_data(rng: &mut ChaCha8Rng, n: usize) -> Dataset {
        let records = (0..n)
            .map(|_| PatientRecord {
                time: rng.random_range(0.05..5.0),
                status: rng.random_bool(0.6),
                covariates: vec![rng.random_range(-1.5..1.5), rng.random_bool(0.5) as u8 as f64],
                key: LifeTableKey::new(rng.random_range(40.0..85.0), 2011.0, vec![]),
            })
            .collect();
        Dataset::new(vec!["agec".into(), "sex".into()], vec![], records).unwrap()
    }

    fn gompertz_table() -> LifeTable {
        use crate::lifetable::Cell;
        let cells = (30..=100).map(|age| Cell {
            row: 0,
            age,
            year: 2011,
            stratum: vec![],
            rate: (-10.0 + 0.09 * age as f64).exp(),
        });
        LifeTable::from_cells(vec![], cells).unwrap()
    }

    fn layout(frailty: FrailtyFamily) -> ParamLayout {
        ParamLayout {
            baseline: BaselineKind::Pgw,
            frailty,
            n_alpha: 1,
            n_beta: 2,
        }
    }

    fn mapping(d: &Dataset) -> CovariateMapping {
        CovariateMapping::resolve(
            &d.covariate_names,
            &["agec".into(), "sex".into()],
            &["agec".into()],
        )
        .unwrap()
    }

    #[test]
    fn hand_evaluated_cases() {
        let table = LifeTable::constant(0.0).unwrap();
        let g = GhParams::new(
            vec![],
            vec![],
            Baseline::Pgw(PgwParams::new(1.0, 1.0, 1.0).unwrap()),
        )
        .unwrap();
        let rec = |status| PatientRecord {
            time: 2.0,
            status,
            covariates: vec![],
            key: LifeTableKey::new(60.0, 2010.0, vec![]),
        };
        let m = CovariateMapping::resolve(&[], &[], &[]).unwrap();
        let events = Dataset::new(vec![], vec![], vec![rec(true)]).unwrap();
        let ll = loglik_classical(&events, &table, &m, &g).unwrap();
        assert!((ll + 2.0).abs() < 1e-15);

        let censored = Dataset::new(vec![], vec![], vec![rec(false)]).unwrap();
        let ll = loglik_classical(&censored, &table, &m, &g).unwrap();
        assert!((ll + 2.0).abs() < 1e-15);

        // gamma b = 0.5 with H_E = 1 at t = 1
        let one = Dataset::new(
            vec![],
            vec![],
            vec![PatientRecord {
                time: 1.0,
                ..rec(false)
            }],
        )
        .unwrap();
        let ll = loglik_frailty(&one, &table, &m, &g, &FrailtySpec::gamma(0.5)).unwrap();
        assert!((ll + 2.0 * 1.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn matches_straight_line_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let data = random_data(&mut rng, 50);
        let table = gompertz_table();
        let m = mapping(&data);
        let g = GhParams::new(
            vec![0.4],
            vec![0.8, -0.3],
            Baseline::Pgw(PgwParams::new(0.9, 1.4, 3.0).unwrap()),
        )
        .unwrap();

        let mut naive = 0.0;
        for r in &data.records {
            let (agec, sex) = (r.covariates[0], r.covariates[1]);
            let u = r.time * (0.4 * agec).exp();
            let (s, nu, ga) = (0.9f64, 1.4f64, 3.0f64);
            let h0 = nu / (ga * s.powf(nu)) * u.powf(nu - 1.0)
                * (1.0 + (u / s).powf(nu)).powf(1.0 / ga - 1.0);
            let cap_h0 = (1.0 + (u / s).powf(nu)).powf(1.0 / ga) - 1.0;
            let he = h0 * (0.8 * agec - 0.3 * sex).exp();
            let cap_he = cap_h0 * (0.8 * agec - 0.3 * sex - 0.4 * agec).exp();
            let hp = table.pop_hazard(&r.key, r.time).unwrap();
            if r.status {
                naive += (hp + he).ln();
            }
            naive -= cap_he;
        }
        let ll = loglik_classical(&data, &table, &m, &g).unwrap();
        assert!((ll - naive).abs() < 1e-10, "{ll} vs {naive}");
    }

    #[test]
    fn analytic_gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let data = random_data(&mut rng, 80);
        let table = gompertz_table();
        let m = mapping(&data);
        for family in [FrailtyFamily::None, FrailtyFamily::Gamma, FrailtyFamily::InverseGaussian] {
            for kind in [BaselineKind::Pgw, BaselineKind::LogNormal] {
                let lay = ParamLayout {
                    baseline: kind,
                    ..layout(family)
                };
                let prep = Prepared::new(&data, &table, &m).unwrap();
                for _ in 0..5 {
                    let psi: Vec<f64> = (0..lay.len()).map(|_| rng.random_range(-0.7..0.7)).collect();
                    let mut grad = vec![0.0; lay.len()];
                    let ll = loglik_and_grad(&prep, &lay, &psi, &mut grad);
                    assert!(ll.is_finite());
                    assert_eq!(ll, loglik_psi(&prep, &lay, &psi));
                    for j in 0..lay.len() {
                        let h = 1e-5;
                        let mut up = psi.clone();
                        up[j] += h;
                        let mut dn = psi.clone();
                        dn[j] -= h;
                        let fd = (loglik_psi(&prep, &lay, &up) - loglik_psi(&prep, &lay, &dn))
                            / (2.0 * h);
                        assert!(
                            (grad[j] - fd).abs() < 1e-5 * (1.0 + fd.abs()),
                            "{family:?} {kind:?} j={j}: {} vs {fd}",
                            grad[j]
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn gradient_without_alpha_ignores_time_level_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let data = random_data(&mut rng, 80);
        let table = gompertz_table();
        let m = mapping(&data);
        let prep = Prepared::new(&data, &table, &m).unwrap();
        let lay = ParamLayout {
            n_alpha: 0,
            ..layout(FrailtyFamily::None)
        };
        let psi: Vec<f64> = (0..lay.len()).map(|_| rng.random_range(-0.5..0.5)).collect();
        let mut grad = vec![0.0; lay.len()];
        loglik_and_grad(&prep, &lay, &psi, &mut grad);
        for j in 0..lay.len() {
            let mut up = psi.clone();
            up[j] += 1e-5;
            let mut dn = psi.clone();
            dn[j] -= 1e-5;
            let fd = (loglik_psi(&prep, &lay, &up) - loglik_psi(&prep, &lay, &dn)) / 2e-5;
            assert!((grad[j] - fd).abs() < 1e-5 * (1.0 + fd.abs()), "j={j}: {} vs {fd}", grad[j]);
        }
    }

    #[test]
    fn frailty_limit_and_permutation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let data = random_data(&mut rng, 60);
        let table = gompertz_table();
        let m = mapping(&data);
        let g = GhParams::new(
            vec![-0.2],
            vec![0.5, 0.5],
            Baseline::Pgw(PgwParams::new(1.2, 0.8, 2.0).unwrap()),
        )
        .unwrap();
        let classical = loglik_classical(&data, &table, &m, &g).unwrap();
        for f in [FrailtySpec::gamma(1e-10), FrailtySpec::inverse_gaussian(1e-10)] {
            let fr = loglik_frailty(&data, &table, &m, &g, &f).unwrap();
            assert!((fr - classical).abs() < 1e-6);
        }
        let mut shuffled = data.clone();
        shuffled.records.reverse();
        let f = FrailtySpec::gamma(0.7);
        let a = loglik_frailty(&data, &table, &m, &g, &f).unwrap();
        let b = loglik_frailty(&shuffled, &table, &m, &g, &f).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn compensated_sum_is_exact_on_cancellation() {
        let mut s = CompensatedSum::default();
        for v in [1e16, 1.0, -1e16, 1.0] {
            s.add(v);
        }
        assert_eq!(s.value(), 2.0);
    }
}
