//! Finite-difference Hessians and their inversion.

use nalgebra::{Cholesky, DMatrix};

/// Per-coordinate step for central differences.
pub fn fd_step(x: f64) -> f64 {
    1e-4f64.max(1e-4 * x.abs())
}

/// Symmetrised Hessian from central differences of an analytic gradient.
/// `grad` writes the gradient of the function at its first argument.
pub fn hessian_from_gradient<G>(mut grad: G, x: &[f64]) -> DMatrix<f64>
where
    G: FnMut(&[f64], &mut [f64]),
{
    let n = x.len();
    let mut h = DMatrix::zeros(n, n);
    let mut xp = x.to_vec();
    let mut gp = vec![0.0; n];
    let mut gm = vec![0.0; n];
    for j in 0..n {
        let step = fd_step(x[j]);
        xp[j] = x[j] + step;
        grad(&xp, &mut gp);
        xp[j] = x[j] - step;
        grad(&xp, &mut gm);
        xp[j] = x[j];
        for i in 0..n {
            h[(i, j)] = (gp[i] - gm[i]) / (2.0 * step);
        }
    }
    symmetrize(&mut h);
    h
}

/// Symmetrised Hessian from function values only.
pub fn hessian_from_values<F>(mut f: F, x: &[f64]) -> DMatrix<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x.len();
    let mut h = DMatrix::zeros(n, n);
    let mut xp = x.to_vec();
    let f0 = f(x);
    let steps: Vec<f64> = x.iter().map(|&v| fd_step(v)).collect();
    for i in 0..n {
        let hi = steps[i];
        xp[i] = x[i] + hi;
        let fp = f(&xp);
        xp[i] = x[i] - hi;
        let fm = f(&xp);
        xp[i] = x[i];
        h[(i, i)] = (fp - 2.0 * f0 + fm) / (hi * hi);
        for j in 0..i {
            let hj = steps[j];
            let mut corner = |si: f64, sj: f64| {
                xp[i] = x[i] + si * hi;
                xp[j] = x[j] + sj * hj;
                let v = f(&xp);
                xp[i] = x[i];
                xp[j] = x[j];
                v
            };
            let v = (corner(1.0, 1.0) - corner(1.0, -1.0) - corner(-1.0, 1.0) + corner(-1.0, -1.0))
                / (4.0 * hi * hj);
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    h
}

fn symmetrize(h: &mut DMatrix<f64>) {
    let n = h.nrows();
    for i in 0..n {
        for j in 0..i {
            let m = 0.5 * (h[(i, j)] + h[(j, i)]);
            h[(i, j)] = m;
            h[(j, i)] = m;
        }
    }
}

/// Inverse of a symmetric positive-definite matrix, or `None` when the
/// matrix is not finite or not positive definite.
pub fn invert_spd(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if m.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let inv = Cholesky::new(m.clone())?.inverse();
    if inv.iter().all(|v| v.is_finite()) && (0..inv.nrows()).all(|i| inv[(i, i)] > 0.0) {
        Some(inv)
    } else {
        None
    }
}
