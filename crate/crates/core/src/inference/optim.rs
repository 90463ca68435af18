//! Quasi-Newton minimisation (BFGS with a strong-Wolfe line search).

#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Converged when the largest absolute gradient entry falls below this.
    pub grad_tol: f64,
    /// Accept a stalled line search as converged below this gradient norm.
    pub stall_grad_tol: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            max_iter: 2000,
            grad_tol: 1e-6,
            stall_grad_tol: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Gradient,
    /// No further decrease possible but gradient was small enough.
    Stalled,
    /// Line search failed with a large gradient.
    LineSearchFailed,
    MaxIterations,
    /// The starting point is infeasible.
    BadStart,
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub termination: Termination,
}

impl Minimum {
    pub fn converged(&self) -> bool {
        matches!(self.termination, Termination::Gradient | Termination::Stalled)
    }

    pub fn grad_norm(&self) -> f64 {
        inf_norm(&self.grad)
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimises `f`, which writes the gradient into its second argument and
/// returns the value (`+inf` or NaN marks an infeasible point).
pub fn minimize<F>(mut f: F, x0: &[f64], opts: &BfgsOptions) -> Minimum
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut fx = f(&x, &mut g);
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Minimum {
            x,
            value: fx,
            grad: g,
            iterations: 0,
            termination: Termination::BadStart,
        };
    }
    // inverse Hessian approximation, row-major
    let mut hinv = identity(n);
    let mut first = true;
    let mut dir = vec![0.0; n];
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];

    for iter in 0..opts.max_iter {
        if inf_norm(&g) <= opts.grad_tol {
            return done(x, fx, g, iter, Termination::Gradient);
        }
        for i in 0..n {
            dir[i] = -dot(&hinv[i * n..(i + 1) * n], &g);
        }
        let mut slope = dot(&dir, &g);
        if !(slope < 0.0) {
            hinv = identity(n);
            dir.iter_mut().zip(&g).for_each(|(d, gi)| *d = -gi);
            slope = dot(&dir, &g);
            first = true;
        }
        // scale the very first step so it moves at most one unit
        let step0 = if first { (1.0 / inf_norm(&dir)).min(1.0) } else { 1.0 };
        let ls = line_search(&mut f, &x, fx, slope, &dir, step0, &mut x_new, &mut g_new);
        let Some(fnew) = ls else {
            if !first {
                hinv = identity(n);
                first = true;
                continue;
            }
            let term = if inf_norm(&g) <= opts.stall_grad_tol {
                Termination::Stalled
            } else {
                Termination::LineSearchFailed
            };
            return done(x, fx, g, iter, term);
        };
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        let decrease = fx - fnew;
        x.copy_from_slice(&x_new);
        g.copy_from_slice(&g_new);
        fx = fnew;
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if first {
                let scale = sy / dot(&y, &y);
                hinv.iter_mut().for_each(|v| *v *= scale);
                first = false;
            }
            bfgs_update(&mut hinv, &s, &y, sy);
        }
        if decrease.abs() <= f64::EPSILON * fx.abs() && inf_norm(&g) <= opts.stall_grad_tol {
            return done(x, fx, g, iter + 1, Termination::Stalled);
        }
    }
    let term = if inf_norm(&g) <= opts.grad_tol {
        Termination::Gradient
    } else {
        Termination::MaxIterations
    };
    done(x, fx, g, opts.max_iter, term)
}

fn done(x: Vec<f64>, value: f64, grad: Vec<f64>, iterations: usize, termination: Termination) -> Minimum {
    Minimum {
        x,
        value,
        grad,
        iterations,
        termination,
    }
}

fn identity(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = 1.0;
    }
    m
}

fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..n).map(|i| dot(&h[i * n..(i + 1) * n], y)).collect();
    let yhy = dot(y, &hy);
    let c = (1.0 + rho * yhy) * rho;
    for i in 0..n {
        for j in 0..n {
            h[i * n + j] += c * s[i] * s[j] - rho * (hy[i] * s[j] + s[i] * hy[j]);
        }
    }
}

const C1: f64 = 1e-4;
const C2: f64 = 0.9;

/// Strong-Wolfe line search along `dir`; on success `x_new`/`g_new` hold the
/// accepted point and the new value is returned.
#[allow(clippy::too_many_arguments)]
fn line_search<F>(
    f: &mut F,
    x: &[f64],
    f0: f64,
    slope0: f64,
    dir: &[f64],
    step0: f64,
    x_new: &mut [f64],
    g_new: &mut [f64],
) -> Option<f64>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let mut eval = |a: f64, xn: &mut [f64], gn: &mut [f64]| -> Point {
        for i in 0..x.len() {
            xn[i] = x[i] + a * dir[i];
        }
        let v = f(xn, gn);
        if !v.is_finite() || gn.iter().any(|g| !g.is_finite()) {
            return Point { a, f: f64::INFINITY, d: f64::NAN };
        }
        Point { a, f: v, d: dot(gn, dir) }
    };
    let origin = Point { a: 0.0, f: f0, d: slope0 };
    let mut prev = origin;
    let mut a = step0;
    for i in 0..50 {
        let p = eval(a, x_new, g_new);
        let sufficient = p.f <= f0 + C1 * a * slope0;
        if !sufficient || (i > 0 && p.f >= prev.f) {
            return zoom(&mut eval, origin, prev, p, x_new, g_new);
        }
        if p.d.abs() <= -C2 * slope0 {
            return Some(p.f);
        }
        if p.d >= 0.0 {
            return zoom(&mut eval, origin, p, prev, x_new, g_new);
        }
        prev = p;
        a *= 2.0;
    }
    None
}

#[derive(Debug, Clone, Copy)]
struct Point {
    a: f64,
    f: f64,
    d: f64,
}

/// Minimiser of the cubic through two points with slopes, if it lies
/// strictly inside the bracket.
fn cubic_min(p: Point, q: Point) -> Option<f64> {
    if !(p.f.is_finite() && q.f.is_finite() && p.d.is_finite() && q.d.is_finite()) {
        return None;
    }
    let d1 = p.d + q.d - 3.0 * (p.f - q.f) / (p.a - q.a);
    let disc = d1 * d1 - p.d * q.d;
    if disc < 0.0 {
        return None;
    }
    let d2 = (q.a - p.a).signum() * disc.sqrt();
    let a = q.a - (q.a - p.a) * (q.d + d2 - d1) / (q.d - p.d + 2.0 * d2);
    a.is_finite().then_some(a)
}

fn zoom<E>(
    eval: &mut E,
    origin: Point,
    mut lo: Point,
    mut hi: Point,
    x_new: &mut [f64],
    g_new: &mut [f64],
) -> Option<f64>
where
    E: FnMut(f64, &mut [f64], &mut [f64]) -> Point,
{
    for _ in 0..60 {
        let width = (hi.a - lo.a).abs();
        if width <= 1e-14 * lo.a.abs().max(hi.a.abs()) {
            break;
        }
        let (left, right) = (lo.a.min(hi.a), lo.a.max(hi.a));
        let mut a = cubic_min(lo, hi).unwrap_or(f64::NAN);
        if !(a > left + 0.1 * width && a < right - 0.1 * width) {
            a = 0.5 * (lo.a + hi.a);
        }
        let p = eval(a, x_new, g_new);
        if p.f > origin.f + C1 * a * origin.d || p.f >= lo.f {
            hi = p;
        } else {
            if p.d.abs() <= -C2 * origin.d {
                return Some(p.f);
            }
            if p.d * (hi.a - lo.a) >= 0.0 {
                hi = lo;
            }
            lo = p;
        }
    }
    // settle for the best sufficient-decrease point found
    if lo.a > 0.0 && lo.f < origin.f {
        let p = eval(lo.a, x_new, g_new);
        return Some(p.f);
    }
    None
}
