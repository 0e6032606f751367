//! Deterministic L-BFGS with two-loop recursion, bounded curvature-pair
//! history and a strong Wolfe line search with cubic interpolation.

use crate::error::{Error, Result};
use crate::numerics::{axpy, dot, norm};
use std::collections::VecDeque;

#[derive(Debug, Clone)]
pub struct LbfgsOptions {
    /// Number of retained curvature pairs.
    pub history: usize,
    pub max_iters: usize,
    /// Stop when ||g|| <= g_tol * max(1, ||x||).
    pub g_tol: f64,
    pub c1: f64,
    pub c2: f64,
    pub max_line_search: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        LbfgsOptions {
            history: 9,
            max_iters: 1000,
            g_tol: 1e-8,
            c1: 1e-4,
            c2: 0.9,
            max_line_search: 25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    GradientTolerance,
    MaxIterations,
    LineSearchFailure,
}

#[derive(Debug, Clone)]
pub struct LbfgsReport {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub func_evals: usize,
    pub stop: StopReason,
    /// Loss at x0 followed by each accepted iterate; non-increasing.
    pub trace: Vec<f64>,
}

/// Curvature-pair buffer. Pairs failing s'y > 1e-10 ||s|| ||y|| are refused.
#[derive(Debug, Clone, Default)]
pub struct History {
    capacity: usize,
    s: VecDeque<Vec<f64>>,
    y: VecDeque<Vec<f64>>,
    rho: VecDeque<f64>,
}

const CURVATURE_TOL: f64 = 1e-10;

impl History {
    pub fn new(capacity: usize) -> Self {
        History {
            capacity,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    pub fn clear(&mut self) {
        self.s.clear();
        self.y.clear();
        self.rho.clear();
    }

    /// Stores the pair if it passes the curvature filter.
    pub fn push(&mut self, s: Vec<f64>, y: Vec<f64>) -> bool {
        let sy = dot(&s, &y);
        if self.capacity == 0 || sy <= CURVATURE_TOL * norm(&s) * norm(&y) {
            return false;
        }
        if self.s.len() == self.capacity {
            self.s.pop_front();
            self.y.pop_front();
            self.rho.pop_front();
        }
        self.rho.push_back(1.0 / sy);
        self.s.push_back(s);
        self.y.push_back(y);
        true
    }

    /// Two-loop recursion: -H g with the implicit inverse Hessian, scaled by
    /// gamma = s'y / y'y of the newest pair (identity when empty). Falls back
    /// to -g if the result is not a descent direction.
    pub fn direction(&self, g: &[f64]) -> Vec<f64> {
        let m = self.s.len();
        let mut q = g.to_vec();
        let mut alpha = vec![0.0; m];
        for i in (0..m).rev() {
            alpha[i] = self.rho[i] * dot(&self.s[i], &q);
            axpy(-alpha[i], &self.y[i], &mut q);
        }
        let gamma = if m > 0 {
            let y = &self.y[m - 1];
            (1.0 / self.rho[m - 1]) / dot(y, y)
        } else {
            1.0
        };
        for qi in q.iter_mut() {
            *qi *= gamma;
        }
        for i in 0..m {
            let beta = self.rho[i] * dot(&self.y[i], &q);
            axpy(alpha[i] - beta, &self.s[i], &mut q);
        }
        for qi in q.iter_mut() {
            *qi = -*qi;
        }
        if dot(g, &q) >= 0.0 {
            // numerically degenerate history
            return g.iter().map(|gi| -gi).collect();
        }
        q
    }
}

/// Minimizer of the cubic Hermite interpolant through (x1, f1, g1) and
/// (x2, f2, g2), clamped to the given bounds; midpoint on breakdown.
fn cubic_interpolate(
    x1: f64,
    f1: f64,
    g1: f64,
    x2: f64,
    f2: f64,
    g2: f64,
    bounds: (f64, f64),
) -> f64 {
    let (lo, hi) = bounds;
    let d1 = g1 + g2 - 3.0 * (f1 - f2) / (x1 - x2);
    let d2_sq = d1 * d1 - g1 * g2;
    if d2_sq >= 0.0 {
        let d2 = d2_sq.sqrt();
        let min_pos = if x1 <= x2 {
            x2 - (x2 - x1) * ((g2 + d2 - d1) / (g2 - g1 + 2.0 * d2))
        } else {
            x1 - (x1 - x2) * ((g1 + d2 - d1) / (g1 - g2 + 2.0 * d2))
        };
        if min_pos.is_finite() {
            return min_pos.clamp(lo, hi);
        }
    }
    0.5 * (lo + hi)
}

struct ProbePoint {
    alpha: f64,
    value: f64,
    grad: Vec<f64>,
    slope: f64,
}

/// Strong Wolfe line search along d from x (phi(a) = f(x + a d)), bracketing
/// then zooming with cubic interpolation. Returns the accepted probe and the
/// number of function evaluations spent.
#[allow(clippy::too_many_arguments)]
fn strong_wolfe<F>(
    f: &mut F,
    x: &[f64],
    d: &[f64],
    f0: f64,
    slope0: f64,
    init_step: f64,
    opts: &LbfgsOptions,
) -> (Option<ProbePoint>, usize)
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    debug_assert!(slope0 < 0.0);
    let mut evals = 0usize;
    let mut probe = |alpha: f64| -> ProbePoint {
        let xa: Vec<f64> = x.iter().zip(d).map(|(xi, di)| xi + alpha * di).collect();
        let (value, grad) = f(&xa);
        let slope = dot(&grad, d);
        ProbePoint {
            alpha,
            value,
            grad,
            slope,
        }
    };
    let armijo = |p: &ProbePoint| p.value <= f0 + opts.c1 * p.alpha * slope0;
    let curvature = |p: &ProbePoint| p.slope.abs() <= -opts.c2 * slope0;

    // bracketing
    let mut prev = ProbePoint {
        alpha: 0.0,
        value: f0,
        grad: Vec::new(),
        slope: slope0,
    };
    let mut alpha = init_step;
    let mut bracket: Option<(ProbePoint, ProbePoint)> = None;
    for iter in 0..opts.max_line_search {
        let cur = probe(alpha);
        evals += 1;
        if !cur.value.is_finite() || (!armijo(&cur) || (iter > 0 && cur.value >= prev.value)) {
            bracket = Some((prev, cur));
            break;
        }
        if curvature(&cur) {
            return (Some(cur), evals);
        }
        if cur.slope >= 0.0 {
            bracket = Some((cur, prev));
            break;
        }
        // extrapolate
        let next = cubic_interpolate(
            prev.alpha,
            prev.value,
            prev.slope,
            cur.alpha,
            cur.value,
            cur.slope,
            (cur.alpha + 0.01 * (cur.alpha - prev.alpha), 10.0 * cur.alpha),
        );
        prev = cur;
        alpha = next;
        if evals >= opts.max_line_search {
            break;
        }
    }
    let Some((mut lo, mut hi)) = bracket else {
        return (None, evals);
    };

    // zoom: lo satisfies Armijo with the lowest value seen, hi is the other end
    if hi.value.is_finite() && hi.value < lo.value && armijo(&hi) {
        std::mem::swap(&mut lo, &mut hi);
    }
    let mut insufficient = 0;
    while evals < opts.max_line_search {
        if (hi.alpha - lo.alpha).abs() * crate::numerics::norm(d) < 1e-15 {
            break;
        }
        let span = (hi.alpha - lo.alpha).abs();
        let mut trial = cubic_interpolate(
            lo.alpha,
            lo.value,
            lo.slope,
            hi.alpha,
            hi.value,
            if hi.value.is_finite() { hi.slope } else { 0.0 },
            (lo.alpha.min(hi.alpha), lo.alpha.max(hi.alpha)),
        );
        // keep the trial inside the bracket with progress
        let margin = 0.1 * span;
        if (trial - lo.alpha).abs() < margin || (trial - hi.alpha).abs() < margin {
            insufficient += 1;
            if insufficient > 1 {
                trial = 0.5 * (lo.alpha + hi.alpha);
                insufficient = 0;
            }
        } else {
            insufficient = 0;
        }
        let cur = probe(trial);
        evals += 1;
        if !cur.value.is_finite() || !armijo(&cur) || cur.value >= lo.value {
            hi = cur;
        } else {
            if curvature(&cur) {
                return (Some(cur), evals);
            }
            if cur.slope * (hi.alpha - lo.alpha) >= 0.0 {
                hi = std::mem::replace(&mut lo, cur);
            } else {
                lo = cur;
            }
        }
    }
    // best effort: accept lo if it at least makes sufficient decrease
    if lo.alpha > 0.0 && lo.value.is_finite() && armijo(&lo) {
        return (Some(lo), evals);
    }
    (None, evals)
}

/// Full-batch L-BFGS loop. The objective must be deterministic; non-finite
/// values or gradients abort with a diagnostic.
pub fn lbfgs_minimize<F>(mut f: F, x0: &[f64], opts: &LbfgsOptions) -> Result<LbfgsReport>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let mut x = x0.to_vec();
    let (mut value, mut grad) = f(&x);
    let mut func_evals = 1usize;
    if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            what: "objective at the initial point",
            iter: 0,
        });
    }
    let mut trace = vec![value];
    let mut history = History::new(opts.history);
    let mut stop = StopReason::MaxIterations;
    let mut iterations = 0usize;

    for iter in 0..opts.max_iters {
        if norm(&grad) <= opts.g_tol * norm(&x).max(1.0) {
            stop = StopReason::GradientTolerance;
            break;
        }
        let mut d = history.direction(&grad);
        let mut slope = dot(&grad, &d);
        let (mut accepted, evals) = strong_wolfe(&mut f, &x, &d, value, slope, 1.0, opts);
        func_evals += evals;
        if accepted.is_none() {
            // reset the history and try one steepest-descent pass
            if !history.is_empty() {
                history.clear();
                d = grad.iter().map(|g| -g).collect();
                slope = dot(&grad, &d);
                let scale = 1.0 / norm(&grad).max(1.0);
                let (retry, evals) = strong_wolfe(&mut f, &x, &d, value, slope, scale, opts);
                func_evals += evals;
                accepted = retry;
            }
            if accepted.is_none() {
                stop = StopReason::LineSearchFailure;
                break;
            }
        }
        let probe = accepted.unwrap();
        if !probe.value.is_finite() || probe.grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                what: "objective along the line search",
                iter,
            });
        }
        let s: Vec<f64> = d.iter().map(|di| probe.alpha * di).collect();
        let y: Vec<f64> = probe.grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
        history.push(s.clone(), y);
        for (xi, si) in x.iter_mut().zip(&s) {
            *xi += si;
        }
        value = probe.value;
        grad = probe.grad;
        trace.push(value);
        iterations = iter + 1;
    }
    if stop == StopReason::MaxIterations && norm(&grad) <= opts.g_tol * norm(&x).max(1.0) {
        stop = StopReason::GradientTolerance;
    }
    Ok(LbfgsReport {
        grad_norm: norm(&grad),
        x,
        value,
        iterations,
        func_evals,
        stop,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;

    fn quadratic_diag(d: &[f64]) -> impl Fn(&[f64]) -> (f64, Vec<f64>) + '_ {
        move |x: &[f64]| {
            let value = 0.5 * x.iter().zip(d).map(|(xi, di)| di * xi * xi).sum::<f64>();
            let grad = x.iter().zip(d).map(|(xi, di)| di * xi).collect();
            (value, grad)
        }
    }

    #[test]
    fn quadratic_converges_quickly() {
        let d = [1.0, 10.0];
        let report = lbfgs_minimize(
            quadratic_diag(&d),
            &[1.0, 1.0],
            &LbfgsOptions {
                max_iters: 50,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(report.stop, StopReason::GradientTolerance);
        assert!(report.iterations <= 10, "took {}", report.iterations);
        assert!(report.grad_norm <= 1e-8);
        assert!(report.x.iter().all(|&xi| xi.abs() < 1e-7));
    }

    #[test]
    fn rosenbrock_reaches_the_minimum() {
        let rosenbrock = |x: &[f64]| -> (f64, Vec<f64>) {
            let (a, b) = (x[0], x[1]);
            let value = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let grad = vec![
                -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
                200.0 * (b - a * a),
            ];
            (value, grad)
        };
        let report = lbfgs_minimize(
            rosenbrock,
            &[-1.2, 1.0],
            &LbfgsOptions {
                max_iters: 200,
                g_tol: 1e-10,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(report.iterations <= 200);
        assert!(
            (report.x[0] - 1.0).abs() <= 1e-6 && (report.x[1] - 1.0).abs() <= 1e-6,
            "ended at {:?} after {} iterations",
            report.x,
            report.iterations
        );
    }

    #[test]
    fn trace_is_monotone_non_increasing() {
        let rosenbrock = |x: &[f64]| -> (f64, Vec<f64>) {
            let (a, b) = (x[0], x[1]);
            (
                (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2),
                vec![
                    -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
                    200.0 * (b - a * a),
                ],
            )
        };
        let report = lbfgs_minimize(rosenbrock, &[-1.2, 1.0], &LbfgsOptions::default()).unwrap();
        for w in report.trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-15, "trace increased: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn empty_history_direction_is_steepest_descent() {
        let h = History::new(9);
        let g = vec![0.3, -0.7, 2.0];
        assert_eq!(h.direction(&g), vec![-0.3, 0.7, -2.0]);
    }

    #[test]
    fn one_exact_pair_scales_by_inverse_eigenvalue() {
        // on f = x' D x / 2 with D = 2 I, any step gives y = 2 s, so the
        // two-loop direction becomes -g / 2
        let mut h = History::new(9);
        let s = vec![0.5, -1.0];
        let y = vec![1.0, -2.0];
        assert!(h.push(s, y));
        let g = vec![4.0, 6.0];
        let d = h.direction(&g);
        assert!((d[0] + 2.0).abs() < 1e-14);
        assert!((d[1] + 3.0).abs() < 1e-14);
    }

    #[test]
    fn curvature_filter_refuses_bad_pairs() {
        let mut h = History::new(9);
        assert!(!h.push(vec![1.0, 0.0], vec![-1.0, 0.0])); // s'y < 0
        assert!(!h.push(vec![1.0, 0.0], vec![0.0, 1.0])); // s'y = 0
        assert!(h.is_empty());
        assert!(h.push(vec![1.0, 0.0], vec![2.0, 0.5]));
        assert_eq!(h.len(), 1);
    }

    #[test]
    fn history_is_bounded() {
        let mut h = History::new(3);
        for k in 1..10 {
            let s = vec![k as f64, 0.0];
            let y = vec![k as f64, 0.0];
            h.push(s, y);
        }
        assert_eq!(h.len(), 3);
    }

    #[test]
    fn directions_are_descent_on_random_histories() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(71);
        for _ in 0..1000 {
            let n = rng.random_range(2..8);
            let mut h = History::new(rng.random_range(1..6));
            for _ in 0..rng.random_range(0..8) {
                let s: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
                // force positive curvature: y = s scaled plus a small twist
                let mut y: Vec<f64> = s.iter().map(|si| 2.0 * si).collect();
                for yi in y.iter_mut() {
                    *yi += 0.1 * rng.random_range(-1.0..1.0);
                }
                h.push(s, y);
            }
            let g: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            if norm(&g) < 1e-12 {
                continue;
            }
            let d = h.direction(&g);
            assert!(dot(&g, &d) < 0.0, "not a descent direction");
        }
    }

    #[test]
    fn zero_history_capacity_matches_manual_descent_loop() {
        // m = 0 reduces to steepest descent with the same line search
        let d = [1.0, 10.0];
        let opts = LbfgsOptions {
            history: 0,
            max_iters: 40,
            ..Default::default()
        };
        let report = lbfgs_minimize(quadratic_diag(&d), &[1.0, 1.0], &opts).unwrap();

        // hand-rolled loop using the same primitives
        let mut x = vec![1.0, 1.0];
        let f = quadratic_diag(&d);
        let (mut value, mut grad) = f(&x);
        let mut trajectory = vec![value];
        let mut fcall = |xv: &[f64]| f(xv);
        for _ in 0..opts.max_iters {
            if norm(&grad) <= opts.g_tol * norm(&x).max(1.0) {
                break;
            }
            let dir: Vec<f64> = grad.iter().map(|g| -g).collect();
            let slope = dot(&grad, &dir);
            let (probe, _) = strong_wolfe(&mut fcall, &x, &dir, value, slope, 1.0, &opts);
            let probe = probe.expect("line search on a quadratic");
            for (xi, di) in x.iter_mut().zip(&dir) {
                *xi += probe.alpha * di;
            }
            value = probe.value;
            grad = probe.grad;
            trajectory.push(value);
        }
        assert_eq!(report.trace.len(), trajectory.len());
        for (a, b) in report.trace.iter().zip(&trajectory) {
            assert_eq!(a, b, "trajectories diverge");
        }
    }

    #[test]
    fn identical_inputs_give_identical_iterates() {
        let rosenbrock = |x: &[f64]| -> (f64, Vec<f64>) {
            let (a, b) = (x[0], x[1]);
            (
                (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2),
                vec![
                    -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
                    200.0 * (b - a * a),
                ],
            )
        };
        let r1 = lbfgs_minimize(rosenbrock, &[-1.2, 1.0], &LbfgsOptions::default()).unwrap();
        let r2 = lbfgs_minimize(rosenbrock, &[-1.2, 1.0], &LbfgsOptions::default()).unwrap();
        assert_eq!(r1.trace, r2.trace);
        assert_eq!(r1.x, r2.x);
    }

    #[test]
    fn non_finite_objective_is_rejected() {
        let bad = |_: &[f64]| (f64::NAN, vec![0.0]);
        assert!(lbfgs_minimize(bad, &[1.0], &LbfgsOptions::default()).is_err());
    }
}
