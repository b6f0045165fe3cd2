//! Limited-memory BFGS with Armijo backtracking.
//!
//! Accepted steps always decrease the objective, so the terminal value never
//! exceeds the starting value.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::real::Real;

pub trait Objective<T> {
    /// Writes the gradient into `grad` and returns the value.
    fn value_and_gradient(&self, x: &[T], grad: &mut [T]) -> T;

    /// Norm used for the convergence test.
    fn gradient_norm(&self, grad: &[T]) -> T
    where
        T: Real,
    {
        dot(grad, grad).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LbfgsOptions {
    pub history: usize,
    pub max_iterations: usize,
    /// Absolute tolerance on [`Objective::gradient_norm`].
    pub gradient_tolerance: f64,
    pub max_backtracks: usize,
    /// Armijo sufficient-decrease constant.
    pub armijo: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            history: 6,
            max_iterations: 10_000,
            gradient_tolerance: 1e-6,
            max_backtracks: 50,
            armijo: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxIterations,
    /// No step along the search direction decreased the objective.
    LineSearchFailed,
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LbfgsReport<T> {
    pub initial_value: T,
    pub value: T,
    pub gradient_norm: T,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
}

#[inline]
pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (x, y)| acc + *x * *y)
}

#[inline]
fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += alpha * *xi);
}

struct Pair<T> {
    s: Vec<T>,
    y: Vec<T>,
    rho: T,
}

/// Minimizes `obj` starting from `x`, which holds the best point on return.
pub fn minimize<T: Real, O: Objective<T> + ?Sized>(
    obj: &O,
    x: &mut [T],
    opts: &LbfgsOptions,
) -> LbfgsReport<T> {
    let n = x.len();
    let mut g = vec![T::zero(); n];
    let mut f = obj.value_and_gradient(x, &mut g);
    let mut evaluations = 1;
    let initial_value = f;
    let tol = T::lit(opts.gradient_tolerance);
    let c1 = T::lit(opts.armijo);

    let mut history: VecDeque<Pair<T>> = VecDeque::with_capacity(opts.history);
    let mut d = vec![T::zero(); n];
    let mut x_new = vec![T::zero(); n];
    let mut g_new = vec![T::zero(); n];
    let mut alphas = vec![T::zero(); opts.history];

    let report = |value, gnorm, iterations, evaluations, termination| LbfgsReport {
        initial_value,
        value,
        gradient_norm: gnorm,
        iterations,
        evaluations,
        termination,
    };

    if !f.is_finite() {
        return report(f, T::nan(), 0, evaluations, Termination::NonFinite);
    }

    for iter in 0..opts.max_iterations {
        let gnorm = obj.gradient_norm(&g);
        if gnorm <= tol {
            return report(f, gnorm, iter, evaluations, Termination::Converged);
        }

        // two-loop recursion
        d.iter_mut().zip(&g).for_each(|(di, gi)| *di = -*gi);
        for (k, p) in history.iter().enumerate().rev() {
            let a = p.rho * dot(&p.s, &d);
            alphas[k] = a;
            axpy(-a, &p.y, &mut d);
        }
        let gamma = match history.back() {
            Some(p) => dot(&p.s, &p.y) / dot(&p.y, &p.y),
            None => T::one() / dot(&g, &g).sqrt().max(T::min_positive_value()),
        };
        d.iter_mut().for_each(|di| *di *= gamma);
        for (k, p) in history.iter().enumerate() {
            let b = p.rho * dot(&p.y, &d);
            axpy(alphas[k] - b, &p.s, &mut d);
        }
        let mut slope = dot(&g, &d);
        if !(slope < T::zero()) {
            history.clear();
            let scale = T::one() / dot(&g, &g).sqrt().max(T::min_positive_value());
            d.iter_mut().zip(&g).for_each(|(di, gi)| *di = -*gi * scale);
            slope = dot(&g, &d);
        }

        let mut step = T::one();
        let mut accepted = None;
        for _ in 0..opts.max_backtracks {
            x_new
                .iter_mut()
                .zip(x.iter().zip(&d))
                .for_each(|(xn, (xi, di))| *xn = *xi + step * *di);
            let f_new = obj.value_and_gradient(&x_new, &mut g_new);
            evaluations += 1;
            if f_new.is_finite() && f_new <= f + c1 * step * slope && f_new < f {
                accepted = Some(f_new);
                break;
            }
            step *= T::lit(0.5);
        }
        let Some(f_new) = accepted else {
            return report(f, gnorm, iter, evaluations, Termination::LineSearchFailed);
        };

        // curvature pair, reusing the oldest buffers when full
        let mut pair = if history.len() == opts.history && opts.history > 0 {
            history.pop_front().unwrap()
        } else {
            Pair {
                s: vec![T::zero(); n],
                y: vec![T::zero(); n],
                rho: T::zero(),
            }
        };
        for i in 0..n {
            pair.s[i] = x_new[i] - x[i];
            pair.y[i] = g_new[i] - g[i];
        }
        let sy = dot(&pair.s, &pair.y);
        if sy > T::epsilon() * dot(&pair.y, &pair.y).sqrt() * dot(&pair.s, &pair.s).sqrt()
            && opts.history > 0
        {
            pair.rho = T::one() / sy;
            history.push_back(pair);
        }

        x.copy_from_slice(&x_new);
        std::mem::swap(&mut g, &mut g_new);
        f = f_new;
    }
    let gnorm = obj.gradient_norm(&g);
    let termination = if gnorm <= tol {
        Termination::Converged
    } else {
        Termination::MaxIterations
    };
    report(f, gnorm, opts.max_iterations, evaluations, termination)
}
