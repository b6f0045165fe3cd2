//! The diffuse two-scale functional
//!
//! `F_ε(v) = ∫_0^1 ε⁴ v''² + ε⁻² W(v') + ε⁻² m(x) a(x/ε) v² dx`
//!
//! on a uniform grid over `[0, 1]`, its exact discrete gradient, the
//! sawtooth-based test function and multi-start quasi-Newton minimization.
//!
//! A slope transition balances `ε⁴ v''²` against `ε⁻² W(v')`: the optimal
//! profile is `v' = tanh((x - x_j)/ε³)`, so transitions are `ε³` wide and
//! cost `ε A_0` each. Grids for minimization must resolve that width.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coeff::{CoefficientField, MacroModulus};
use crate::error::{HomlabError, Result};
use crate::lbfgs::{self, LbfgsOptions, Objective, Termination};
use crate::real::Real;
use crate::sharp_cell::{minimize_sharp_dp, Boundary, DpGrid, SawtoothProfile, Slope};
use crate::well::{QuarticWell, Well};

/// Energy evaluation refuses grids coarser than `ε / COARSE_FACTOR`, which
/// would not resolve the oscillation of `a(x/ε)`.
pub const COARSE_FACTOR: f64 = 10.0;

/// Width of a slope transition, `ε³`.
pub fn transition_width<T: Real>(eps: T) -> T {
    eps * eps * eps
}

/// Default grid step for minimization, a quarter of the transition width.
pub fn default_step(eps: f64) -> f64 {
    transition_width(eps) / 4.0
}

/// Number of cells of the default grid.
pub fn default_cells(eps: f64) -> usize {
    (1.0 / default_step(eps)).round() as usize
}

/// Largest step accepted by the minimizer and the test-function builder.
pub fn resolving_step(eps: f64) -> f64 {
    transition_width(eps) / 2.0
}

/// Grid function on `[0, 1]` with `n + 1` nodes `x_i = i / n`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteProfile<T> {
    h: T,
    values: Vec<T>,
}

impl<T: Real> DiscreteProfile<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        if values.len() < 3 {
            return Err(HomlabError::Shape(format!(
                "a profile needs at least 3 nodes, got {}",
                values.len()
            )));
        }
        let h = T::one() / T::from_usize_lossy(values.len() - 1);
        Ok(Self { h, values })
    }

    pub fn zeros(n: usize) -> Result<Self> {
        Self::new(vec![T::zero(); n + 1])
    }

    pub fn from_fn(n: usize, f: impl Fn(T) -> T) -> Result<Self> {
        let nn = T::from_usize_lossy(n);
        Self::new((0..=n).map(|i| f(T::from_usize_lossy(i) / nn)).collect())
    }

    pub fn h(&self) -> T {
        self.h
    }

    pub fn cells(&self) -> usize {
        self.values.len() - 1
    }

    pub fn x(&self, i: usize) -> T {
        T::from_usize_lossy(i) / T::from_usize_lossy(self.cells())
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    /// `(x, v)` rows with a header.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["x", "v"])?;
        for (i, v) in self.values.iter().enumerate() {
            w.write_record([self.x(i).as_f64().to_string(), v.as_f64().to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let mut xs = Vec::new();
        let mut vs = Vec::new();
        for rec in r.deserialize::<(f64, f64)>() {
            let (x, v) = rec?;
            xs.push(x);
            vs.push(T::lit(v));
        }
        let out = Self::new(vs)?;
        let n = out.cells() as f64;
        for (i, x) in xs.iter().enumerate() {
            if (x - i as f64 / n).abs() > 1e-9 {
                return Err(HomlabError::Shape(format!(
                    "row {i}: x = {x} is not on the uniform grid with {n} cells"
                )));
            }
        }
        Ok(out)
    }
}

/// Profile in the micro variable, `u(t0 + i·step)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MicroProfile<T> {
    t0: T,
    step: T,
    values: Vec<T>,
}

impl<T: Real> MicroProfile<T> {
    pub fn new(t0: T, step: T, values: Vec<T>) -> Result<Self> {
        if !(step > T::zero()) {
            return Err(HomlabError::Parameter(format!(
                "step must be positive, got {step}"
            )));
        }
        if values.len() < 3 {
            return Err(HomlabError::Shape(
                "a micro profile needs at least 3 nodes".into(),
            ));
        }
        Ok(Self { t0, step, values })
    }

    /// `u(t) = v(εt)/ε` on `t ∈ [0, 1/ε]`.
    pub fn from_diffuse(v: &DiscreteProfile<T>, eps: T) -> Result<Self> {
        Self::new(
            T::zero(),
            v.h() / eps,
            v.values().iter().map(|x| *x / eps).collect(),
        )
    }

    pub fn t0(&self) -> T {
        self.t0
    }

    pub fn step(&self) -> T {
        self.step
    }

    pub fn t(&self, i: usize) -> T {
        self.t0 + T::from_usize_lossy(i) * self.step
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// Node range `[i0, i0 + len]` covering the unit window `I_y`. Every
    /// node in it has both neighbours, so central stencils apply.
    pub fn unit_window(&self, y: T) -> Result<(usize, usize)> {
        let len = (T::one() / self.step).round();
        let start = ((y - T::lit(0.5) - self.t0) / self.step).round();
        let last = T::from_usize_lossy(self.values.len() - 2);
        if start < T::one() || start + len > last {
            return Err(HomlabError::Domain(format!(
                "window around y = {y} exceeds the profile data [{}, {}]",
                self.t0,
                self.t(self.values.len() - 1)
            )));
        }
        let i0 = start.to_usize().unwrap_or(0);
        Ok((i0, i0 + len.to_usize().unwrap_or(0)))
    }
}

/// Trapezoid rule over nodes `i0..=i1` of
/// `ε² u''² + ε⁻² W(u') + m·a(t) u²`, central differences throughout.
/// `coef(i)` is `a` at node `i`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn window_integral<T: Real, W: Well<T> + ?Sized>(
    u: &[T],
    step: T,
    i0: usize,
    i1: usize,
    eps: T,
    m: T,
    well: &W,
    coef: impl Fn(usize) -> T,
) -> T {
    let inv2 = T::one() / (T::lit(2.0) * step);
    let inv_sq = T::one() / (step * step);
    let e2 = eps * eps;
    let inv_e2 = T::one() / e2;
    let mut acc = T::zero();
    for i in i0..=i1 {
        let d1 = (u[i + 1] - u[i - 1]) * inv2;
        let d2 = (u[i + 1] - T::lit(2.0) * u[i] + u[i - 1]) * inv_sq;
        let dens = e2 * d2 * d2 + inv_e2 * well.value(d1) + m * coef(i) * u[i] * u[i];
        let w = if i == i0 || i == i1 {
            T::lit(0.5)
        } else {
            T::one()
        };
        acc += w * dens;
    }
    acc * step
}

/// `f_ε^{ω,x}(u, y)`: the micro integrand over the unit window centred at `y`.
pub fn local_average_integrand<T: Real>(
    u: &MicroProfile<T>,
    field: &CoefficientField<T>,
    m_value: T,
    y: T,
    eps: T,
) -> Result<T> {
    if !(eps > T::zero()) {
        return Err(HomlabError::Parameter(format!(
            "eps must be positive, got {eps}"
        )));
    }
    let (i0, i1) = u.unit_window(y)?;
    Ok(window_integral(
        &u.values,
        u.step,
        i0,
        i1,
        eps,
        m_value,
        &QuarticWell,
        |i| field.eval(u.t(i)),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyParts<T> {
    /// `∫ ε⁴ v''²`
    pub bending: T,
    /// `∫ ε⁻² W(v')`
    pub well: T,
    /// `∫ ε⁻² m a v²`
    pub confinement: T,
}

impl<T: Real> EnergyParts<T> {
    pub fn total(&self) -> T {
        self.bending + self.well + self.confinement
    }
}

/// The discretized functional for fixed `ε`, field, modulus and grid.
/// Node weights `m(x_i) a(x_i/ε)` are computed once.
#[derive(Debug, Clone)]
pub struct DiffuseProblem<T: Real, W: Well<T> = QuarticWell> {
    eps: T,
    n: usize,
    h: T,
    coef: Vec<T>,
    well: W,
}

impl<T: Real> DiffuseProblem<T, QuarticWell> {
    pub fn new(
        eps: T,
        n: usize,
        field: &CoefficientField<T>,
        modulus: &MacroModulus,
    ) -> Result<Self> {
        Self::with_well(eps, n, field, modulus, QuarticWell)
    }
}

impl<T: Real, W: Well<T>> DiffuseProblem<T, W> {
    pub fn with_well(
        eps: T,
        n: usize,
        field: &CoefficientField<T>,
        modulus: &MacroModulus,
        well: W,
    ) -> Result<Self> {
        if !(eps > T::zero()) {
            return Err(HomlabError::Parameter(format!(
                "eps must be positive, got {eps}"
            )));
        }
        if n < 2 {
            return Err(HomlabError::Shape(format!(
                "need at least 2 cells, got {n}"
            )));
        }
        modulus.validate()?;
        let nn = T::from_usize_lossy(n);
        let h = T::one() / nn;
        let required = eps.as_f64() / COARSE_FACTOR;
        if h.as_f64() > required {
            return Err(HomlabError::GridTooCoarse {
                step: h.as_f64(),
                required,
            });
        }
        let coef = (0..=n)
            .into_par_iter()
            .map(|i| {
                let x = T::from_usize_lossy(i) / nn;
                modulus.eval_unchecked(x) * field.eval(x / eps)
            })
            .collect();
        Ok(Self {
            eps,
            n,
            h,
            coef,
            well,
        })
    }

    pub fn eps(&self) -> T {
        self.eps
    }

    pub fn cells(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> T {
        self.h
    }

    /// `m(x_i) a(x_i/ε)` at every node.
    pub fn weights(&self) -> &[T] {
        &self.coef
    }

    fn check(&self, v: &[T]) -> Result<()> {
        if v.len() != self.n + 1 {
            return Err(HomlabError::Shape(format!(
                "profile has {} nodes, problem has {}",
                v.len(),
                self.n + 1
            )));
        }
        Ok(())
    }

    pub fn energy(&self, v: &DiscreteProfile<T>) -> Result<T> {
        Ok(self.parts(v)?.total())
    }

    pub fn parts(&self, v: &DiscreteProfile<T>) -> Result<EnergyParts<T>> {
        self.check(v.values())?;
        Ok(self.evaluate(v.values(), None))
    }

    pub fn gradient(&self, v: &DiscreteProfile<T>) -> Result<Vec<T>> {
        self.check(v.values())?;
        let mut g = vec![T::zero(); self.n + 1];
        self.evaluate(v.values(), Some(&mut g));
        Ok(g)
    }

    /// Trapezoid weight of node `i`.
    #[inline]
    fn quad(&self, i: usize) -> T {
        if i == 0 || i == self.n {
            self.h * T::lit(0.5)
        } else {
            self.h
        }
    }

    /// One pass over the nodes. Interior nodes use central differences;
    /// the end nodes use the second-order one-sided first difference and
    /// the neighbouring second difference.
    fn evaluate(&self, v: &[T], mut grad: Option<&mut [T]>) -> EnergyParts<T> {
        let n = self.n;
        let two = T::lit(2.0);
        let inv2h = T::one() / (two * self.h);
        let inv_h2 = T::one() / (self.h * self.h);
        let e4 = self.eps.powi(4);
        let inv_e2 = T::one() / (self.eps * self.eps);
        if let Some(g) = grad.as_deref_mut() {
            g.iter_mut().for_each(|x| *x = T::zero());
        }
        let mut parts = EnergyParts {
            bending: T::zero(),
            well: T::zero(),
            confinement: T::zero(),
        };
        for i in 0..=n {
            let w = self.quad(i);
            let (d1, c2) = if i == 0 {
                ((-T::lit(3.0) * v[0] + T::lit(4.0) * v[1] - v[2]) * inv2h, 1)
            } else if i == n {
                (
                    (T::lit(3.0) * v[n] - T::lit(4.0) * v[n - 1] + v[n - 2]) * inv2h,
                    n - 1,
                )
            } else {
                ((v[i + 1] - v[i - 1]) * inv2h, i)
            };
            let d2 = (v[c2 + 1] - two * v[c2] + v[c2 - 1]) * inv_h2;
            parts.bending += w * e4 * d2 * d2;
            parts.well += w * inv_e2 * self.well.value(d1);
            parts.confinement += w * inv_e2 * self.coef[i] * v[i] * v[i];

            if let Some(g) = grad.as_deref_mut() {
                let p = w * two * e4 * d2 * inv_h2;
                g[c2 - 1] += p;
                g[c2] -= two * p;
                g[c2 + 1] += p;
                let r = w * inv_e2 * self.well.derivative(d1) * inv2h;
                if i == 0 {
                    g[0] -= T::lit(3.0) * r;
                    g[1] += T::lit(4.0) * r;
                    g[2] -= r;
                } else if i == n {
                    g[n] += T::lit(3.0) * r;
                    g[n - 1] -= T::lit(4.0) * r;
                    g[n - 2] += r;
                } else {
                    g[i + 1] += r;
                    g[i - 1] -= r;
                }
                g[i] += w * inv_e2 * two * self.coef[i] * v[i];
            }
        }
        parts
    }
}

impl<T: Real, W: Well<T>> Objective<T> for DiffuseProblem<T, W> {
    fn value_and_gradient(&self, x: &[T], grad: &mut [T]) -> T {
        self.evaluate(x, Some(grad)).total()
    }

    /// `L²` norm of the gradient density `g_i / w_i`.
    fn gradient_norm(&self, grad: &[T]) -> T {
        grad.iter()
            .enumerate()
            .fold(T::zero(), |acc, (i, g)| acc + *g * *g / self.quad(i))
            .sqrt()
    }
}

pub fn diffuse_energy<T: Real>(
    v: &DiscreteProfile<T>,
    eps: T,
    field: &CoefficientField<T>,
    modulus: &MacroModulus,
) -> Result<T> {
    DiffuseProblem::new(eps, v.cells(), field, modulus)?.energy(v)
}

pub fn diffuse_energy_parts<T: Real>(
    v: &DiscreteProfile<T>,
    eps: T,
    field: &CoefficientField<T>,
    modulus: &MacroModulus,
) -> Result<EnergyParts<T>> {
    DiffuseProblem::new(eps, v.cells(), field, modulus)?.parts(v)
}

pub fn diffuse_gradient<T: Real>(
    v: &DiscreteProfile<T>,
    eps: T,
    field: &CoefficientField<T>,
    modulus: &MacroModulus,
) -> Result<Vec<T>> {
    DiffuseProblem::new(eps, v.cells(), field, modulus)?.gradient(v)
}

/// A sharp cell profile placed in the macro variable: `v(x) = ε u((x - center)/ε)`.
/// The profile window must be centred, `[-R/2, R/2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Piece<T> {
    pub center: T,
    pub profile: SawtoothProfile<T>,
}

impl<T: Real> Piece<T> {
    pub fn span(&self, eps: T) -> (T, T) {
        let (a, b) = self.profile.window();
        (self.center + eps * a, self.center + eps * b)
    }
}

/// Piecewise-affine profile with slopes `±1`, flipping at `flips`, with
/// every kink replaced by the optimal transition of width `width`:
/// a kink where the slope changes by `Δ` gains `Δ (w/2) ln(1 + e^{-2|x - x_j|/w})`,
/// which turns the slope into `tanh` steps.
pub fn smoothed_sawtooth<T: Real>(
    v0: T,
    initial: Slope,
    flips: &[T],
    width: T,
    n: usize,
) -> Result<DiscreteProfile<T>> {
    if flips.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(HomlabError::Shape(
            "flip positions must increase strictly".into(),
        ));
    }
    if !(width > T::zero()) {
        return Err(HomlabError::Parameter(
            "transition width must be positive".into(),
        ));
    }
    let s0: T = initial.sign();
    let deltas: Vec<T> = (0..flips.len())
        .map(|j| {
            let after = if j % 2 == 0 { -s0 } else { s0 };
            T::lit(2.0) * after
        })
        .collect();
    let reach = T::lit(40.0) * width;
    let half_w = width * T::lit(0.5);
    let two_over_w = T::lit(2.0) / width;
    let nn = T::from_usize_lossy(n);

    let mut values = Vec::with_capacity(n + 1);
    let (mut passed, mut lo, mut hi) = (0usize, 0usize, 0usize);
    let (mut base, mut anchor, mut slope) = (v0, T::zero(), s0);
    for i in 0..=n {
        let x = T::from_usize_lossy(i) / nn;
        while passed < flips.len() && flips[passed] <= x {
            base += slope * (flips[passed] - anchor);
            anchor = flips[passed];
            slope = -slope;
            passed += 1;
        }
        while lo < flips.len() && flips[lo] < x - reach {
            lo += 1;
        }
        while hi < flips.len() && flips[hi] <= x + reach {
            hi += 1;
        }
        let mut v = base + slope * (x - anchor);
        for j in lo..hi {
            let z = (x - flips[j]).abs() * two_over_w;
            v += deltas[j] * half_w * (-z).exp().ln_1p();
        }
        values.push(v);
    }
    DiscreteProfile::new(values)
}

/// Test function assembled from rescaled sharp pieces. Gaps between pieces
/// (at most `delta` long) get a zigzag of period close to `ε` that returns
/// to its starting value; every slope flip is then smoothed over `ε³`.
pub fn build_test_function<T: Real>(
    pieces: &[Piece<T>],
    eps: T,
    delta: T,
    n: usize,
) -> Result<DiscreteProfile<T>> {
    if !(eps > T::zero()) || !(delta >= T::zero()) {
        return Err(HomlabError::Parameter(
            "eps must be positive and delta nonnegative".into(),
        ));
    }
    let required = resolving_step(eps.as_f64());
    if 1.0 / (n as f64) > required {
        return Err(HomlabError::GridTooCoarse {
            step: 1.0 / n as f64,
            required,
        });
    }
    let mut order: Vec<&Piece<T>> = pieces.iter().collect();
    order.sort_by(|a, b| {
        a.center
            .partial_cmp(&b.center)
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let tol = eps * T::lit(1e-6);
    for p in &order {
        let (a, b) = p.profile.window();
        if (a + b).abs() > tol.max(T::lit(1e-9) * (b - a)) {
            return Err(HomlabError::Shape(format!(
                "piece at {} has an uncentred window ({a}, {b})",
                p.center
            )));
        }
    }
    for w in order.windows(2) {
        let (_, hi) = w[0].span(eps);
        let (lo, _) = w[1].span(eps);
        if lo < hi - tol {
            return Err(HomlabError::Shape(format!(
                "pieces at {} and {} overlap on [{lo}, {hi}]",
                w[0].center, w[1].center
            )));
        }
    }

    let mut flips: Vec<T> = Vec::new();
    let mut current: Option<Slope> = None;
    let mut v0 = T::zero();
    let mut initial: Option<Slope> = None;
    let fill_gap = |flips: &mut Vec<T>,
                    current: &mut Option<Slope>,
                    initial: &mut Option<Slope>,
                    g0: T,
                    g1: T|
     -> Result<()> {
        let len = g1 - g0;
        if len <= tol {
            return Ok(());
        }
        if !pieces.is_empty() && len > delta + tol {
            return Err(HomlabError::Parameter(format!(
                "gap [{g0}, {g1}] is longer than delta = {delta}"
            )));
        }
        let halves = (T::lit(2.0) * len / eps).round().max(T::one());
        let s = len / halves;
        let count = halves.to_usize().unwrap_or(1);
        let mut slope = current.unwrap_or(Slope::Up);
        *current = Some(slope);
        initial.get_or_insert(slope);
        for j in 0..count {
            let at = g0 + (T::from_usize_lossy(j) + T::lit(0.5)) * s;
            slope = slope.flip();
            set_slope(flips, current, at, slope);
        }
        Ok(())
    };

    let mut cursor = T::zero();
    for p in &order {
        let (lo, hi) = p.span(eps);
        if lo >= T::one() {
            break;
        }
        if lo > cursor {
            fill_gap(&mut flips, &mut current, &mut initial, cursor, lo)?;
        }
        for seg in p.profile.segments() {
            let x0 = p.center + eps * seg.t0;
            let x1 = p.center + eps * seg.t1;
            if x1 <= T::zero() || x0 >= T::one() {
                continue;
            }
            if current.is_none() {
                initial = Some(seg.slope);
                v0 = eps * p.profile.eval(((T::zero() - p.center) / eps).max(seg.t0));
            }
            set_slope(&mut flips, &mut current, x0.max(T::zero()), seg.slope);
        }
        cursor = cursor.max(hi);
    }
    if cursor < T::one() {
        fill_gap(&mut flips, &mut current, &mut initial, cursor, T::one())?;
    }
    let initial = initial.unwrap_or(Slope::Up);
    smoothed_sawtooth(v0, initial, &flips, transition_width(eps), n)
}

fn set_slope<T: Real>(flips: &mut Vec<T>, current: &mut Option<Slope>, at: T, s: Slope) {
    if let Some(c) = *current {
        if c != s {
            // two flips at one point cancel
            if flips.last().is_some_and(|l| at <= *l) {
                flips.pop();
            } else {
                flips.push(at);
            }
        }
    }
    *current = Some(s);
}

/// Constant-modulus cells of `[0, 1]`: the pieces of a piecewise-constant
/// modulus, or `sampled_cells` equal cells with the midpoint value.
pub fn macro_cells(modulus: &MacroModulus, sampled_cells: usize) -> Result<Vec<(f64, f64, f64)>> {
    modulus.validate()?;
    if let Some(c) = modulus.constant_cells() {
        return Ok(c);
    }
    if sampled_cells == 0 {
        return Err(HomlabError::Parameter(
            "need at least one macro cell".into(),
        ));
    }
    let k = sampled_cells as f64;
    Ok((0..sampled_cells)
        .map(|i| {
            let (lo, hi) = (i as f64 / k, (i + 1) as f64 / k);
            (lo, hi, modulus.eval_unchecked(0.5 * (lo + hi)))
        })
        .collect())
}

/// (lo, hi, center, minimizer, energy per length) per sampled macro cell.
#[allow(clippy::type_complexity)]
fn cell_solutions<T: Real>(
    field: &CoefficientField<T>,
    modulus: &MacroModulus,
    eps: T,
    grid: &DpGrid,
    sampled_cells: usize,
    boundary: Boundary,
) -> Result<Vec<(f64, f64, T, SawtoothProfile<T>, T)>> {
    let cells = macro_cells(modulus, sampled_cells)?;
    cells
        .par_iter()
        .map(|&(lo, hi, m)| {
            let r = T::lit(hi - lo) / eps;
            if r < T::one() {
                return Err(HomlabError::Parameter(format!(
                    "macro cell [{lo}, {hi}] is shorter than eps = {eps}"
                )));
            }
            let center = T::lit(0.5 * (lo + hi));
            let local = field.shift(center / eps);
            let (res, prof) = minimize_sharp_dp(&local, T::lit(m), r, grid, boundary)?;
            Ok((lo, hi, center, prof, res.energy_per_length))
        })
        .collect()
}

/// Pinned sharp minimizers on each macro cell, seeing the coefficient
/// `a(ω, x/ε)` of their own location.
pub fn dp_pieces<T: Real>(
    field: &CoefficientField<T>,
    modulus: &MacroModulus,
    eps: T,
    grid: &DpGrid,
    sampled_cells: usize,
) -> Result<Vec<Piece<T>>> {
    Ok(
        cell_solutions(field, modulus, eps, grid, sampled_cells, Boundary::Pinned)?
            .into_iter()
            .map(|(_, _, center, profile, _)| Piece { center, profile })
            .collect(),
    )
}

/// `Σ |cell| · (cell energy per length)` with free and with pinned windows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SharpBounds<T> {
    pub free: T,
    pub pinned: T,
}

pub fn sharp_bounds<T: Real>(
    field: &CoefficientField<T>,
    modulus: &MacroModulus,
    eps: T,
    grid: &DpGrid,
    sampled_cells: usize,
) -> Result<SharpBounds<T>> {
    let total = |b| -> Result<T> {
        Ok(cell_solutions(field, modulus, eps, grid, sampled_cells, b)?
            .into_iter()
            .map(|(lo, hi, _, _, e)| T::lit(hi - lo) * e)
            .sum())
    };
    Ok(SharpBounds {
        free: total(Boundary::Free)?,
        pinned: total(Boundary::Pinned)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct WarmStart<T> {
    pub label: String,
    pub profile: DiscreteProfile<T>,
}

/// The DP-based construction and the zero profile.
pub fn default_warm_starts<T: Real, W: Well<T>>(
    problem: &DiffuseProblem<T, W>,
    field: &CoefficientField<T>,
    modulus: &MacroModulus,
    grid: &DpGrid,
    sampled_cells: usize,
) -> Result<Vec<WarmStart<T>>> {
    let pieces = dp_pieces(field, modulus, problem.eps, grid, sampled_cells)?;
    let built = build_test_function(&pieces, problem.eps, T::zero(), problem.n)?;
    Ok(vec![
        WarmStart {
            label: "construction".into(),
            profile: built,
        },
        WarmStart {
            label: "zero".into(),
            profile: DiscreteProfile::zeros(problem.n)?,
        },
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartRecord<T> {
    pub label: String,
    pub initial_energy: T,
    pub final_energy: T,
    pub iterations: usize,
    pub gradient_norm: T,
    pub tolerance: T,
    pub termination: Termination,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MinResult<T> {
    pub energy: T,
    #[serde(skip)]
    pub profile: DiscreteProfile<T>,
    pub iterations: usize,
    pub gradient_norm: T,
    pub tolerance: T,
    pub converged: bool,
    pub hit_iteration_cap: bool,
    pub start_index: usize,
    pub start_label: String,
    pub starts: Vec<StartRecord<T>>,
}

/// L-BFGS from every warm start; the lowest terminal energy wins, ties going
/// to the earlier start. The gradient tolerance is
/// `opts.gradient_tolerance · max(1, E(start))`.
pub fn minimize_diffuse<T: Real, W: Well<T> + Clone>(
    problem: &DiffuseProblem<T, W>,
    starts: &[WarmStart<T>],
    opts: &LbfgsOptions,
) -> Result<MinResult<T>> {
    let eps = problem.eps.as_f64();
    if !(eps > 0.0 && eps <= 0.1) {
        return Err(HomlabError::Parameter(format!(
            "eps = {eps} outside (0, 0.1]"
        )));
    }
    let required = resolving_step(eps);
    if problem.h.as_f64() > required * (1.0 + 1e-12) {
        return Err(HomlabError::GridTooCoarse {
            step: problem.h.as_f64(),
            required,
        });
    }
    if starts.is_empty() {
        return Err(HomlabError::Parameter(
            "at least one warm start is required".into(),
        ));
    }
    for s in starts {
        problem.check(s.profile.values())?;
    }
    let runs: Vec<(StartRecord<T>, Vec<T>)> = starts
        .par_iter()
        .map(|s| {
            let mut x = s.profile.values().to_vec();
            let e0 = problem.evaluate(&x, None).total();
            let mut local = *opts;
            local.gradient_tolerance = opts.gradient_tolerance * e0.as_f64().max(1.0);
            let rep = lbfgs::minimize(problem, &mut x, &local);
            (
                StartRecord {
                    label: s.label.clone(),
                    initial_energy: e0,
                    final_energy: rep.value,
                    iterations: rep.iterations,
                    gradient_norm: rep.gradient_norm,
                    tolerance: T::lit(local.gradient_tolerance),
                    termination: rep.termination,
                },
                x,
            )
        })
        .collect();

    let mut best: Option<usize> = None;
    for (i, (rec, _)) in runs.iter().enumerate() {
        if !rec.final_energy.is_finite() {
            continue;
        }
        if best.is_none_or(|b| rec.final_energy < runs[b].0.final_energy) {
            best = Some(i);
        }
    }
    let Some(b) = best else {
        return Err(HomlabError::Domain(
            "no warm start produced a finite energy".into(),
        ));
    };
    let records: Vec<StartRecord<T>> = runs.iter().map(|(r, _)| r.clone()).collect();
    let (rec, x) = runs.into_iter().nth(b).unwrap();
    Ok(MinResult {
        energy: rec.final_energy,
        profile: DiscreteProfile::new(x)?,
        iterations: rec.iterations,
        gradient_norm: rec.gradient_norm,
        tolerance: rec.tolerance,
        converged: rec.termination == Termination::Converged,
        hit_iteration_cap: rec.termination == Termination::MaxIterations,
        start_index: b,
        start_label: rec.label,
        starts: records,
    })
}
