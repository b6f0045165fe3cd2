//! Sharp-interface cell problem on expanding windows.
//!
//! Admissible profiles are sawtooth functions (continuous, slope `±1`). On the
//! window `[-R/2, R/2]` the energy per unit length is
//!
//! ```text
//! f_{R,m}(u) = (A_0 · #slope changes + m ∫ a(t) u(t)² dt) / R
//! ```
//!
//! with one `A_0` charged per slope change, which is the cost of one optimal
//! diffuse transition. The minimum is computed by a shortest path over
//! `(grid node, u level, incoming slope)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coeff::{CoefficientField, FieldModel, A_MAX, A_MIN};
use crate::error::{HomlabError, Result};
use crate::real::Real;
use crate::stats::mean_std;
use crate::well::a0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Slope {
    Down,
    Up,
}

impl Slope {
    #[inline]
    pub fn sign<T: Real>(self) -> T {
        match self {
            Slope::Down => -T::one(),
            Slope::Up => T::one(),
        }
    }

    #[inline]
    pub fn flip(self) -> Self {
        match self {
            Slope::Down => Slope::Up,
            Slope::Up => Slope::Down,
        }
    }

    #[inline]
    fn step(self) -> i64 {
        match self {
            Slope::Down => -1,
            Slope::Up => 1,
        }
    }

    #[inline]
    fn index(self) -> usize {
        match self {
            Slope::Down => 0,
            Slope::Up => 1,
        }
    }
}

/// Continuous piecewise linear profile with slopes alternating in `{-1, +1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SawtoothProfile<T> {
    anchor: T,
    initial_slope: Slope,
    jumps: Vec<T>,
    window: (T, T),
}

/// One linear piece of a sawtooth: `u(t) = u0 + slope · (t - t0)` on `[t0, t1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment<T> {
    pub t0: T,
    pub t1: T,
    pub u0: T,
    pub slope: Slope,
}

impl<T: Real> Segment<T> {
    pub fn u1(&self) -> T {
        self.u0 + self.slope.sign::<T>() * (self.t1 - self.t0)
    }
}

impl<T: Real> SawtoothProfile<T> {
    /// `anchor` is the value at the left end of `window`.
    pub fn new(window: (T, T), anchor: T, initial_slope: Slope, jumps: Vec<T>) -> Result<Self> {
        if !(window.0 < window.1) {
            return Err(HomlabError::Shape("empty window".into()));
        }
        if jumps.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(HomlabError::Shape(
                "jump positions must increase strictly".into(),
            ));
        }
        if jumps.iter().any(|j| !(*j > window.0 && *j < window.1)) {
            return Err(HomlabError::Shape("jump outside the open window".into()));
        }
        Ok(Self {
            anchor,
            initial_slope,
            jumps,
            window,
        })
    }

    /// Profile on the centered window `[-R/2, R/2]`.
    pub fn centered(r: T, anchor: T, initial_slope: Slope, jumps: Vec<T>) -> Result<Self> {
        let half = r / T::lit(2.0);
        Self::new((-half, half), anchor, initial_slope, jumps)
    }

    pub fn window(&self) -> (T, T) {
        self.window
    }

    pub fn anchor(&self) -> T {
        self.anchor
    }

    pub fn initial_slope(&self) -> Slope {
        self.initial_slope
    }

    pub fn jumps(&self) -> &[T] {
        &self.jumps
    }

    pub fn jump_count(&self) -> usize {
        self.jumps.len()
    }

    pub fn length(&self) -> T {
        self.window.1 - self.window.0
    }

    pub fn final_slope(&self) -> Slope {
        if self.jumps.len().is_multiple_of(2) {
            self.initial_slope
        } else {
            self.initial_slope.flip()
        }
    }

    pub fn segments(&self) -> impl Iterator<Item = Segment<T>> + '_ {
        let n = self.jumps.len();
        let mut u = self.anchor;
        let mut slope = self.initial_slope;
        (0..=n).map(move |i| {
            let t0 = if i == 0 {
                self.window.0
            } else {
                self.jumps[i - 1]
            };
            let t1 = if i == n { self.window.1 } else { self.jumps[i] };
            let seg = Segment {
                t0,
                t1,
                u0: u,
                slope,
            };
            u = seg.u1();
            slope = slope.flip();
            seg
        })
    }

    /// `u(t)`, clamped to the window.
    pub fn eval(&self, t: T) -> T {
        let t = t.max(self.window.0).min(self.window.1);
        let k = self.jumps.partition_point(|j| *j <= t);
        self.segments()
            .nth(k)
            .map(|s| s.u0 + s.slope.sign::<T>() * (t - s.t0))
            .unwrap_or(self.anchor)
    }

    pub fn end_value(&self) -> T {
        self.segments()
            .last()
            .map(|s| s.u1())
            .unwrap_or(self.anchor)
    }
}

/// Minimum gap between consecutive jumps; the window length with fewer than two.
pub fn min_jump_spacing<T: Real>(u: &SawtoothProfile<T>) -> T {
    u.jumps
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(None, |acc: Option<T>, d| Some(acc.map_or(d, |a| a.min(d))))
        .unwrap_or_else(|| u.length())
}

/// `sup |u|` over the window.
pub fn sup_bound_check<T: Real>(u: &SawtoothProfile<T>) -> T {
    u.segments()
        .fold(T::zero(), |acc, s| acc.max(s.u0.abs()).max(s.u1().abs()))
}

/// Default quadrature step of [`sharp_energy`].
pub const DEFAULT_QUADRATURE_STEP: f64 = 1e-3;

/// `f_{R,m}(u)` with the default quadrature step.
pub fn sharp_energy<T: Real>(
    u: &SawtoothProfile<T>,
    field: &CoefficientField<T>,
    m: T,
    r: T,
) -> Result<T> {
    sharp_energy_with_step(u, field, m, r, T::lit(DEFAULT_QUADRATURE_STEP))
}

/// `f_{R,m}(u)`; the integral is split on the uniform grid `-R/2 + i·step` and
/// at the jumps, and each piece uses the midpoint value of `a` against the
/// exact integral of `u²`.
pub fn sharp_energy_with_step<T: Real>(
    u: &SawtoothProfile<T>,
    field: &CoefficientField<T>,
    m: T,
    r: T,
    step: T,
) -> Result<T> {
    let half = r / T::lit(2.0);
    let tol = T::lit(1e-9) * r.max(T::one());
    if (u.window.0 + half).abs() > tol || (u.window.1 - half).abs() > tol {
        return Err(HomlabError::Shape(format!(
            "profile window ({}, {}) differs from [-R/2, R/2] with R = {r}",
            u.window.0, u.window.1
        )));
    }
    if !(m > T::zero()) || !(step > T::zero()) {
        return Err(HomlabError::Parameter("m and step must be positive".into()));
    }
    let lo = u.window.0;
    let third = T::one() / T::lit(3.0);
    let mut integral = T::zero();
    for seg in u.segments() {
        let sign = seg.slope.sign::<T>();
        let mut s0 = seg.t0;
        while s0 < seg.t1 {
            let cell = ((s0 - lo) / step).floor() + T::one();
            let mut s1 = (lo + cell * step).min(seg.t1);
            if s1 <= s0 {
                // rounding put s0 on the node itself
                s1 = (lo + (cell + T::one()) * step).min(seg.t1);
            }
            let v0 = seg.u0 + sign * (s0 - seg.t0);
            let v1 = seg.u0 + sign * (s1 - seg.t0);
            let a = field.eval((s0 + s1) / T::lit(2.0));
            integral += a * (s1 - s0) * (v0 * v0 + v0 * v1 + v1 * v1) * third;
            s0 = s1;
        }
    }
    Ok((a0::<T>() * T::from_usize_lossy(u.jump_count()) + m * integral) / r)
}

/// Closed-form `α` of the constant coefficient `c = m·a`: the optimal uniform
/// sawtooth has period `h = (48 A_0 / c)^{1/3}` and energy `3 A_0 / h`.
pub fn uniform_sawtooth_alpha(c: f64) -> f64 {
    3.0 * a0::<f64>() / optimal_period(c)
}

/// Optimal period `(48 A_0 / c)^{1/3}` of a uniform sawtooth.
pub fn optimal_period(c: f64) -> f64 {
    (48.0 * a0::<f64>() / c).cbrt()
}

/// Constant-coefficient comparison bounds on `α_m` for fields in `[1, 2]`.
pub fn alpha_bounds(m: f64) -> (f64, f64) {
    (
        uniform_sawtooth_alpha(m * A_MIN),
        uniform_sawtooth_alpha(m * A_MAX),
    )
}

/// Smallest jump spacing the grid must resolve: half the optimal period at
/// the stiffest admissible coefficient.
pub fn reference_spacing(m: f64) -> f64 {
    0.5 * optimal_period(m * A_MAX)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    Free,
    /// Left end at `u = 0`, right end within `du` of zero (the parity of the
    /// step count decides whether zero itself is reachable).
    Pinned,
}

/// Discretization of the cell problem. `du` is rounded so that `dx / du` is
/// an integer; `dx` is rounded so that `R / dx` is an integer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpGrid {
    pub dx: f64,
    pub du: f64,
    #[serde(default = "default_cap")]
    pub m_cap: f64,
}

fn default_cap() -> f64 {
    4.0
}

impl DpGrid {
    pub fn new(dx: f64, du: f64) -> Self {
        Self {
            dx,
            du,
            m_cap: default_cap(),
        }
    }

    pub fn with_cap(mut self, m_cap: f64) -> Self {
        self.m_cap = m_cap;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpStats {
    pub steps: usize,
    pub dx: f64,
    pub du: f64,
    pub levels: usize,
    pub nodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult<T> {
    pub r: T,
    pub energy_per_length: T,
    pub jump_count: usize,
    pub min_spacing: T,
    pub sup_abs_u: T,
    pub boundary: Boundary,
    pub stats: DpStats,
}

/// Minimizes `f_{R,m}` over sawtooth profiles whose jumps sit on the grid.
///
/// Ties between paths of equal cost are broken towards fewer jumps, then by
/// the fixed scan order (down before up, low levels first).
pub fn minimize_sharp_dp<T: Real>(
    field: &CoefficientField<T>,
    m: T,
    r: T,
    grid: &DpGrid,
    boundary: Boundary,
) -> Result<(CellResult<T>, SawtoothProfile<T>)> {
    if !(grid.dx > 0.0) || !(grid.du > 0.0) || !(grid.m_cap > 0.0) {
        return Err(HomlabError::Parameter(
            "dx, du and m_cap must be positive".into(),
        ));
    }
    if !(r >= T::one()) || !(m > T::zero()) {
        return Err(HomlabError::Parameter(format!(
            "need R >= 1 and m > 0, got R = {r}, m = {m}"
        )));
    }
    let required = reference_spacing(m.as_f64()) / 4.0;
    if grid.dx > required {
        return Err(HomlabError::GridTooCoarse {
            step: grid.dx,
            required,
        });
    }
    let rf = r.as_f64();
    let steps = ((rf / grid.dx).round() as usize).max(1);
    let dx = r / T::from_usize_lossy(steps);
    let ratio = ((dx.as_f64() / grid.du).round() as i64).max(1);
    let du = dx / T::lit(ratio as f64);
    let cap = ((grid.m_cap / du.as_f64()) + 1e-9).floor() as i64;
    if cap < ratio {
        return Err(HomlabError::Parameter(
            "amplitude cap below one step".into(),
        ));
    }
    let levels = (2 * cap + 1) as usize;
    let nstates = 2 * levels;
    let lo = -r / T::lit(2.0);
    let a0 = a0::<T>();
    let third = T::one() / T::lit(3.0);

    let state = |j: i64, s: Slope| ((j + cap) as usize) * 2 + s.index();
    let level = |j: i64| T::lit(j as f64) * du;

    let inf = T::infinity();
    let mut cost = vec![inf; nstates];
    let mut jumps = vec![u32::MAX; nstates];
    let mut next_cost = vec![inf; nstates];
    let mut next_jumps = vec![u32::MAX; nstates];
    // one byte per (step, state): 1 when the incoming slope flipped at the node
    let mut flipped = vec![0u8; steps * nstates];

    let pin_tol = grid.du * (1.0 + 1e-9);
    for j in -cap..=cap {
        if boundary == Boundary::Pinned && j != 0 {
            continue;
        }
        for s in [Slope::Down, Slope::Up] {
            cost[state(j, s)] = T::zero();
            jumps[state(j, s)] = 0;
        }
    }

    for i in 0..steps {
        let mid = lo + (T::from_usize_lossy(i) + T::lit(0.5)) * dx;
        let w = m * field.eval(mid) * dx * third;
        next_cost.iter_mut().for_each(|c| *c = inf);
        next_jumps.iter_mut().for_each(|c| *c = u32::MAX);
        let row = &mut flipped[i * nstates..(i + 1) * nstates];
        for j in -cap..=cap {
            let u = level(j);
            for s in [Slope::Down, Slope::Up] {
                let from = state(j, s);
                let c0 = cost[from];
                if c0 == inf {
                    continue;
                }
                for s_new in [s, s.flip()] {
                    let flip = s_new != s;
                    if flip && i == 0 {
                        continue;
                    }
                    let j_new = j + s_new.step() * ratio;
                    if j_new.abs() > cap {
                        continue;
                    }
                    let v = level(j_new);
                    let mut c = c0 + w * (u * u + u * v + v * v);
                    let mut nj = jumps[from];
                    if flip {
                        c += a0;
                        nj += 1;
                    }
                    let to = state(j_new, s_new);
                    if c < next_cost[to] || (c == next_cost[to] && nj < next_jumps[to]) {
                        next_cost[to] = c;
                        next_jumps[to] = nj;
                        row[to] = flip as u8;
                    }
                }
            }
        }
        std::mem::swap(&mut cost, &mut next_cost);
        std::mem::swap(&mut jumps, &mut next_jumps);
    }

    let mut best: Option<(T, u32, i64, Slope)> = None;
    for j in -cap..=cap {
        if boundary == Boundary::Pinned && level(j).abs().as_f64() > pin_tol {
            continue;
        }
        for s in [Slope::Down, Slope::Up] {
            let c = cost[state(j, s)];
            let nj = jumps[state(j, s)];
            if c == inf {
                continue;
            }
            let better = match best {
                None => true,
                Some((bc, bj, _, _)) => c < bc || (c == bc && nj < bj),
            };
            if better {
                best = Some((c, nj, j, s));
            }
        }
    }
    let (total, _, mut j, mut s) = best.ok_or_else(|| {
        HomlabError::Parameter("no admissible path: pinned end unreachable on this grid".into())
    })?;

    let mut jump_nodes = Vec::new();
    let mut peak = j.abs();
    for i in (0..steps).rev() {
        let was_flip = flipped[i * nstates + state(j, s)] == 1;
        j -= s.step() * ratio;
        peak = peak.max(j.abs());
        if was_flip {
            jump_nodes.push(i);
            s = s.flip();
        }
    }
    if peak >= cap {
        return Err(HomlabError::CapExceeded { cap: grid.m_cap });
    }
    jump_nodes.reverse();
    let positions: Vec<T> = jump_nodes
        .iter()
        .map(|&i| lo + T::from_usize_lossy(i) * dx)
        .collect();
    let profile = SawtoothProfile::new((lo, -lo), level(j), s, positions)?;
    let result = CellResult {
        r,
        energy_per_length: total / r,
        jump_count: profile.jump_count(),
        min_spacing: min_jump_spacing(&profile),
        sup_abs_u: sup_bound_check(&profile),
        boundary,
        stats: DpStats {
            steps,
            dx: dx.as_f64(),
            du: du.as_f64(),
            levels,
            nodes: (steps + 1) * nstates,
        },
    };
    Ok((result, profile))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowStats {
    pub r: f64,
    pub mean: f64,
    pub std: f64,
    pub samples: usize,
}

/// One `(R, seed)` cell of an `α` sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub r: f64,
    pub seed: u64,
    pub result: CellResult<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaEstimate {
    pub m: f64,
    pub model: FieldModel,
    pub boundary: Boundary,
    pub per_r: Vec<WindowStats>,
    /// Mean energy at the largest window.
    pub alpha: f64,
    /// Set when the spread does not shrink and the mean keeps moving.
    pub flagged: bool,
    pub cells: Vec<SweepCell>,
}

/// Relative change of the mean between the last two windows above which a
/// sweep whose spread is not shrinking gets flagged.
pub const TREND_TOLERANCE: f64 = 0.05;

/// Sweeps `minimize_sharp_dp` over `R_schedule × seeds`; `α` is read at the
/// largest window.
///
/// Each free end of a window saves half a transition, so free windows sit
/// about `A_0 / R` below `α`; pinned windows converge much faster and are the
/// usual choice here.
pub fn estimate_alpha(
    model: &FieldModel,
    m: f64,
    r_schedule: &[f64],
    seeds: &[u64],
    grid: &DpGrid,
    boundary: Boundary,
) -> Result<AlphaEstimate> {
    if r_schedule.is_empty() || r_schedule.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(HomlabError::Parameter(
            "R schedule must be nonempty and increasing".into(),
        ));
    }
    if seeds.len() < 2 {
        return Err(HomlabError::Parameter("need at least two seeds".into()));
    }
    let jobs: Vec<(f64, u64)> = r_schedule
        .iter()
        .flat_map(|&r| seeds.iter().map(move |&s| (r, s)))
        .collect();
    let cells = jobs
        .par_iter()
        .map(|&(r, seed)| {
            let field = CoefficientField::<f64>::realize(model, seed)?;
            let (result, _) = minimize_sharp_dp(&field, m, r, grid, boundary)?;
            Ok(SweepCell { r, seed, result })
        })
        .collect::<Result<Vec<_>>>()?;
    let per_r: Vec<WindowStats> = r_schedule
        .iter()
        .map(|&r| {
            let es: Vec<f64> = cells
                .iter()
                .filter(|c| c.r == r)
                .map(|c| c.result.energy_per_length)
                .collect();
            let (mean, std) = mean_std(&es);
            WindowStats {
                r,
                mean,
                std,
                samples: es.len(),
            }
        })
        .collect();
    let flagged = per_r.len() >= 2 && {
        let a = &per_r[per_r.len() - 2];
        let b = &per_r[per_r.len() - 1];
        let spread_growing = b.std > a.std && b.std > 1e-12;
        let mean_moving = (b.mean - a.mean).abs() > TREND_TOLERANCE * b.mean.abs();
        spread_growing && mean_moving
    };
    Ok(AlphaEstimate {
        m,
        model: model.clone(),
        boundary,
        alpha: per_r.last().map(|w| w.mean).unwrap_or(f64::NAN),
        per_r,
        flagged,
        cells,
    })
}
