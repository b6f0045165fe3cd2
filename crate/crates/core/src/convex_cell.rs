//! Convex cell problems on `Q_R = (-R, R)` and the homogenized Lagrangian.
//!
//! In one dimension the minimizer of `∫ L(y, u')` with affine boundary data
//! `u(±R) = ±qR` has `u'(y) ∈ argmin_s L(y, s) - λ s` for one multiplier `λ`,
//! chosen so that `u'` has mean `q`. The multiplier is found by bisection.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coeff::{CoefficientField, FieldModel};
use crate::error::{HomlabError, Result};
use crate::real::Real;
use crate::stats::mean_std;

/// Shape of `L(y, s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case", deny_unknown_fields)]
pub enum LagrangianForm {
    /// `a(y)|s|^p` with the coefficient field supplied at solve time.
    Power,
    /// Piecewise-linear convex profiles in `s` on `knots`, one row per
    /// `y`-sample; row `k` applies on `[k, k+1)·period/rows` mod `period`.
    /// `L = +∞` outside the knot range.
    Tabulated {
        knots: Vec<f64>,
        rows: Vec<Vec<f64>>,
        period: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LagrangianSpec {
    pub form: LagrangianForm,
    pub p: f64,
    /// `c0` in `c0|s|^p ≤ L(y, s)`.
    pub growth_lower: f64,
    /// `C0` in `L(y, s) ≤ C0 (1 + |s|)^p`.
    pub growth_upper: f64,
}

impl LagrangianSpec {
    /// `a(y)|s|^p` with the growth constants of coefficients in `[1, 2]`.
    pub fn power(p: f64) -> Self {
        Self {
            form: LagrangianForm::Power,
            p,
            growth_lower: crate::coeff::A_MIN,
            growth_upper: crate::coeff::A_MAX,
        }
    }

    pub fn quadratic() -> Self {
        Self::power(2.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p > 1.0) || !self.p.is_finite() {
            return Err(HomlabError::Parameter(format!(
                "p must exceed 1, got {}",
                self.p
            )));
        }
        if !(self.growth_lower > 0.0) || !(self.growth_upper >= self.growth_lower) {
            return Err(HomlabError::Parameter(
                "growth constants need 0 < c0 ≤ C0".into(),
            ));
        }
        if let LagrangianForm::Tabulated {
            knots,
            rows,
            period,
        } = &self.form
        {
            if knots.len() < 2 || knots.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(HomlabError::Spec("knots must increase strictly".into()));
            }
            if rows.is_empty() || !(*period > 0.0) {
                return Err(HomlabError::Spec("need rows and a positive period".into()));
            }
            for (k, row) in rows.iter().enumerate() {
                if row.len() != knots.len() {
                    return Err(HomlabError::Shape(format!(
                        "row {k} has {} values for {} knots",
                        row.len(),
                        knots.len()
                    )));
                }
                let slopes = slopes(knots, row);
                if slopes.windows(2).any(|w| w[1] < w[0] - 1e-12) {
                    return Err(HomlabError::Spec(format!("row {k} is not convex")));
                }
                for (s, l) in knots.iter().zip(row) {
                    let (lo, hi) = self.growth_bounds(*s);
                    if *l < lo - 1e-12 || *l > hi + 1e-12 {
                        return Err(HomlabError::Spec(format!(
                            "row {k} violates the growth bounds at s = {s}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// `(c0|s|^p, C0(1 + |s|)^p)`.
    pub fn growth_bounds(&self, s: f64) -> (f64, f64) {
        (
            self.growth_lower * s.abs().powf(self.p),
            self.growth_upper * (1.0 + s.abs()).powf(self.p),
        )
    }
}

fn slopes(knots: &[f64], row: &[f64]) -> Vec<f64> {
    knots
        .windows(2)
        .zip(row.windows(2))
        .map(|(k, r)| (r[1] - r[0]) / (k[1] - k[0]))
        .collect()
}

/// Per-cell data of a discretized `Q_R`.
enum CellLaw<T> {
    Power {
        p: T,
        a: Vec<T>,
    },
    Tabulated {
        knots: Vec<T>,
        rows: Vec<Vec<T>>,
        slopes: Vec<Vec<T>>,
        row_of: Vec<usize>,
    },
}

impl<T: Real> CellLaw<T> {
    fn value(&self, j: usize, s: T) -> T {
        match self {
            CellLaw::Power { p, a } => a[j] * s.abs().powf(*p),
            CellLaw::Tabulated {
                knots,
                rows,
                row_of,
                ..
            } => {
                let row = &rows[row_of[j]];
                let k = knots.partition_point(|x| *x <= s).clamp(1, knots.len() - 1);
                if s < knots[0] || s > knots[knots.len() - 1] {
                    return T::infinity();
                }
                let w = (s - knots[k - 1]) / (knots[k] - knots[k - 1]);
                row[k - 1] * (T::one() - w) + row[k] * w
            }
        }
    }

    /// A point of `argmin_s L(y_j, s) - λ s`.
    fn argmin(&self, j: usize, lambda: T) -> T {
        match self {
            CellLaw::Power { p, a } => {
                let mag = (lambda.abs() / (*p * a[j])).powf(T::one() / (*p - T::one()));
                if lambda < T::zero() {
                    -mag
                } else {
                    mag
                }
            }
            CellLaw::Tabulated {
                knots,
                slopes,
                row_of,
                ..
            } => {
                // first knot whose right slope is at least λ
                let sl = &slopes[row_of[j]];
                knots[sl.partition_point(|s| *s < lambda)]
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomogenizedPoint<T> {
    pub q: T,
    pub r: T,
    pub m_r: T,
    pub lambda: T,
    pub seed: u64,
    /// `|mean(u') - q|` after the final interpolation.
    pub constraint_error: T,
}

/// Minimal slopes of the cell problem on `Q_R` together with the point.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSolution<T> {
    pub point: HomogenizedPoint<T>,
    pub slopes: Vec<T>,
    pub dx: T,
}

impl<T: Real> CellSolution<T> {
    /// Nodal values on `y_j = R(2j/n - 1)`, starting from `-qR`.
    pub fn profile(&self) -> CellProfile<T> {
        let mut values = Vec::with_capacity(self.slopes.len() + 1);
        let mut u = -self.point.q * self.point.r;
        values.push(u);
        for s in &self.slopes {
            u += *s * self.dx;
            values.push(u);
        }
        CellProfile {
            r: self.point.r,
            values,
        }
    }
}

/// Grid function on `[-R, R]` with nodes `y_j = R(2j/n - 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CellProfile<T> {
    pub r: T,
    pub values: Vec<T>,
}

impl<T: Real> CellProfile<T> {
    pub fn cells(&self) -> usize {
        self.values.len() - 1
    }

    pub fn y(&self, j: usize) -> T {
        let n = T::from_usize_lossy(self.cells());
        self.r * (T::lit(2.0) * T::from_usize_lossy(j) / n - T::one())
    }

    pub fn dx(&self) -> T {
        T::lit(2.0) * self.r / T::from_usize_lossy(self.cells())
    }
}

fn cell_count<T: Real>(r: T, dx: T) -> Result<usize> {
    if !(r >= T::one()) {
        return Err(HomlabError::Parameter(format!(
            "R must be at least 1, got {r}"
        )));
    }
    if !(dx > T::zero() && dx <= T::lit(0.1)) {
        return Err(HomlabError::Parameter(format!(
            "dx must lie in (0, 0.1], got {dx}"
        )));
    }
    Ok((T::lit(2.0) * r / dx)
        .round()
        .to_usize()
        .unwrap_or(1)
        .max(1))
}

fn law_on_grid<T: Real>(
    spec: &LagrangianSpec,
    field: &CoefficientField<T>,
    r: T,
    n: usize,
) -> CellLaw<T> {
    let h = T::lit(2.0) * r / T::from_usize_lossy(n);
    let mid = |j: usize| -r + (T::from_usize_lossy(j) + T::lit(0.5)) * h;
    match &spec.form {
        LagrangianForm::Power => CellLaw::Power {
            p: T::lit(spec.p),
            a: (0..n).map(|j| field.eval(mid(j))).collect(),
        },
        LagrangianForm::Tabulated {
            knots,
            rows,
            period,
        } => {
            let k = rows.len();
            let row_of = (0..n)
                .map(|j| {
                    let z = (mid(j).as_f64() / period).rem_euclid(1.0);
                    ((z * k as f64) as usize).min(k - 1)
                })
                .collect();
            CellLaw::Tabulated {
                knots: knots.iter().map(|x| T::lit(*x)).collect(),
                rows: rows
                    .iter()
                    .map(|r| r.iter().map(|x| T::lit(*x)).collect())
                    .collect(),
                slopes: rows
                    .iter()
                    .map(|r| slopes(knots, r).into_iter().map(T::lit).collect())
                    .collect(),
                row_of,
            }
        }
    }
}

/// `m_R(q)` for one realization, by dual bisection on `λ`.
pub fn cell_minimum_1d<T: Real>(
    spec: &LagrangianSpec,
    field: &CoefficientField<T>,
    q: T,
    r: T,
    dx: T,
) -> Result<CellSolution<T>> {
    spec.validate()?;
    let n = cell_count(r, dx)?;
    let law = law_on_grid(spec, field, r, n);
    let nn = T::from_usize_lossy(n);
    let mean_at = |lambda: T| (0..n).map(|j| law.argmin(j, lambda)).sum::<T>() / nn;

    let c = spec.growth_upper * spec.p * (1.0 + q.as_f64().abs()).powf(spec.p - 1.0) * 4.0;
    let (mut lo, mut hi) = (T::lit(-c), T::lit(c));
    let mut expansions = 0;
    while !(mean_at(lo) <= q && mean_at(hi) >= q) {
        expansions += 1;
        if expansions > 60 {
            return Err(HomlabError::Spec(format!(
                "no multiplier in [{lo}, {hi}] reaches the mean slope q = {q}"
            )));
        }
        lo *= T::lit(2.0);
        hi *= T::lit(2.0);
    }
    for _ in 0..400 {
        let mid = (lo + hi) * T::lit(0.5);
        if mid <= lo || mid >= hi {
            break;
        }
        if mean_at(mid) < q {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let s_lo: Vec<T> = (0..n).map(|j| law.argmin(j, lo)).collect();
    let s_hi: Vec<T> = (0..n).map(|j| law.argmin(j, hi)).collect();
    let m_lo = s_lo.iter().copied().sum::<T>() / nn;
    let m_hi = s_hi.iter().copied().sum::<T>() / nn;
    let theta = if m_hi > m_lo {
        ((q - m_lo) / (m_hi - m_lo)).max(T::zero()).min(T::one())
    } else {
        T::lit(0.5)
    };
    let slopes: Vec<T> = s_lo
        .iter()
        .zip(&s_hi)
        .map(|(a, b)| *a + theta * (*b - *a))
        .collect();
    let mean = slopes.iter().copied().sum::<T>() / nn;
    let m_r = (0..n).map(|j| law.value(j, slopes[j])).sum::<T>() / nn;
    Ok(CellSolution {
        point: HomogenizedPoint {
            q,
            r,
            m_r,
            lambda: (lo + hi) * T::lit(0.5),
            seed: field.seed(),
            constraint_error: (mean - q).abs(),
        },
        slopes,
        dx: T::lit(2.0) * r / nn,
    })
}

/// Mean energy `(1/|Q_R|) ∫ L(y, u')` of a nodal profile.
pub fn cell_energy<T: Real>(
    spec: &LagrangianSpec,
    field: &CoefficientField<T>,
    u: &CellProfile<T>,
) -> Result<T> {
    spec.validate()?;
    let n = u.cells();
    if n == 0 {
        return Err(HomlabError::Shape("profile needs at least 2 nodes".into()));
    }
    let law = law_on_grid(spec, field, u.r, n);
    let h = u.dx();
    Ok((0..n)
        .map(|j| law.value(j, (u.values[j + 1] - u.values[j]) / h))
        .sum::<T>()
        / T::from_usize_lossy(n))
}

/// `χ_δ(s) = min(1, (1 - |s|)/δ)`: one on `[-(1-δ), 1-δ]`, zero at `±1`.
pub fn cutoff<T: Real>(s: T, delta: T) -> T {
    ((T::one() - s.abs()) / delta).max(T::zero()).min(T::one())
}

/// `v_δ(y) = q y + χ_δ(y/R)(u(y) - q y)`.
pub fn glue_affine_boundary<T: Real>(u: &CellProfile<T>, q: T, delta: T) -> Result<CellProfile<T>> {
    if !(delta > T::zero() && delta < T::one()) {
        return Err(HomlabError::Parameter(format!(
            "delta must lie in (0, 1), got {delta}"
        )));
    }
    if u.values.len() < 2 {
        return Err(HomlabError::Shape("profile needs at least 2 nodes".into()));
    }
    let n = u.cells();
    let values = (0..=n)
        .map(|j| {
            let y = u.y(j);
            let affine = q * y;
            let chi = cutoff(
                T::from_usize_lossy(j) * T::lit(2.0) / T::from_usize_lossy(n) - T::one(),
                delta,
            );
            if chi == T::zero() {
                affine
            } else {
                affine + chi * (u.values[j] - affine)
            }
        })
        .collect();
    Ok(CellProfile { r: u.r, values })
}

/// Terms bounding the gluing excess: `δ(1 + |q|^p)`, the layer average of
/// `|u'|^p`, and `⟨|(u - qy)/(δR)|^p⟩` from the cutoff gradient.
pub fn glue_remainder_terms<T: Real>(u: &CellProfile<T>, q: T, delta: T, p: T) -> [T; 3] {
    let n = u.cells();
    let nn = T::from_usize_lossy(n);
    let h = u.dx();
    let mut layer = T::zero();
    let mut gradient = T::zero();
    for j in 0..n {
        let s = (T::from_usize_lossy(j) + T::lit(0.5)) * T::lit(2.0) / nn - T::one();
        if s.abs() > T::one() - delta {
            let du = (u.values[j + 1] - u.values[j]) / h;
            layer += du.abs().powf(p);
            let y = u.r * s;
            let mid = (u.values[j + 1] + u.values[j]) * T::lit(0.5);
            gradient += ((mid - q * y) / (delta * u.r)).abs().powf(p);
        }
    }
    [
        delta * (T::one() + q.abs().powf(p)),
        layer / nn,
        gradient / nn,
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSpread {
    pub r: f64,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomogenizedEstimate {
    pub q: f64,
    /// Seed mean of `m_R` at the largest `R`.
    pub f_star: f64,
    pub per_r: Vec<WindowSpread>,
    /// Across-seed spread at the largest `R` is below the smallest-`R` spread.
    pub concentrating: bool,
    pub points: Vec<HomogenizedPoint<f64>>,
}

/// `f_*(q)` estimated by `m_R` over seeds, for each `q`.
pub fn homogenized_lagrangian(
    spec: &LagrangianSpec,
    model: &FieldModel,
    qs: &[f64],
    r_schedule: &[f64],
    seeds: &[u64],
    dx: f64,
) -> Result<Vec<HomogenizedEstimate>> {
    spec.validate()?;
    model.validate()?;
    if r_schedule.is_empty() || seeds.is_empty() || qs.is_empty() {
        return Err(HomlabError::Parameter(
            "need q values, a schedule and seeds".into(),
        ));
    }
    let fields: Vec<CoefficientField<f64>> = seeds
        .iter()
        .map(|s| CoefficientField::realize(model, *s))
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, usize, usize)> = (0..qs.len())
        .flat_map(|i| {
            (0..r_schedule.len()).flat_map(move |k| (0..seeds.len()).map(move |s| (i, k, s)))
        })
        .collect();
    let points: Vec<HomogenizedPoint<f64>> = jobs
        .par_iter()
        .map(|&(i, k, s)| Ok(cell_minimum_1d(spec, &fields[s], qs[i], r_schedule[k], dx)?.point))
        .collect::<Result<_>>()?;

    let per = r_schedule.len() * seeds.len();
    Ok(qs
        .iter()
        .enumerate()
        .map(|(i, q)| {
            let pts = &points[i * per..(i + 1) * per];
            let per_r: Vec<WindowSpread> = r_schedule
                .iter()
                .enumerate()
                .map(|(k, r)| {
                    let vals: Vec<f64> = pts[k * seeds.len()..(k + 1) * seeds.len()]
                        .iter()
                        .map(|p| p.m_r)
                        .collect();
                    let (mean, std) = mean_std(&vals);
                    WindowSpread { r: *r, mean, std }
                })
                .collect();
            let (first, last) = (&per_r[0], &per_r[per_r.len() - 1]);
            HomogenizedEstimate {
                q: *q,
                f_star: last.mean,
                concentrating: per_r.len() < 2 || last.std <= first.std,
                per_r,
                points: pts.to_vec(),
            }
        })
        .collect())
}

pub fn write_points_csv(points: &[HomogenizedPoint<f64>], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["q", "R", "seed", "m_R", "lambda"])?;
    for p in points {
        w.write_record([
            p.q.to_string(),
            p.r.to_string(),
            p.seed.to_string(),
            p.m_r.to_string(),
            p.lambda.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvexityViolation {
    pub q: [f64; 3],
    /// Amount by which the middle value exceeds the chord.
    pub excess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvexityReport {
    pub triples: usize,
    pub violations: Vec<ConvexityViolation>,
}

impl ConvexityReport {
    pub fn convex(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Three-point convexity on every ordered triple of `(q, f)` samples.
pub fn convexity_check(samples: &[(f64, f64)], tol: f64) -> Result<ConvexityReport> {
    if samples.len() < 3 {
        return Err(HomlabError::Parameter("need at least 3 points".into()));
    }
    let mut pts = samples.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut report = ConvexityReport {
        triples: 0,
        violations: Vec::new(),
    };
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            for k in j + 1..pts.len() {
                let (a, b, c) = (pts[i], pts[j], pts[k]);
                if c.0 == a.0 {
                    continue;
                }
                report.triples += 1;
                let t = (b.0 - a.0) / (c.0 - a.0);
                let chord = a.1 * (1.0 - t) + c.1 * t;
                if b.1 > chord + tol {
                    report.violations.push(ConvexityViolation {
                        q: [a.0, b.0, c.0],
                        excess: b.1 - chord,
                    });
                }
            }
        }
    }
    Ok(report)
}
