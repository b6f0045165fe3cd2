//! Yosida regularization and the Γ-convergence distance on sampled
//! functionals, and a Γ-limit proximity check for the micro integrand.
//!
//! A functional is known only on a finite sample set, so the infimum in the
//! Yosida regularization runs over samples and is an upper bound on the
//! true value.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coeff::CoefficientField;
use crate::diffuse::window_integral;
use crate::error::{HomlabError, Result};
use crate::real::Real;
use crate::well::{a0, QuarticWell};

/// Profile window sampled on `t_i = t0 + i·step`, paired with a position `y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePoint<T> {
    pub u: Vec<T>,
    pub y: T,
}

/// Windows share `t0`, `step` and length; the base metric is the `L²`
/// distance of windows plus `|y - z|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscretizedFunctional<T> {
    pub t0: T,
    pub step: T,
    pub samples: Vec<SamplePoint<T>>,
    /// Nonnegative; `+∞` marks points outside the domain.
    pub values: Vec<T>,
}

impl<T: Real> DiscretizedFunctional<T> {
    pub fn new(t0: T, step: T, samples: Vec<SamplePoint<T>>, values: Vec<T>) -> Result<Self> {
        if samples.is_empty() {
            return Err(HomlabError::Shape(
                "a functional needs at least one sample".into(),
            ));
        }
        if samples.len() != values.len() {
            return Err(HomlabError::Shape(format!(
                "{} samples but {} values",
                samples.len(),
                values.len()
            )));
        }
        let len = samples[0].u.len();
        if samples.iter().any(|s| s.u.len() != len) {
            return Err(HomlabError::Shape("sample windows differ in length".into()));
        }
        if values.iter().any(|v| v.is_nan() || *v < T::zero()) {
            return Err(HomlabError::Parameter("values must be nonnegative".into()));
        }
        if !values.iter().any(|v| v.is_finite()) {
            return Err(HomlabError::Parameter(
                "at least one value must be finite".into(),
            ));
        }
        if !(step > T::zero()) {
            return Err(HomlabError::Parameter("step must be positive".into()));
        }
        Ok(Self {
            t0,
            step,
            samples,
            values,
        })
    }

    pub fn distance(&self, a: &SamplePoint<T>, b: &SamplePoint<T>) -> T {
        window_distance(&a.u, &b.u, self.step) + (a.y - b.y).abs()
    }

    fn compatible(&self, other: &Self) -> bool {
        self.step == other.step
            && self.t0 == other.t0
            && self.samples[0].u.len() == other.samples[0].u.len()
    }
}

/// `(Σ step·(u_i - v_i)²)^{1/2}`.
pub fn window_distance<T: Real>(u: &[T], v: &[T], step: T) -> T {
    (u.iter()
        .zip(v)
        .map(|(a, b)| (*a - *b) * (*a - *b))
        .sum::<T>()
        * step)
        .sqrt()
}

/// `R_λ f(u0, y0) = min_i f_i + λ (d(u_i, u0) + |y_i - y0|)`.
pub fn yosida<T: Real>(
    f: &DiscretizedFunctional<T>,
    lambda: T,
    probe: &SamplePoint<T>,
) -> Result<T> {
    if !(lambda > T::zero()) {
        return Err(HomlabError::Parameter(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    if probe.u.len() != f.samples[0].u.len() {
        return Err(HomlabError::Shape(
            "probe window length differs from the samples".into(),
        ));
    }
    Ok(yosida_from_distances(
        &f.values,
        f.samples.iter().map(|s| f.distance(s, probe)),
        lambda,
    ))
}

fn yosida_from_distances<T: Real>(values: &[T], dist: impl Iterator<Item = T>, lambda: T) -> T {
    values
        .iter()
        .zip(dist)
        .filter(|(v, _)| v.is_finite())
        .map(|(v, d)| *v + lambda * d)
        .fold(T::infinity(), T::min)
}

/// `φ(t) = t/(1+t)`, with `φ(∞) = 1`.
pub fn squash<T: Real>(t: T) -> T {
    if t.is_infinite() {
        T::one()
    } else {
        t / (T::one() + t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaDistanceConfig<T> {
    pub probes: Vec<SamplePoint<T>>,
    /// Increasing positive multipliers.
    pub lambdas: Vec<T>,
    /// Only the first `truncation` probes enter the sum.
    pub truncation: usize,
}

impl<T: Real> GammaDistanceConfig<T> {
    pub fn new(probes: Vec<SamplePoint<T>>) -> Self {
        Self {
            probes,
            lambdas: [1.0, 2.0, 4.0, 8.0, 16.0]
                .iter()
                .map(|x| T::lit(*x))
                .collect(),
            truncation: 16,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.probes.is_empty() || self.truncation == 0 {
            return Err(HomlabError::Parameter("need at least one probe".into()));
        }
        if self.lambdas.is_empty()
            || self.lambdas[0] <= T::zero()
            || self.lambdas.windows(2).any(|w| !(w[0] < w[1]))
        {
            return Err(HomlabError::Parameter(
                "lambda ladder must be positive and increasing".into(),
            ));
        }
        Ok(())
    }

    fn used(&self) -> &[SamplePoint<T>] {
        &self.probes[..self.truncation.min(self.probes.len())]
    }
}

/// Yosida values `R_λ f(u_k, y_k)` for every rung and used probe, row-major
/// by rung.
pub fn yosida_table<T: Real>(
    f: &DiscretizedFunctional<T>,
    cfg: &GammaDistanceConfig<T>,
) -> Result<Vec<T>> {
    cfg.validate()?;
    let probes = cfg.used();
    if probes.iter().any(|p| p.u.len() != f.samples[0].u.len()) {
        return Err(HomlabError::Shape(
            "probe window length differs from the samples".into(),
        ));
    }
    let dist: Vec<Vec<T>> = probes
        .par_iter()
        .map(|p| f.samples.iter().map(|s| f.distance(s, p)).collect())
        .collect();
    Ok(cfg
        .lambdas
        .iter()
        .flat_map(|l| {
            dist.iter()
                .map(|d| yosida_from_distances(&f.values, d.iter().copied(), *l))
                .collect::<Vec<_>>()
        })
        .collect())
}

/// `Σ_{λ,k} 2^{-λ-k} |φ(R_λ f(u_k, y_k)) - φ(R_λ g(u_k, y_k))|`, `k` counted
/// from 1.
pub fn gamma_distance<T: Real>(
    f: &DiscretizedFunctional<T>,
    g: &DiscretizedFunctional<T>,
    cfg: &GammaDistanceConfig<T>,
) -> Result<T> {
    if !f.compatible(g) {
        return Err(HomlabError::Shape(
            "functionals use different base windows".into(),
        ));
    }
    let rf = yosida_table(f, cfg)?;
    let rg = yosida_table(g, cfg)?;
    Ok(distance_from_tables(&rf, &rg, cfg))
}

fn distance_from_tables<T: Real>(rf: &[T], rg: &[T], cfg: &GammaDistanceConfig<T>) -> T {
    let k_count = cfg.used().len();
    let mut acc = T::zero();
    for (i, l) in cfg.lambdas.iter().enumerate() {
        for k in 0..k_count {
            let w = T::lit(2.0).powf(-*l - T::from_usize_lossy(k + 1));
            let idx = i * k_count + k;
            acc += w * (squash(rf[idx]) - squash(rg[idx])).abs();
        }
    }
    acc
}

/// Outcome of the Yosida property checks; every list names failing cases.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct YosidaProperties {
    pub below_f: Vec<usize>,
    pub monotone: Vec<usize>,
    pub lipschitz: Vec<(usize, usize)>,
    pub sup_recovery: Vec<usize>,
    /// Samples whose value the ladder is too short to recover; they are only
    /// required to satisfy `sup_λ R_λ f ≤ f`.
    pub beyond_ladder: usize,
    pub checked_pairs: usize,
}

impl YosidaProperties {
    pub fn passed(&self) -> bool {
        self.below_f.is_empty()
            && self.monotone.is_empty()
            && self.lipschitz.is_empty()
            && self.sup_recovery.is_empty()
    }
}

/// Checks `R_λ f ≤ f` at samples, monotonicity along the ladder, the
/// `λ`-Lipschitz bound on `pairs` random probe pairs, and sup-recovery: at a
/// sample `s` whose threshold `max_o (f(s) - f(o))₊ / d(o, s)` is within the
/// ladder, the top rung reproduces `f(s)` exactly.
#[allow(clippy::needless_range_loop)]
pub fn check_yosida_properties<T: Real>(
    f: &DiscretizedFunctional<T>,
    lambdas: &[T],
    pairs: usize,
    seed: u64,
) -> YosidaProperties {
    let n = f.samples.len();
    let dist: Vec<Vec<T>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| f.distance(&f.samples[i], &f.samples[j]))
                .collect()
        })
        .collect();
    let r = |l: T, i: usize| yosida_from_distances(&f.values, dist[i].iter().copied(), l);
    let slack = |x: T| T::lit(64.0) * T::epsilon() * x.abs().max(T::one());
    let mut out = YosidaProperties::default();
    for i in 0..n {
        let mut prev = T::neg_infinity();
        for l in lambdas {
            let v = r(*l, i);
            if v > f.values[i] {
                out.below_f.push(i);
            }
            if v < prev {
                out.monotone.push(i);
            }
            prev = v;
        }
        if !f.values[i].is_finite() {
            continue;
        }
        let threshold = (0..n)
            .filter(|&o| o != i && dist[i][o] > T::zero())
            .map(|o| (f.values[i] - f.values[o]).max(T::zero()) / dist[i][o])
            .fold(T::zero(), T::max);
        match lambdas.last() {
            Some(top) if *top >= threshold => {
                if r(*top, i) != f.values[i] {
                    out.sup_recovery.push(i);
                }
            }
            _ => out.beyond_ladder += 1,
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..pairs {
        let (i, j) = (rng.random_range(0..n), rng.random_range(0..n));
        let l = lambdas[rng.random_range(0..lambdas.len())];
        let (a, b) = (r(l, i), r(l, j));
        if a.is_finite() && b.is_finite() && (a - b).abs() > l * dist[i][j] + slack(a.max(b)) {
            out.lipschitz.push((i, j));
        }
        out.checked_pairs += 1;
    }
    out
}

/// Analytic probe shapes in the micro variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum ProbeShape {
    /// Slopes `±1` flipping at `phase + j·period/2`, starting upwards from
    /// `offset` at `t = phase`.
    Sawtooth {
        period: f64,
        phase: f64,
        offset: f64,
    },
    /// `offset + slope·t`.
    Affine { slope: f64, offset: f64 },
    /// `|t - at|` shifted by `offset`: one flip.
    Transition { at: f64, offset: f64 },
    /// A smooth random Fourier sum, never a sawtooth.
    Noise { seed: u64, amplitude: f64 },
}

impl ProbeShape {
    /// Flip positions inside `[lo, hi]`.
    fn flips(&self, lo: f64, hi: f64) -> Vec<(f64, f64)> {
        match self {
            ProbeShape::Sawtooth { period, phase, .. } => {
                let half = 0.5 * period;
                let first = ((lo - phase) / half).floor() as i64;
                let last = ((hi - phase) / half).ceil() as i64;
                (first..=last)
                    .filter_map(|j| {
                        let at = phase + j as f64 * half;
                        // the slope turns down at odd multiples of the half period
                        let after = if j.rem_euclid(2) == 1 { -1.0 } else { 1.0 };
                        (at > lo && at < hi).then_some((at, 2.0 * after))
                    })
                    .collect()
            }
            ProbeShape::Transition { at, .. } => {
                if *at > lo && *at < hi {
                    vec![(*at, 2.0)]
                } else {
                    vec![]
                }
            }
            _ => vec![],
        }
    }

    /// Sharp value `u(t)`.
    pub fn sharp(&self, t: f64) -> f64 {
        self.evaluator()(t)
    }

    /// `t ↦ u(t)`, with any random coefficients drawn once.
    pub fn evaluator(&self) -> Box<dyn Fn(f64) -> f64 + Send + Sync + '_> {
        match self {
            ProbeShape::Sawtooth {
                period,
                phase,
                offset,
            } => Box::new(move |t| {
                let z = (t - phase).rem_euclid(*period);
                let half = 0.5 * period;
                offset + if z < half { z } else { period - z }
            }),
            ProbeShape::Affine { slope, offset } => Box::new(move |t| offset + slope * t),
            ProbeShape::Transition { at, offset } => Box::new(move |t| offset + (t - at).abs()),
            ProbeShape::Noise { seed, amplitude } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let terms: Vec<(f64, f64)> = (0..6)
                    .map(|_| (rng.random_range(-1.0..1.0), rng.random()))
                    .collect();
                Box::new(move |t| {
                    terms
                        .iter()
                        .enumerate()
                        .map(|(k, (c, p))| {
                            let k = (k + 1) as f64;
                            c * (std::f64::consts::PI * k * (t + p)).sin() / k
                        })
                        .sum::<f64>()
                        * amplitude
                })
            }
        }
    }

    /// `u` with every flip replaced by the optimal transition of width `w`.
    pub fn smoothed(&self, t: f64, w: f64, flips: &[(f64, f64)]) -> f64 {
        smooth_at(self.sharp(t), t, w, flips)
    }

    /// Whether `|u'| = 1` away from finitely many flips.
    pub fn is_sawtooth(&self) -> bool {
        !matches!(self, ProbeShape::Noise { .. })
            && match self {
                ProbeShape::Affine { slope, .. } => slope.abs() == 1.0,
                _ => true,
            }
    }
}

fn smooth_at(mut v: f64, t: f64, w: f64, flips: &[(f64, f64)]) -> f64 {
    for (at, delta) in flips {
        let z = (t - at).abs() * 2.0 / w;
        if z < 80.0 {
            v += delta * 0.5 * w * (-z).exp().ln_1p();
        }
    }
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub label: String,
    pub shape: ProbeShape,
    pub y: f64,
}

/// 64 probes mixing sawtooth, affine, single-transition and noise shapes,
/// positions cycling through `{-1/4, 0, 1/4}`.
pub fn default_probes(seed: u64) -> Vec<Probe> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ys = [-0.25, 0.0, 0.25];
    let mut shapes = Vec::with_capacity(64);
    for _ in 0..24 {
        shapes.push(ProbeShape::Sawtooth {
            period: rng.random_range(0.3..2.5),
            phase: rng.random_range(-1.0..1.0),
            offset: rng.random_range(-0.5..0.0),
        });
    }
    for i in 0..12 {
        let slope = if i < 4 {
            if i % 2 == 0 {
                1.0
            } else {
                -1.0
            }
        } else {
            rng.random_range(-0.9..0.9)
        };
        shapes.push(ProbeShape::Affine {
            slope,
            offset: rng.random_range(-0.3..0.3),
        });
    }
    for _ in 0..16 {
        shapes.push(ProbeShape::Transition {
            at: rng.random_range(-0.6..0.6),
            offset: rng.random_range(-0.4..0.0),
        });
    }
    for _ in 0..12 {
        shapes.push(ProbeShape::Noise {
            seed: rng.random(),
            amplitude: rng.random_range(0.05..0.5),
        });
    }
    shapes
        .into_iter()
        .enumerate()
        .map(|(k, shape)| Probe {
            label: format!("probe_{k:02}"),
            shape,
            y: ys[k % ys.len()],
        })
        .collect()
}

/// Common micro grid for snapshots, symmetric about 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnapshotGrid {
    pub half_width: f64,
    pub step: f64,
}

impl SnapshotGrid {
    /// Windows on `[-0.8, 0.8]`, enough for unit windows at `|y| ≤ 1/4`,
    /// with 48 nodes per transition width `ε_min²`. Coarser grids let the
    /// finite-difference error of the narrowest transitions swamp the
    /// distance being measured.
    pub fn for_eps(eps_min: f64) -> Self {
        let target = eps_min * eps_min / 48.0;
        // a multiple of 5 nodes per unit puts both ends of [-0.8, 0.8] on the grid
        let per_unit = 5.0 * (0.2 / target).ceil();
        let step = 1.0 / per_unit;
        Self {
            half_width: 0.8,
            step,
        }
    }

    pub fn nodes(&self) -> usize {
        (2.0 * self.half_width / self.step).round() as usize + 1
    }

    pub fn t(&self, i: usize) -> f64 {
        -self.half_width + i as f64 * self.step
    }
}

fn unit_window_nodes(grid: &SnapshotGrid, y: f64) -> Result<(usize, usize)> {
    let k = (1.0 / grid.step).round() as usize;
    let start = ((y - 0.5 + grid.half_width) / grid.step).round();
    if start < 1.0 || start as usize + k + 1 >= grid.nodes() {
        return Err(HomlabError::Domain(format!(
            "unit window at y = {y} leaves the snapshot grid"
        )));
    }
    Ok((start as usize, start as usize + k))
}

/// `f_ε^{ω,x}(u, y)` for a window sampled on `grid`.
pub fn micro_integrand(
    u: &[f64],
    grid: &SnapshotGrid,
    y: f64,
    eps: f64,
    field: &CoefficientField<f64>,
    m_value: f64,
) -> Result<f64> {
    let (i0, i1) = unit_window_nodes(grid, y)?;
    Ok(window_integral(
        u,
        grid.step,
        i0,
        i1,
        eps,
        m_value,
        &QuarticWell,
        |i| field.eval(grid.t(i)),
    ))
}

/// Sharp integrand: `A_0·(flips in I_y) + ∫_{I_y} m a u²` for sawtooth
/// shapes, `+∞` otherwise.
pub fn sharp_integrand(
    shape: &ProbeShape,
    grid: &SnapshotGrid,
    y: f64,
    field: &CoefficientField<f64>,
    m_value: f64,
) -> Result<f64> {
    if !shape.is_sawtooth() {
        return Ok(f64::INFINITY);
    }
    let (i0, i1) = unit_window_nodes(grid, y)?;
    let jumps = shape.flips(grid.t(i0), grid.t(i1)).len() as f64;
    let mut conf = 0.0;
    for i in i0..=i1 {
        let u = shape.sharp(grid.t(i));
        let w = if i == i0 || i == i1 { 0.5 } else { 1.0 };
        conf += w * field.eval(grid.t(i)) * u * u;
    }
    Ok(a0::<f64>() * jumps + m_value * conf * grid.step)
}

fn sample_window(shape: &ProbeShape, grid: &SnapshotGrid, smoothing: Option<f64>) -> Vec<f64> {
    let lo = grid.t(0) - 1.0;
    let hi = grid.t(grid.nodes() - 1) + 1.0;
    let flips = shape.flips(lo, hi);
    let u = shape.evaluator();
    (0..grid.nodes())
        .map(|i| {
            let t = grid.t(i);
            match smoothing {
                Some(w) => smooth_at(u(t), t, w, &flips),
                None => u(t),
            }
        })
        .collect()
}

/// Snapshot of `f_ε` on the ε-smoothed probes.
pub fn diffuse_snapshot(
    probes: &[Probe],
    grid: &SnapshotGrid,
    eps: f64,
    field: &CoefficientField<f64>,
    m_value: f64,
) -> Result<DiscretizedFunctional<f64>> {
    let w = eps * eps;
    let rows: Vec<(SamplePoint<f64>, f64)> = probes
        .par_iter()
        .map(|p| {
            let u = sample_window(&p.shape, grid, Some(w));
            let v = micro_integrand(&u, grid, p.y, eps, field, m_value)?;
            Ok((SamplePoint { u, y: p.y }, v))
        })
        .collect::<Result<_>>()?;
    let (samples, values) = rows.into_iter().unzip();
    DiscretizedFunctional::new(-grid.half_width, grid.step, samples, values)
}

/// Snapshot of the sharp integrand on the unsmoothed probes.
pub fn sharp_snapshot(
    probes: &[Probe],
    grid: &SnapshotGrid,
    field: &CoefficientField<f64>,
    m_value: f64,
) -> Result<DiscretizedFunctional<f64>> {
    let rows: Vec<(SamplePoint<f64>, f64)> = probes
        .par_iter()
        .map(|p| {
            let u = sample_window(&p.shape, grid, None);
            let v = sharp_integrand(&p.shape, grid, p.y, field, m_value)?;
            Ok((SamplePoint { u, y: p.y }, v))
        })
        .collect::<Result<_>>()?;
    let (samples, values) = rows.into_iter().unzip();
    DiscretizedFunctional::new(-grid.half_width, grid.step, samples, values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeTrace {
    pub label: String,
    pub sharp: f64,
    /// `f_ε` along the schedule.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaLimitReport {
    pub eps: Vec<f64>,
    pub distances: Vec<f64>,
    pub strictly_decreasing: bool,
    pub traces: Vec<ProbeTrace>,
    /// Non-sawtooth probes whose value grows along the schedule.
    pub diverging: Vec<String>,
    pub non_sawtooth: usize,
}

/// Distance from the `f_ε` snapshot to the sharp snapshot along a
/// decreasing `ε` schedule. The sharp probes serve as the distance probes.
pub fn gamma_limit_check(
    eps_schedule: &[f64],
    field: &CoefficientField<f64>,
    m_value: f64,
    probes: &[Probe],
) -> Result<GammaLimitReport> {
    if eps_schedule.is_empty() || probes.is_empty() {
        return Err(HomlabError::Parameter("need a schedule and probes".into()));
    }
    let eps_min = eps_schedule.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(eps_min > 0.0) {
        return Err(HomlabError::Parameter("eps must be positive".into()));
    }
    let grid = SnapshotGrid::for_eps(eps_min);
    let sharp = sharp_snapshot(probes, &grid, field, m_value)?;
    let cfg = GammaDistanceConfig::new(sharp.samples.clone());
    let sharp_table = yosida_table(&sharp, &cfg)?;
    let mut distances = Vec::new();
    let mut per_eps = Vec::new();
    for eps in eps_schedule {
        let snap = diffuse_snapshot(probes, &grid, *eps, field, m_value)?;
        let table = yosida_table(&snap, &cfg)?;
        distances.push(distance_from_tables(&table, &sharp_table, &cfg));
        per_eps.push(snap.values);
    }
    let traces: Vec<ProbeTrace> = probes
        .iter()
        .enumerate()
        .map(|(k, p)| ProbeTrace {
            label: p.label.clone(),
            sharp: sharp.values[k],
            values: per_eps.iter().map(|v| v[k]).collect(),
        })
        .collect();
    let diverging = traces
        .iter()
        .filter(|t| t.sharp.is_infinite() && t.values.windows(2).all(|w| w[1] > w[0]))
        .map(|t| t.label.clone())
        .collect();
    Ok(GammaLimitReport {
        eps: eps_schedule.to_vec(),
        strictly_decreasing: distances.windows(2).all(|w| w[1] < w[0]),
        distances,
        traces,
        diverging,
        non_sawtooth: probes.iter().filter(|p| !p.shape.is_sawtooth()).count(),
    })
}

/// `f_ε` of a single smoothed flip at `at` (inside the unit window around
/// 0) on a grid fine enough for `ε`, with its sharp limit.
pub fn single_transition_probe(
    eps: f64,
    at: f64,
    offset: f64,
    field: &CoefficientField<f64>,
    m_value: f64,
) -> Result<(f64, f64)> {
    let grid = SnapshotGrid {
        half_width: 0.6,
        step: 1.0 / (8.0 / (eps * eps)).ceil(),
    };
    let shape = ProbeShape::Transition { at, offset };
    let u = sample_window(&shape, &grid, Some(eps * eps));
    Ok((
        micro_integrand(&u, &grid, 0.0, eps, field, m_value)?,
        sharp_integrand(&shape, &grid, 0.0, field, m_value)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> DiscretizedFunctional<f64> {
        // d(u_a, u_b) = 2 on a unit-step window of one node
        DiscretizedFunctional::new(
            0.0,
            1.0,
            vec![
                SamplePoint {
                    u: vec![0.0],
                    y: 0.0,
                },
                SamplePoint {
                    u: vec![2.0],
                    y: 0.0,
                },
            ],
            vec![1.0, 0.0],
        )
        .unwrap()
    }

    #[test]
    fn toy_yosida() {
        let f = toy();
        let probe = f.samples[0].clone();
        assert!((yosida(&f, 0.3, &probe).unwrap() - 0.6).abs() < 1e-15);
        assert_eq!(yosida(&f, 1.0, &probe).unwrap(), 1.0);
        assert!(yosida(&f, 0.0, &probe).is_err());
    }

    #[test]
    fn toy_distance_by_hand() {
        let f = toy();
        let g = DiscretizedFunctional::new(0.0, 1.0, f.samples.clone(), vec![0.5, 0.5]).unwrap();
        let cfg = GammaDistanceConfig {
            probes: f.samples.clone(),
            lambdas: vec![1.0, 2.0],
            truncation: 16,
        };
        // R_1 f = (1, 0), R_2 f = (1, 0); R_λ g = (0.5, 0.5)
        let phi = |t: f64| t / (1.0 + t);
        let per = (phi(1.0) - phi(0.5)).abs() / 2.0 + (phi(0.0) - phi(0.5)).abs() / 4.0;
        let expect = per / 2.0 + per / 4.0;
        assert!((gamma_distance(&f, &g, &cfg).unwrap() - expect).abs() < 1e-15);
        assert_eq!(gamma_distance(&f, &f, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn rejects_bad_functionals() {
        let s = vec![SamplePoint {
            u: vec![0.0],
            y: 0.0,
        }];
        assert!(DiscretizedFunctional::new(0.0, 1.0, s.clone(), vec![f64::INFINITY]).is_err());
        assert!(DiscretizedFunctional::new(0.0, 1.0, s.clone(), vec![-1.0]).is_err());
        assert!(DiscretizedFunctional::<f64>::new(0.0, 1.0, vec![], vec![]).is_err());
    }

    #[test]
    fn sawtooth_shape() {
        let s = ProbeShape::Sawtooth {
            period: 1.0,
            phase: 0.0,
            offset: 0.0,
        };
        assert!((s.sharp(0.25) - 0.25).abs() < 1e-15);
        assert!((s.sharp(0.75) - 0.25).abs() < 1e-15);
        let f = s.flips(-0.1, 1.1);
        assert_eq!(f, vec![(0.0, 2.0), (0.5, -2.0), (1.0, 2.0)]);
    }

    #[test]
    fn affine_and_half_slope() {
        let field = CoefficientField::<f64>::constant(1.0).unwrap();
        let grid = SnapshotGrid {
            half_width: 1.0,
            step: 1e-3,
        };
        let u = sample_window(
            &ProbeShape::Affine {
                slope: 1.0,
                offset: 0.0,
            },
            &grid,
            None,
        );
        let v = micro_integrand(&u, &grid, 0.0, 0.1, &field, 1.0).unwrap();
        assert!((v - 1.0 / 12.0).abs() < 1e-6);
        let u = sample_window(
            &ProbeShape::Affine {
                slope: 0.5,
                offset: 0.0,
            },
            &grid,
            None,
        );
        let v = micro_integrand(&u, &grid, 0.0, 0.1, &field, 1.0).unwrap();
        assert!(v >= 100.0 * 9.0 / 16.0);
    }
}
