//! Stationary random coefficient fields `a(ω, t)` and macroscopic moduli `m(x)`.
//!
//! A realization is a pure function of `(model, seed)`. The random parameter is
//! carried as a phase offset together with an accumulated shift, so the
//! translation action `a(ω + y, t) = a(ω, t + y)` is exact: both sides evaluate
//! the same floating point expression `(t + y) - phase`.
//!
//! Randomness beyond the phase (checkerboard cell values, Poisson bump
//! positions) is derived from a counter-based stream keyed by the cell index,
//! so evaluation is order independent and safe to call from many threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{HomlabError, Result};
use crate::real::Real;

/// Lower bound of every admissible coefficient.
pub const A_MIN: f64 = 1.0;
/// Upper bound of every admissible coefficient.
pub const A_MAX: f64 = 2.0;

const CELL_DOMAIN: u64 = 0;
const PHASE_DOMAIN: u64 = 1;

/// Law of the value attached to one checkerboard cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case", deny_unknown_fields)]
pub enum ValueDistribution {
    /// Uniform over a finite support, e.g. `{1, 2}`.
    Discrete { support: Vec<f64> },
    /// Uniform on `[lo, hi]`.
    Uniform { lo: f64, hi: f64 },
}

impl ValueDistribution {
    pub fn mean(&self) -> f64 {
        match self {
            ValueDistribution::Discrete { support } => {
                support.iter().sum::<f64>() / support.len() as f64
            }
            ValueDistribution::Uniform { lo, hi } => 0.5 * (lo + hi),
        }
    }

    fn validate(&self) -> Result<()> {
        let in_range = |v: f64| (A_MIN..=A_MAX).contains(&v);
        match self {
            ValueDistribution::Discrete { support } => {
                if support.is_empty() {
                    return Err(HomlabError::Parameter("empty value support".into()));
                }
                if let Some(v) = support.iter().find(|v| !in_range(**v)) {
                    return Err(HomlabError::Parameter(format!(
                        "value {v} outside [{A_MIN}, {A_MAX}]"
                    )));
                }
            }
            ValueDistribution::Uniform { lo, hi } => {
                if !(lo <= hi) || !in_range(*lo) || !in_range(*hi) {
                    return Err(HomlabError::Parameter(format!(
                        "uniform law [{lo}, {hi}] not supported in [{A_MIN}, {A_MAX}]"
                    )));
                }
            }
        }
        Ok(())
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            ValueDistribution::Discrete { support } => support[rng.random_range(0..support.len())],
            ValueDistribution::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
        }
    }
}

/// Tent-shaped bump `height · (1 - |t - c| / radius)_+` added on top of `a = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BumpShape {
    pub height: f64,
    pub radius: f64,
}

/// Random model of the coefficient. Configuration-level, always `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldModel {
    Constant {
        value: f64,
    },
    /// Deterministic periodic profile (samples on a uniform grid of one period,
    /// linearly interpolated) translated by a uniformly random phase.
    PeriodicRandomPhase {
        profile: Vec<f64>,
        period: f64,
    },
    /// Piecewise constant on cells of length `cell`, i.i.d. values.
    Checkerboard {
        cell: f64,
        values: ValueDistribution,
    },
    /// Poisson point process of tent bumps, saturated at `a = 2`.
    PoissonBumps {
        intensity: f64,
        bump: BumpShape,
    },
}

impl FieldModel {
    /// Checkerboard with unit cells and values uniform on `{1, 2}`.
    pub fn checkerboard_12(cell: f64) -> Self {
        FieldModel::Checkerboard {
            cell,
            values: ValueDistribution::Discrete {
                support: vec![1.0, 2.0],
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let in_range = |v: f64| (A_MIN..=A_MAX).contains(&v);
        match self {
            FieldModel::Constant { value } => {
                if !in_range(*value) {
                    return Err(HomlabError::Parameter(format!(
                        "constant {value} outside [{A_MIN}, {A_MAX}]"
                    )));
                }
            }
            FieldModel::PeriodicRandomPhase { profile, period } => {
                if !(*period > 0.0) {
                    return Err(HomlabError::Parameter("period must be positive".into()));
                }
                if profile.is_empty() || profile.iter().any(|v| !in_range(*v)) {
                    return Err(HomlabError::Parameter(
                        "periodic profile must be nonempty with samples in [1, 2]".into(),
                    ));
                }
            }
            FieldModel::Checkerboard { cell, values } => {
                if !(*cell > 0.0) {
                    return Err(HomlabError::Parameter(
                        "cell length must be positive".into(),
                    ));
                }
                values.validate()?;
            }
            FieldModel::PoissonBumps { intensity, bump } => {
                if !(*intensity > 0.0) {
                    return Err(HomlabError::Parameter("intensity must be positive".into()));
                }
                if !(bump.radius > 0.0) || !(bump.height >= 0.0) {
                    return Err(HomlabError::Parameter(
                        "bump radius must be positive and height nonnegative".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Ensemble mean of `a(·, 0)` when it has a closed form.
    pub fn mean(&self) -> Option<f64> {
        match self {
            FieldModel::Constant { value } => Some(*value),
            FieldModel::PeriodicRandomPhase { profile, .. } => {
                Some(profile.iter().sum::<f64>() / profile.len() as f64)
            }
            FieldModel::Checkerboard { values, .. } => Some(values.mean()),
            FieldModel::PoissonBumps { .. } => None,
        }
    }

    /// Whether every realization is the same function.
    pub fn is_deterministic(&self) -> bool {
        matches!(self, FieldModel::Constant { .. })
    }
}

fn stream_rng(seed: u64, domain: u64, stream: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&domain.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone)]
enum Realized<T> {
    Constant(T),
    Periodic {
        samples: Vec<T>,
        period: T,
    },
    Checkerboard {
        cell: T,
        values: ValueDistribution,
    },
    Poisson {
        intensity: f64,
        height: T,
        radius: T,
    },
}

/// One realization `t ↦ a(ω, t)`.
#[derive(Debug, Clone)]
pub struct CoefficientField<T: Real> {
    model: FieldModel,
    realized: Realized<T>,
    seed: u64,
    phase: T,
    shift: T,
}

impl<T: Real> CoefficientField<T> {
    pub fn realize(model: &FieldModel, seed: u64) -> Result<Self> {
        model.validate()?;
        let unit_phase = stream_rng(seed, PHASE_DOMAIN, 0).random::<f64>();
        let (realized, phase) = match model {
            FieldModel::Constant { value } => (Realized::Constant(T::lit(*value)), T::zero()),
            FieldModel::PeriodicRandomPhase { profile, period } => (
                Realized::Periodic {
                    samples: profile.iter().map(|v| T::lit(*v)).collect(),
                    period: T::lit(*period),
                },
                T::lit(unit_phase * period),
            ),
            FieldModel::Checkerboard { cell, values } => (
                Realized::Checkerboard {
                    cell: T::lit(*cell),
                    values: values.clone(),
                },
                T::lit(unit_phase * cell),
            ),
            FieldModel::PoissonBumps { intensity, bump } => (
                Realized::Poisson {
                    intensity: *intensity,
                    height: T::lit(bump.height),
                    radius: T::lit(bump.radius),
                },
                T::lit(unit_phase),
            ),
        };
        Ok(Self {
            model: model.clone(),
            realized,
            seed,
            phase,
            shift: T::zero(),
        })
    }

    /// Shorthand for the deterministic field `a ≡ value`.
    pub fn constant(value: f64) -> Result<Self> {
        Self::realize(&FieldModel::Constant { value }, 0)
    }

    pub fn model(&self) -> &FieldModel {
        &self.model
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn phase(&self) -> T {
        self.phase
    }

    /// Total translation applied since realization.
    pub fn offset(&self) -> T {
        self.shift
    }

    /// `a(ω + y, ·)`.
    pub fn shift(&self, y: T) -> Self {
        let mut out = self.clone();
        out.shift = self.shift + y;
        out
    }

    #[inline]
    pub fn eval(&self, t: T) -> T {
        let z = (t + self.shift) - self.phase;
        match &self.realized {
            Realized::Constant(v) => *v,
            Realized::Periodic { samples, period } => {
                let r = z / *period;
                let frac = r - r.floor();
                let n = samples.len();
                let pos = frac * T::from_usize_lossy(n);
                let i = pos.floor().to_usize().unwrap_or(0).min(n - 1);
                let w = pos - T::from_usize_lossy(i);
                samples[i] * (T::one() - w) + samples[(i + 1) % n] * w
            }
            Realized::Checkerboard { cell, values } => {
                let k = (z / *cell).floor().to_i64().unwrap_or(i64::MIN);
                T::lit(self.cell_value(values, k))
            }
            Realized::Poisson {
                intensity,
                height,
                radius,
            } => {
                let lo = (z - *radius).floor().to_i64().unwrap_or(0);
                let hi = (z + *radius).floor().to_i64().unwrap_or(0);
                let mut a = T::one();
                for block in lo..=hi {
                    let mut rng = stream_rng(self.seed, CELL_DOMAIN, block as u64);
                    let count = Poisson::new(*intensity)
                        .map(|p| p.sample(&mut rng))
                        .unwrap_or(0.0) as usize;
                    for _ in 0..count {
                        let c = T::lit(block as f64 + rng.random::<f64>());
                        let r = ((z - c).abs() / *radius).min(T::one());
                        a += *height * (T::one() - r);
                    }
                }
                a.min(T::lit(A_MAX))
            }
        }
    }

    fn cell_value(&self, values: &ValueDistribution, k: i64) -> f64 {
        values.draw(&mut stream_rng(self.seed, CELL_DOMAIN, k as u64))
    }

    /// Samples `a` at `t0 + i·step` for `i < n`.
    pub fn sample(&self, t0: T, step: T, n: usize) -> Vec<T> {
        (0..n)
            .map(|i| self.eval(t0 + T::from_usize_lossy(i) * step))
            .collect()
    }
}

/// Macroscopic modulus `x ↦ m(x)` on `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MacroModulus {
    Constant {
        m: f64,
    },
    /// `values[i]` on `[breakpoints[i-1], breakpoints[i])`.
    PiecewiseConstant {
        breakpoints: Vec<f64>,
        values: Vec<f64>,
    },
    /// Linear interpolation of `(grid, values)`; the grid must cover `[0, 1]`.
    SmoothSampled {
        grid: Vec<f64>,
        values: Vec<f64>,
    },
}

impl MacroModulus {
    pub fn validate(&self) -> Result<()> {
        let positive = |vs: &[f64]| vs.iter().all(|v| *v > 0.0 && v.is_finite());
        let sorted = |vs: &[f64]| vs.windows(2).all(|w| w[0] < w[1]);
        match self {
            MacroModulus::Constant { m } => {
                if !(*m > 0.0) {
                    return Err(HomlabError::Parameter("modulus must be positive".into()));
                }
            }
            MacroModulus::PiecewiseConstant {
                breakpoints,
                values,
            } => {
                if values.len() != breakpoints.len() + 1 {
                    return Err(HomlabError::Shape(
                        "piecewise modulus needs one more value than breakpoints".into(),
                    ));
                }
                if !sorted(breakpoints) || !positive(values) {
                    return Err(HomlabError::Parameter(
                        "breakpoints must increase and values be positive".into(),
                    ));
                }
            }
            MacroModulus::SmoothSampled { grid, values } => {
                if grid.len() != values.len() || grid.len() < 2 {
                    return Err(HomlabError::Shape(
                        "grid and values differ in length".into(),
                    ));
                }
                if !sorted(grid) || grid[0] > 0.0 || grid[grid.len() - 1] < 1.0 {
                    return Err(HomlabError::Parameter(
                        "sampled modulus grid must increase and cover [0, 1]".into(),
                    ));
                }
                if !positive(values) {
                    return Err(HomlabError::Parameter("values must be positive".into()));
                }
            }
        }
        Ok(())
    }

    /// Lower bound `α`.
    pub fn alpha(&self) -> f64 {
        self.values().iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Upper bound `β`.
    pub fn beta(&self) -> f64 {
        self.values()
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    fn values(&self) -> &[f64] {
        match self {
            MacroModulus::Constant { m } => std::slice::from_ref(m),
            MacroModulus::PiecewiseConstant { values, .. } => values,
            MacroModulus::SmoothSampled { values, .. } => values,
        }
    }

    /// `m(x)`; errors outside `[0, 1]`.
    pub fn eval<T: Real>(&self, x: T) -> Result<T> {
        if !(x >= T::zero() && x <= T::one()) {
            return Err(HomlabError::Domain(format!("x = {x} outside [0, 1]")));
        }
        Ok(self.eval_unchecked(x))
    }

    #[inline]
    pub(crate) fn eval_unchecked<T: Real>(&self, x: T) -> T {
        match self {
            MacroModulus::Constant { m } => T::lit(*m),
            MacroModulus::PiecewiseConstant {
                breakpoints,
                values,
            } => {
                let xf = x.as_f64();
                let i = breakpoints.partition_point(|b| *b <= xf);
                T::lit(values[i])
            }
            MacroModulus::SmoothSampled { grid, values } => {
                let xf = x.as_f64();
                let i = grid.partition_point(|g| *g <= xf).clamp(1, grid.len() - 1);
                let w = (xf - grid[i - 1]) / (grid[i] - grid[i - 1]);
                T::lit(values[i - 1] * (1.0 - w) + values[i] * w)
            }
        }
    }

    /// Pieces of `[0, 1]` on which the modulus is constant, with that value.
    /// `None` for sampled moduli.
    pub fn constant_cells(&self) -> Option<Vec<(f64, f64, f64)>> {
        match self {
            MacroModulus::Constant { m } => Some(vec![(0.0, 1.0, *m)]),
            MacroModulus::PiecewiseConstant { breakpoints, .. } => {
                let mut edges = vec![0.0];
                edges.extend(breakpoints.iter().cloned().filter(|b| *b > 0.0 && *b < 1.0));
                edges.push(1.0);
                Some(
                    edges
                        .windows(2)
                        .map(|w| {
                            let mid = 0.5 * (w[0] + w[1]);
                            (w[0], w[1], self.eval_unchecked(mid))
                        })
                        .collect(),
                )
            }
            MacroModulus::SmoothSampled { .. } => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cb() -> FieldModel {
        FieldModel::checkerboard_12(1.0)
    }

    #[test]
    fn constant_field() {
        let f = CoefficientField::<f64>::realize(&FieldModel::Constant { value: 1.5 }, 42).unwrap();
        for t in [-3.0, 0.0, 0.3, 1e6] {
            assert_eq!(f.eval(t), 1.5);
        }
    }

    #[test]
    fn checkerboard_reads_cell_of_shifted_point() {
        let f = CoefficientField::<f64>::realize(&cb(), 7).unwrap();
        let cell_of = (0.3 - f.phase()).floor() as i64;
        let expected = ValueDistribution::Discrete {
            support: vec![1.0, 2.0],
        }
        .draw(&mut stream_rng(7, CELL_DOMAIN, cell_of as u64));
        assert_eq!(f.eval(0.3), expected);
        // constant on the cell
        let left = cell_of as f64 + f.phase();
        assert_eq!(f.eval(left + 0.01), f.eval(left + 0.99));
    }

    #[test]
    fn realization_is_deterministic() {
        let models = [
            cb(),
            FieldModel::PoissonBumps {
                intensity: 0.7,
                bump: BumpShape {
                    height: 0.6,
                    radius: 0.8,
                },
            },
            FieldModel::PeriodicRandomPhase {
                profile: vec![1.0, 1.5, 2.0, 1.2],
                period: 2.0,
            },
        ];
        for m in &models {
            let a = CoefficientField::<f64>::realize(m, 99).unwrap();
            let b = CoefficientField::<f64>::realize(m, 99).unwrap();
            for i in 0..1000 {
                let t = -50.0 + 0.1 * i as f64;
                assert_eq!(a.eval(t), b.eval(t));
            }
        }
    }

    #[test]
    fn shift_examples() {
        let f = CoefficientField::<f64>::realize(&cb(), 3).unwrap();
        let g = f.shift(0.0);
        let back = f.shift(1.2).shift(-1.2);
        let moved = f.shift(0.7);
        for i in 0..200 {
            let t = -10.0 + 0.1 * i as f64;
            assert_eq!(g.eval(t), f.eval(t));
            assert_eq!(back.eval(t), f.eval(t));
        }
        assert_eq!(moved.eval(0.0), f.eval(0.7));
    }

    #[test]
    fn invalid_parameters_rejected() {
        let bad = FieldModel::Checkerboard {
            cell: 1.0,
            values: ValueDistribution::Uniform { lo: 0.5, hi: 2.0 },
        };
        assert!(matches!(
            CoefficientField::<f64>::realize(&bad, 0),
            Err(HomlabError::Parameter(_))
        ));
        let bad = FieldModel::PeriodicRandomPhase {
            profile: vec![1.0],
            period: 0.0,
        };
        assert!(bad.validate().is_err());
        assert!(FieldModel::Constant { value: 2.5 }.validate().is_err());
    }

    #[test]
    fn poisson_saturates_in_range() {
        let m = FieldModel::PoissonBumps {
            intensity: 3.0,
            bump: BumpShape {
                height: 0.9,
                radius: 1.0,
            },
        };
        let f = CoefficientField::<f64>::realize(&m, 5).unwrap();
        let vals = f.sample(0.0, 0.01, 5000);
        assert!(vals.iter().all(|v| (1.0..=2.0).contains(v)));
        assert!(vals.contains(&2.0));
    }

    #[test]
    fn single_precision_fields() {
        let f = CoefficientField::<f32>::realize(&cb(), 11).unwrap();
        let v = f.eval(2.5f32);
        assert!(v == 1.0 || v == 2.0);
    }

    #[test]
    fn macro_modulus_examples() {
        let c = MacroModulus::Constant { m: 1.0 };
        assert_eq!(c.eval(0.5).unwrap(), 1.0);
        let p = MacroModulus::PiecewiseConstant {
            breakpoints: vec![0.5],
            values: vec![1.0, 2.0],
        };
        assert_eq!(p.eval(0.25).unwrap(), 1.0);
        assert_eq!(p.eval(0.75).unwrap(), 2.0);
        assert!(matches!(p.eval(1.5f64), Err(HomlabError::Domain(_))));
        assert!(matches!(p.eval(-0.1f64), Err(HomlabError::Domain(_))));
        assert_eq!((p.alpha(), p.beta()), (1.0, 2.0));
        let s = MacroModulus::SmoothSampled {
            grid: vec![0.0, 1.0],
            values: vec![1.0, 3.0],
        };
        assert!((s.eval(0.25).unwrap() - 1.5f64).abs() < 1e-15);
        assert_eq!(
            p.constant_cells().unwrap(),
            vec![(0.0, 0.5, 1.0), (0.5, 1.0, 2.0)]
        );
    }

    #[test]
    fn config_round_trip_rejects_unknown_keys() {
        let json =
            r#"{"kind":"checkerboard","cell":1.0,"values":{"law":"discrete","support":[1.0,2.0]}}"#;
        let m: FieldModel = serde_json::from_str(json).unwrap();
        assert_eq!(m, cb());
        let typo =
            r#"{"kind":"checkerboard","cel":1.0,"values":{"law":"discrete","support":[1.0,2.0]}}"#;
        assert!(serde_json::from_str::<FieldModel>(typo).is_err());
    }
}
