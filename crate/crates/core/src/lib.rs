//! Numerical laboratory for one-dimensional stochastic two-scale homogenization.
//!
//! The kernels are generic over the scalar type ([`Real`], implemented for
//! `f32` and `f64`). The aliases at the crate root fix the scalar to `f64`,
//! which is what the experiment pipelines use.
//!
//! * [`coeff`]: stationary random coefficients `a(ω, t)` and moduli `m(x)`.
//! * [`sharp_cell`]: sharp-interface cell problem over sawtooth profiles,
//!   solved by dynamic programming, and the cell constant `α_m`.
//! * [`diffuse`]: the diffuse two-scale functional, its gradient, the
//!   sawtooth-based test function and multi-start quasi-Newton minimization.
//! * [`convex_cell`]: one-dimensional convex cell problems and the
//!   homogenized Lagrangian `f_*(q)`.
//! * [`ymeasure`]: empirical measures on coefficient/profile windows.
//! * [`gamma`]: Yosida regularization and the Γ-convergence distance on
//!   sampled functionals.

// `!(x > 0.0)` is the NaN-rejecting form used by every parameter check
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod coeff;
pub mod convex_cell;
pub mod diffuse;
pub mod error;
pub mod gamma;
pub mod lbfgs;
pub mod real;
pub mod sharp_cell;
pub mod stats;
pub mod well;
pub mod ymeasure;

pub use coeff::{BumpShape, FieldModel, MacroModulus, ValueDistribution};
pub use error::{HomlabError, Result};
pub use real::Real;
pub use sharp_cell::{Boundary, DpGrid};
pub use well::{a0, QuarticWell, Well};

pub type CoefficientField = coeff::CoefficientField<f64>;
pub type SawtoothProfile = sharp_cell::SawtoothProfile<f64>;
pub type CellResult = sharp_cell::CellResult<f64>;
pub type HomogenizedPoint = convex_cell::HomogenizedPoint<f64>;
pub type EmpiricalMeasure = ymeasure::EmpiricalMeasure<f64>;
pub type WindowAtom = ymeasure::WindowAtom<f64>;
pub type DiscretizedFunctional = gamma::DiscretizedFunctional<f64>;
pub type GammaDistanceConfig = gamma::GammaDistanceConfig<f64>;
pub type DiscreteProfile = diffuse::DiscreteProfile<f64>;
pub type MicroProfile = diffuse::MicroProfile<f64>;
pub type DiffuseProblem = diffuse::DiffuseProblem<f64>;
pub type MinResult = diffuse::MinResult<f64>;
