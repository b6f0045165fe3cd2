//! Double-well potentials acting on the slope of a profile.

use crate::real::Real;

/// A nonnegative potential with zeros at slopes `-1` and `+1`.
pub trait Well<T: Real>: Send + Sync {
    fn value(&self, s: T) -> T;
    fn derivative(&self, s: T) -> T;
    /// Cost of one optimal transition between the wells, `2 ∫_{-1}^{1} √W`.
    fn transition_cost(&self) -> T;
}

/// `W(s) = (1 - s²)²`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct QuarticWell;

impl<T: Real> Well<T> for QuarticWell {
    #[inline]
    fn value(&self, s: T) -> T {
        let d = T::one() - s * s;
        d * d
    }

    #[inline]
    fn derivative(&self, s: T) -> T {
        T::lit(4.0) * s * (s * s - T::one())
    }

    fn transition_cost(&self) -> T {
        T::lit(8.0) / T::lit(3.0)
    }
}

/// Per-transition cost `A_0` of the quartic well.
pub fn a0<T: Real>() -> T {
    Well::<T>::transition_cost(&QuarticWell)
}
