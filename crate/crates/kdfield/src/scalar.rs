//! Scalar abstraction for the numeric core.
//!
//! All geometry, field, voting, and metric code is generic over [`Real`],
//! so the same implementation runs in `f32` and `f64`. Concrete aliases for
//! the common instantiations live at the crate root.

use num_traits::{FromPrimitive, ToPrimitive};

/// Floating-point scalar usable throughout the crate.
///
/// `nalgebra::RealField` supplies the transcendental and linear-algebra
/// operations; the `num-traits` casts move literals and file-format values
/// across scalar types.
pub trait Real: nalgebra::RealField + FromPrimitive + ToPrimitive + Copy {}

impl<T> Real for T where T: nalgebra::RealField + FromPrimitive + ToPrimitive + Copy {}

/// Shorthand for bringing an `f64` constant into the working scalar type.
#[inline]
pub fn cast<T: Real>(value: f64) -> T {
    T::from_f64(value).expect("f64 constant not representable in scalar type")
}
