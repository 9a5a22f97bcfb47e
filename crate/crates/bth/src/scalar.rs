//! Scalar types usable as lattice values.

use std::fmt::Debug;
use std::iter::Sum;

use num_complex::{Complex, Complex64, ComplexFloat};
use num_traits::NumAssign;

/// Field of lattice values: real or complex floating point.
///
/// Norms and tolerances are always reported in `f64`.
pub trait Scalar:
    ComplexFloat + NumAssign + Sum + Debug + Default + Send + Sync + 'static
{
    /// Embeds a real number.
    fn from_f64(x: f64) -> Self;
    /// Embeds a complex number; real types keep the real part only.
    fn from_c64(z: Complex64) -> Self;
    fn to_c64(self) -> Complex64;
    /// Magnitude as `f64`.
    fn modulus(self) -> f64;
    /// True for a strictly positive real value (imaginary part exactly zero).
    fn is_positive_real(self) -> bool;
    fn finite(self) -> bool;
}

macro_rules! impl_real {
    ($t:ty) => {
        impl Scalar for $t {
            fn from_f64(x: f64) -> Self {
                x as $t
            }
            fn from_c64(z: Complex64) -> Self {
                z.re as $t
            }
            fn to_c64(self) -> Complex64 {
                Complex64::new(self as f64, 0.0)
            }
            fn modulus(self) -> f64 {
                (self as f64).abs()
            }
            fn is_positive_real(self) -> bool {
                self > 0.0
            }
            fn finite(self) -> bool {
                self.is_finite()
            }
        }
    };
}

macro_rules! impl_complex {
    ($t:ty) => {
        impl Scalar for Complex<$t> {
            fn from_f64(x: f64) -> Self {
                Complex::new(x as $t, 0.0)
            }
            fn from_c64(z: Complex64) -> Self {
                Complex::new(z.re as $t, z.im as $t)
            }
            fn to_c64(self) -> Complex64 {
                Complex64::new(self.re as f64, self.im as f64)
            }
            fn modulus(self) -> f64 {
                self.to_c64().norm()
            }
            fn is_positive_real(self) -> bool {
                self.im == 0.0 && self.re > 0.0
            }
            fn finite(self) -> bool {
                self.re.is_finite() && self.im.is_finite()
            }
        }
    };
}

impl_real!(f32);
impl_real!(f64);
impl_complex!(f32);
impl_complex!(f64);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embeddings_round_trip() {
        let z = Complex64::new(1.5, -2.0);
        assert_eq!(<Complex64 as Scalar>::from_c64(z), z);
        assert_eq!(<f64 as Scalar>::from_c64(z), 1.5);
        assert_eq!(<f32 as Scalar>::from_f64(0.25), 0.25f32);
        assert!((<Complex64 as Scalar>::modulus(Complex64::new(3.0, 4.0)) - 5.0).abs() < 1e-15);
    }

    #[test]
    fn positivity_requires_real() {
        assert!(2.0f64.is_positive_real());
        assert!(!(-1.0f64).is_positive_real());
        assert!(!Complex64::new(1.0, 1e-300).is_positive_real());
    }
}
