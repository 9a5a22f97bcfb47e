//! Bigraded Toda hierarchy as a computable object.

pub mod blocksym;
pub mod coeff;
pub mod diffop;
pub mod dressing;
pub mod error;
pub mod hierarchy;
pub mod oschulman;
pub mod random;
pub mod scalar;

pub use error::{BthError, Result};
pub use scalar::Scalar;

use num_complex::Complex64;

/// Real lattice field.
pub type Field = coeff::LatticeFunction<f64>;
/// Complex lattice field.
pub type CField = coeff::LatticeFunction<Complex64>;
/// Polynomial in x with periodic real coefficients.
pub type Poly = coeff::LatticePoly<f64>;
pub type Op = diffop::DiffOp<Field>;
pub type PolyOp = diffop::DiffOp<Poly>;
/// Operator with exact symbolic coefficients.
pub type SymOp = diffop::DiffOp<coeff::PolySymbol>;
pub type Lax = dressing::LaxOperator<Field>;
pub type Pair = dressing::DressingPair<Poly>;
