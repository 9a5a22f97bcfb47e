//! Coefficient rings for difference operators.
//!
//! Three rings are provided: sampled lattice functions ([`LatticeFunction`]),
//! polynomials in the coordinate x with periodic coefficients ([`LatticePoly`]),
//! and exact rational polynomials in x and the time symbols ([`PolySymbol`]).
//! All of them carry the shift action x ↦ x + kε.

mod grid;
mod lattice;
mod poly;
mod shiftsum;
mod symbol;

use std::fmt::Debug;

pub use grid::{GridMode, LatticeGrid};
pub use lattice::{LatticeFunction, PointwiseOp, DEFAULT_DIV_THRESHOLD};
pub use poly::LatticePoly;
pub use shiftsum::{invert_shift_sum, ShiftSum};
pub use symbol::{PolySymbol, SymbolCtx, Var};

pub(crate) use grid::ratio;

use crate::error::Result;

/// A commutative ring with a Z-action by shifts, usable as operator coefficients.
pub trait Coeff: Clone + Debug + Send + Sync + Sized {
    /// Shared context (grid, ε) that all operands of one computation must agree on.
    type Ctx: Clone + Debug + PartialEq + Send + Sync;
    type Scalar: Clone + Debug + Send + Sync;

    fn ctx(&self) -> Self::Ctx;
    fn zero(ctx: &Self::Ctx) -> Self;
    fn constant(ctx: &Self::Ctx, c: Self::Scalar) -> Self;
    /// The constant num/den, exact where the ring allows.
    fn from_ratio(ctx: &Self::Ctx, num: i64, den: i64) -> Self;
    fn one(ctx: &Self::Ctx) -> Self {
        Self::from_ratio(ctx, 1, 1)
    }

    /// x ↦ f(x + kε).
    fn shift(&self, k: i64) -> Self;
    fn add(&self, o: &Self) -> Self;
    fn sub(&self, o: &Self) -> Self;
    fn mul(&self, o: &Self) -> Self;
    fn neg(&self) -> Self;
    fn scale(&self, c: &Self::Scalar) -> Self;
    fn scale_ratio(&self, num: i64, den: i64) -> Self;

    /// Magnitude used for residuals (max over stored entries).
    fn norm(&self) -> f64;
    fn is_zero(&self) -> bool;

    fn add_assign(&mut self, o: &Self) {
        *self = self.add(o);
    }
    /// self += a·b
    fn add_product(&mut self, a: &Self, b: &Self) {
        let p = a.mul(b);
        self.add_assign(&p);
    }
}

/// Rings in which pointwise-nonvanishing elements can be inverted.
pub trait Invertible: Coeff {
    fn try_recip(&self) -> Result<Self>;
}

/// Rings containing the coordinate function x.
pub trait HasCoordinate: Coeff {
    fn coordinate(ctx: &Self::Ctx) -> Result<Self>;
    /// The lattice spacing ε.
    fn epsilon(ctx: &Self::Ctx) -> num::BigRational;
}
