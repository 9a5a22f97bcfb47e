use std::fmt;
use std::sync::Arc;

use num::{BigInt, BigRational, ToPrimitive, Zero};

use crate::error::{BthError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridMode {
    Periodic,
    Windowed,
}

/// A one-dimensional lattice x_s = origin + s·ε, s = 0..P−1.
#[derive(Clone, PartialEq)]
pub struct LatticeGrid {
    epsilon: BigRational,
    size: usize,
    mode: GridMode,
    origin: BigRational,
    eps_f: f64,
    origin_f: f64,
}

impl fmt::Debug for LatticeGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "LatticeGrid({:?}, P={}, eps={}, origin={})",
            self.mode, self.size, self.epsilon, self.origin
        )
    }
}

impl LatticeGrid {
    pub fn new(
        epsilon: BigRational,
        size: usize,
        mode: GridMode,
        origin: BigRational,
    ) -> Result<Arc<Self>> {
        if size == 0 {
            return Err(BthError::Invalid("lattice size must be positive".into()));
        }
        if epsilon.is_zero() {
            return Err(BthError::Invalid("epsilon must be nonzero".into()));
        }
        let eps_f = epsilon.to_f64().unwrap_or(f64::NAN);
        let origin_f = origin.to_f64().unwrap_or(f64::NAN);
        Ok(Arc::new(Self { epsilon, size, mode, origin, eps_f, origin_f }))
    }

    /// Periodic grid with ε = num/den and origin 0.
    pub fn periodic(size: usize, eps_num: i64, eps_den: i64) -> Result<Arc<Self>> {
        if eps_den == 0 {
            return Err(BthError::Invalid("epsilon denominator is zero".into()));
        }
        Self::new(ratio(eps_num, eps_den), size, GridMode::Periodic, BigRational::zero())
    }

    /// Windowed grid with ε = num/den whose site 0 sits at `origin_sites`·ε.
    pub fn windowed(size: usize, eps_num: i64, eps_den: i64, origin_sites: i64) -> Result<Arc<Self>> {
        if eps_den == 0 {
            return Err(BthError::Invalid("epsilon denominator is zero".into()));
        }
        let eps = ratio(eps_num, eps_den);
        let origin = &eps * BigRational::from_integer(BigInt::from(origin_sites));
        Self::new(eps, size, GridMode::Windowed, origin)
    }

    pub fn epsilon(&self) -> &BigRational {
        &self.epsilon
    }
    pub fn epsilon_f64(&self) -> f64 {
        self.eps_f
    }
    pub fn size(&self) -> usize {
        self.size
    }
    pub fn mode(&self) -> GridMode {
        self.mode
    }
    pub fn is_periodic(&self) -> bool {
        self.mode == GridMode::Periodic
    }
    pub fn origin(&self) -> &BigRational {
        &self.origin
    }
    pub fn origin_f64(&self) -> f64 {
        self.origin_f
    }

    /// Coordinate of (possibly out-of-range) site `s`.
    pub fn x(&self, s: i64) -> f64 {
        self.origin_f + s as f64 * self.eps_f
    }

    /// Site index reduced modulo P.
    pub fn wrap(&self, s: i64) -> usize {
        s.rem_euclid(self.size as i64) as usize
    }

    /// Same spacing and origin, other mode and size.
    pub fn with_mode(&self, mode: GridMode, size: usize) -> Result<Arc<Self>> {
        Self::new(self.epsilon.clone(), size, mode, self.origin.clone())
    }
}

pub(crate) fn ratio(num: i64, den: i64) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_degenerate() {
        assert!(LatticeGrid::periodic(0, 1, 1).is_err());
        assert!(LatticeGrid::periodic(5, 0, 1).is_err());
    }

    #[test]
    fn coordinates_and_wrap() {
        let g = LatticeGrid::windowed(10, 1, 2, -4).unwrap();
        assert_eq!(g.x(0), -2.0);
        assert_eq!(g.x(3), -0.5);
        assert_eq!(g.wrap(-1), 9);
        assert_eq!(g.wrap(23), 3);
    }
}
