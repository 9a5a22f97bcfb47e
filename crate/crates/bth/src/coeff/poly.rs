use std::sync::Arc;

use super::{Coeff, HasCoordinate, Invertible, LatticeFunction, LatticeGrid};
use crate::error::{BthError, Result};
use crate::scalar::Scalar;

/// Polynomial in the coordinate x whose coefficients are periodic lattice functions:
/// f(x_s) = Σ_d c_d(s mod P) x_s^d.
///
/// This ring holds dressing data whose lattice means force secular growth; it
/// is closed under shifts because x ↦ x + kε maps polynomials to polynomials.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticePoly<T> {
    grid: Arc<LatticeGrid>,
    coeffs: Vec<Vec<T>>,
}

fn binom(n: usize, k: usize) -> f64 {
    let mut r = 1.0;
    for i in 0..k {
        r = r * (n - i) as f64 / (i + 1) as f64;
    }
    r
}

impl<T: Scalar> LatticePoly<T> {
    /// Builds from per-degree site values (degree-major).
    pub fn new(grid: Arc<LatticeGrid>, coeffs: Vec<Vec<T>>) -> Result<Self> {
        if !grid.is_periodic() {
            return Err(BthError::WindowedUnsupported("LatticePoly"));
        }
        let p = grid.size();
        if coeffs.iter().any(|c| c.len() != p) {
            return Err(BthError::GridMismatch("coefficient length differs from grid size".into()));
        }
        for c in &coeffs {
            if let Some(site) = c.iter().position(|v| !v.finite()) {
                return Err(BthError::NonFinite { site });
            }
        }
        let mut out = Self { grid, coeffs };
        out.trim();
        Ok(out)
    }

    pub fn from_periodic(f: &LatticeFunction<T>) -> Result<Self> {
        Self::new(f.grid().clone(), vec![f.values().to_vec()])
    }

    fn zero_on(grid: Arc<LatticeGrid>) -> Self {
        let p = grid.size();
        Self { grid, coeffs: vec![vec![T::zero(); p]] }
    }

    fn trim(&mut self) {
        while self.coeffs.len() > 1 && self.coeffs.last().unwrap().iter().all(|v| *v == T::zero()) {
            self.coeffs.pop();
        }
        if self.coeffs.is_empty() {
            self.coeffs.push(vec![T::zero(); self.grid.size()]);
        }
    }

    pub fn grid(&self) -> &Arc<LatticeGrid> {
        &self.grid
    }

    /// Highest x-degree with a nonzero coefficient (0 for the zero polynomial).
    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn coeffs(&self) -> &[Vec<T>] {
        &self.coeffs
    }

    /// The periodic coefficient of x^d.
    pub fn part(&self, d: usize) -> LatticeFunction<T> {
        match self.coeffs.get(d) {
            Some(c) => LatticeFunction::new(self.grid.clone(), c.clone()).expect("finite"),
            None => LatticeFunction::zeros(self.grid.clone()),
        }
    }

    /// Value at an arbitrary integer site (not reduced mod P for the x factor).
    pub fn eval(&self, s: i64) -> T {
        let x = T::from_f64(self.grid.x(s));
        let i = self.grid.wrap(s);
        let mut acc = T::zero();
        for c in self.coeffs.iter().rev() {
            acc = acc * x + c[i];
        }
        acc
    }

    /// Degree-0 part as a periodic function, if the polynomial is constant in x.
    pub fn as_periodic(&self) -> Option<LatticeFunction<T>> {
        (self.degree() == 0).then(|| self.part(0))
    }

    /// Largest modulus among the coefficients of x^d for d ≥ 1.
    pub fn secular_norm(&self) -> f64 {
        self.coeffs.iter().skip(1).flatten().map(|v| v.modulus()).fold(0.0, f64::max)
    }

    pub fn mul_x(&self) -> Self {
        let mut coeffs = vec![vec![T::zero(); self.grid.size()]];
        coeffs.extend(self.coeffs.iter().cloned());
        let mut out = Self { grid: self.grid.clone(), coeffs };
        out.trim();
        out
    }

    fn combine(&self, o: &Self, f: impl Fn(T, T) -> T) -> Self {
        let n = self.coeffs.len().max(o.coeffs.len());
        let p = self.grid.size();
        let zero = vec![T::zero(); p];
        let coeffs = (0..n)
            .map(|d| {
                let a = self.coeffs.get(d).unwrap_or(&zero);
                let b = o.coeffs.get(d).unwrap_or(&zero);
                a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
            })
            .collect();
        let mut out = Self { grid: self.grid.clone(), coeffs };
        out.trim();
        out
    }
}

impl<T: Scalar> Coeff for LatticePoly<T> {
    type Ctx = Arc<LatticeGrid>;
    type Scalar = T;

    fn ctx(&self) -> Self::Ctx {
        self.grid.clone()
    }
    fn zero(ctx: &Self::Ctx) -> Self {
        Self::zero_on(ctx.clone())
    }
    fn constant(ctx: &Self::Ctx, c: T) -> Self {
        let mut out = Self { grid: ctx.clone(), coeffs: vec![vec![c; ctx.size()]] };
        out.trim();
        out
    }
    fn from_ratio(ctx: &Self::Ctx, num: i64, den: i64) -> Self {
        <Self as Coeff>::constant(ctx, T::from_f64(num as f64 / den as f64))
    }

    fn shift(&self, k: i64) -> Self {
        let p = self.grid.size();
        let h = T::from_f64(k as f64 * self.grid.epsilon_f64());
        let rolled: Vec<Vec<T>> = self
            .coeffs
            .iter()
            .map(|c| (0..p).map(|s| c[self.grid.wrap(s as i64 + k)]).collect())
            .collect();
        if k == 0 || self.coeffs.len() == 1 {
            return Self { grid: self.grid.clone(), coeffs: rolled };
        }
        let n = rolled.len();
        let mut coeffs = vec![vec![T::zero(); p]; n];
        for (d, c) in rolled.iter().enumerate() {
            let mut hp = T::one();
            for e in (0..=d).rev() {
                let w = T::from_f64(binom(d, e)) * hp;
                for (o, &v) in coeffs[e].iter_mut().zip(c) {
                    *o += w * v;
                }
                hp *= h;
            }
        }
        let mut out = Self { grid: self.grid.clone(), coeffs };
        out.trim();
        out
    }

    fn add(&self, o: &Self) -> Self {
        self.combine(o, |a, b| a + b)
    }
    fn sub(&self, o: &Self) -> Self {
        self.combine(o, |a, b| a - b)
    }
    fn mul(&self, o: &Self) -> Self {
        let p = self.grid.size();
        let mut coeffs = vec![vec![T::zero(); p]; self.coeffs.len() + o.coeffs.len() - 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            for (j, b) in o.coeffs.iter().enumerate() {
                for ((c, &x), &y) in coeffs[i + j].iter_mut().zip(a).zip(b) {
                    *c += x * y;
                }
            }
        }
        let mut out = Self { grid: self.grid.clone(), coeffs };
        out.trim();
        out
    }
    fn neg(&self) -> Self {
        let coeffs = self.coeffs.iter().map(|c| c.iter().map(|&v| -v).collect()).collect();
        Self { grid: self.grid.clone(), coeffs }
    }
    fn scale(&self, c: &T) -> Self {
        let c = *c;
        let coeffs = self.coeffs.iter().map(|v| v.iter().map(|&x| x * c).collect()).collect();
        let mut out = Self { grid: self.grid.clone(), coeffs };
        out.trim();
        out
    }
    fn scale_ratio(&self, num: i64, den: i64) -> Self {
        self.scale(&T::from_f64(num as f64 / den as f64))
    }
    fn norm(&self) -> f64 {
        self.coeffs.iter().flatten().map(|v| v.modulus()).fold(0.0, f64::max)
    }
    fn is_zero(&self) -> bool {
        self.coeffs.iter().flatten().all(|v| *v == T::zero())
    }
}

/// Relative size below which positive-degree parts are treated as roundoff.
const RECIP_DROP: f64 = 1e-12;

impl<T: Scalar> Invertible for LatticePoly<T> {
    /// Inverts a polynomial of x-degree 0 with nonvanishing values. Higher
    /// parts at roundoff level relative to the constant part are dropped.
    fn try_recip(&self) -> Result<Self> {
        let base = self.part(0).norm();
        if (1..=self.degree()).any(|d| self.part(d).norm() > RECIP_DROP * base) {
            return Err(BthError::Invalid("cannot invert a polynomial of positive x-degree".into()));
        }
        let r = self.part(0).try_recip()?;
        Self::from_periodic(&r)
    }
}

impl<T: Scalar> HasCoordinate for LatticePoly<T> {
    fn coordinate(ctx: &Self::Ctx) -> Result<Self> {
        let p = ctx.size();
        Self::new(ctx.clone(), vec![vec![T::zero(); p], vec![T::one(); p]])
    }
    fn epsilon(ctx: &Self::Ctx) -> num::BigRational {
        ctx.epsilon().clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> Arc<LatticeGrid> {
        LatticeGrid::periodic(5, 1, 2).unwrap()
    }

    fn sample(g: &Arc<LatticeGrid>, seed: f64) -> LatticePoly<f64> {
        let p = g.size();
        let c = (0..3)
            .map(|d| (0..p).map(|s| ((s + 2 * d) as f64 * seed).sin()).collect())
            .collect();
        LatticePoly::new(g.clone(), c).unwrap()
    }

    #[test]
    fn shift_matches_pointwise_evaluation() {
        let g = grid();
        let f = sample(&g, 0.7);
        for k in [-3i64, 1, 4] {
            let h = f.shift(k);
            for s in -7..12 {
                assert!((h.eval(s) - f.eval(s + k)).abs() < 1e-11);
            }
        }
    }

    #[test]
    fn shift_is_ring_homomorphism() {
        let g = grid();
        let (a, b) = (sample(&g, 0.3), sample(&g, 1.1));
        let lhs = a.mul(&b).shift(3);
        let rhs = a.shift(3).mul(&b.shift(3));
        assert!(lhs.sub(&rhs).norm() < 1e-11);
    }

    #[test]
    fn coordinate_shift() {
        let g = grid();
        let x = LatticePoly::<f64>::coordinate(&g).unwrap();
        let x1 = x.shift(2);
        // x + 2ε with ε = 1/2
        assert_eq!(x1.coeffs()[0], vec![1.0; 5]);
        assert_eq!(x1.coeffs()[1], vec![1.0; 5]);
        assert_eq!(x1.eval(3), 2.5);
    }

    #[test]
    fn recip_requires_degree_zero() {
        let g = grid();
        let x = LatticePoly::<f64>::coordinate(&g).unwrap();
        assert!(x.try_recip().is_err());
        let c = <LatticePoly<f64> as Coeff>::constant(&g, 4.0);
        assert_eq!(c.try_recip().unwrap().eval(0), 0.25);
    }
}
