use std::sync::Arc;

use super::{Coeff, HasCoordinate, Invertible, LatticeGrid};
use crate::error::{BthError, Result};
use crate::scalar::Scalar;

/// Default magnitude below which a divisor counts as zero.
pub const DEFAULT_DIV_THRESHOLD: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointwiseOp {
    Add,
    Sub,
    Mul,
    Div,
}

/// A sampled function on a lattice grid.
///
/// In periodic mode every site is valid. In windowed mode only the sites in
/// `valid` carry data; reading elsewhere is an error.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeFunction<T> {
    grid: Arc<LatticeGrid>,
    values: Vec<T>,
    valid: Option<(i64, i64)>,
}

impl<T: Scalar> LatticeFunction<T> {
    pub fn new(grid: Arc<LatticeGrid>, values: Vec<T>) -> Result<Self> {
        if values.len() != grid.size() {
            return Err(BthError::GridMismatch(format!(
                "{} values for {} sites",
                values.len(),
                grid.size()
            )));
        }
        if let Some(site) = values.iter().position(|v| !v.finite()) {
            return Err(BthError::NonFinite { site });
        }
        let valid = Some((0, grid.size() as i64 - 1));
        Ok(Self { grid, values, valid })
    }

    /// Windowed function valid on `[lo, hi]`; sites outside are ignored.
    pub fn windowed(grid: Arc<LatticeGrid>, values: Vec<T>, lo: i64, hi: i64) -> Result<Self> {
        let mut f = Self::new(grid, values)?;
        if f.grid.is_periodic() {
            return Err(BthError::Invalid("valid interval on a periodic grid".into()));
        }
        f.valid = clip((lo, hi), f.grid.size());
        Ok(f)
    }

    pub fn from_fn(grid: Arc<LatticeGrid>, f: impl Fn(usize) -> T) -> Result<Self> {
        let values = (0..grid.size()).map(f).collect();
        Self::new(grid, values)
    }

    pub fn constant(grid: Arc<LatticeGrid>, c: T) -> Self {
        let n = grid.size();
        Self { valid: Some((0, n as i64 - 1)), grid, values: vec![c; n] }
    }

    pub fn zeros(grid: Arc<LatticeGrid>) -> Self {
        Self::constant(grid, T::zero())
    }

    /// Indicator of a single site.
    pub fn delta(grid: Arc<LatticeGrid>, site: usize) -> Self {
        let mut f = Self::zeros(grid);
        f.values[site] = T::one();
        f
    }

    pub fn grid(&self) -> &Arc<LatticeGrid> {
        &self.grid
    }
    pub fn values(&self) -> &[T] {
        &self.values
    }
    pub fn valid(&self) -> Option<(i64, i64)> {
        self.valid
    }

    pub fn get(&self, site: i64) -> Result<T> {
        if self.grid.is_periodic() {
            return Ok(self.values[self.grid.wrap(site)]);
        }
        match self.valid {
            Some((lo, hi)) if site >= lo && site <= hi => Ok(self.values[site as usize]),
            Some((lo, hi)) => Err(BthError::OutsideValid { site, lo, hi }),
            None => Err(BthError::OutsideValid { site, lo: 0, hi: -1 }),
        }
    }

    /// Iterator over valid sites.
    pub fn valid_sites(&self) -> impl Iterator<Item = usize> + '_ {
        let (lo, hi) = self.valid.unwrap_or((0, -1));
        (lo..=hi).map(|s| s as usize)
    }

    /// x ↦ f(x + kε).
    pub fn shifted(&self, k: i64) -> Self {
        let n = self.grid.size();
        if self.grid.is_periodic() {
            let values = (0..n).map(|s| self.values[self.grid.wrap(s as i64 + k)]).collect();
            return Self { grid: self.grid.clone(), values, valid: self.valid };
        }
        let valid = self.valid.and_then(|(lo, hi)| clip((lo - k, hi - k), n));
        let mut values = vec![T::zero(); n];
        if let Some((lo, hi)) = valid {
            for s in lo..=hi {
                values[s as usize] = self.values[(s + k) as usize];
            }
        }
        Self { grid: self.grid.clone(), values, valid }
    }

    fn check_grid(&self, other: &Self) -> Result<()> {
        if self.grid != other.grid {
            return Err(BthError::GridMismatch(format!("{:?} vs {:?}", self.grid, other.grid)));
        }
        Ok(())
    }

    fn zip(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        let valid = intersect(self.valid, other.valid);
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect();
        Self { grid: self.grid.clone(), values, valid }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            grid: self.grid.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
            valid: self.valid,
        }
    }

    /// Sitewise arithmetic with the default division threshold.
    pub fn pointwise(&self, other: &Self, op: PointwiseOp) -> Result<Self> {
        self.pointwise_with(other, op, DEFAULT_DIV_THRESHOLD)
    }

    pub fn pointwise_with(&self, other: &Self, op: PointwiseOp, threshold: f64) -> Result<Self> {
        self.check_grid(other)?;
        Ok(match op {
            PointwiseOp::Add => self.zip(other, |a, b| a + b),
            PointwiseOp::Sub => self.zip(other, |a, b| a - b),
            PointwiseOp::Mul => self.zip(other, |a, b| a * b),
            PointwiseOp::Div => {
                let out = self.zip(other, |a, b| a / b);
                for s in out.valid_sites() {
                    if other.values[s].modulus() < threshold {
                        return Err(BthError::DivisionByZero { site: s });
                    }
                }
                out
            }
        })
    }

    pub fn exp(&self) -> Result<Self> {
        let out = self.map(|v| v.exp());
        for s in out.valid_sites() {
            if !out.values[s].finite() {
                return Err(BthError::NonFinite { site: s });
            }
        }
        Ok(out)
    }

    /// Sitewise logarithm of a strictly positive real function.
    pub fn log(&self) -> Result<Self> {
        for s in self.valid_sites() {
            if !self.values[s].is_positive_real() {
                return Err(BthError::NonPositiveLog { site: s });
            }
        }
        Ok(self.map(|v| v.ln()))
    }

    /// Maximum modulus over the valid interval.
    pub fn sup_norm(&self) -> f64 {
        self.valid_sites().map(|s| self.values[s].modulus()).fold(0.0, f64::max)
    }

    /// Lattice average over the valid sites.
    pub fn mean(&self) -> T {
        let n = self.valid_sites().count();
        if n == 0 {
            return T::zero();
        }
        let s: T = self.valid_sites().map(|s| self.values[s]).sum();
        s / T::from_f64(n as f64)
    }

    pub fn dist(&self, other: &Self) -> f64 {
        self.zip(other, |a, b| a - b).sup_norm()
    }
}

fn clip((lo, hi): (i64, i64), n: usize) -> Option<(i64, i64)> {
    let lo = lo.max(0);
    let hi = hi.min(n as i64 - 1);
    (lo <= hi).then_some((lo, hi))
}

fn intersect(a: Option<(i64, i64)>, b: Option<(i64, i64)>) -> Option<(i64, i64)> {
    let (a, b) = (a?, b?);
    let lo = a.0.max(b.0);
    let hi = a.1.min(b.1);
    (lo <= hi).then_some((lo, hi))
}

impl<T: Scalar> Coeff for LatticeFunction<T> {
    type Ctx = Arc<LatticeGrid>;
    type Scalar = T;

    fn ctx(&self) -> Self::Ctx {
        self.grid.clone()
    }
    fn zero(ctx: &Self::Ctx) -> Self {
        Self::zeros(ctx.clone())
    }
    fn constant(ctx: &Self::Ctx, c: T) -> Self {
        LatticeFunction::constant(ctx.clone(), c)
    }
    fn from_ratio(ctx: &Self::Ctx, num: i64, den: i64) -> Self {
        LatticeFunction::constant(ctx.clone(), T::from_f64(num as f64 / den as f64))
    }
    fn shift(&self, k: i64) -> Self {
        self.shifted(k)
    }
    fn add(&self, o: &Self) -> Self {
        self.zip(o, |a, b| a + b)
    }
    fn sub(&self, o: &Self) -> Self {
        self.zip(o, |a, b| a - b)
    }
    fn mul(&self, o: &Self) -> Self {
        self.zip(o, |a, b| a * b)
    }
    fn neg(&self) -> Self {
        self.map(|v| -v)
    }
    fn scale(&self, c: &T) -> Self {
        let c = *c;
        self.map(|v| v * c)
    }
    fn scale_ratio(&self, num: i64, den: i64) -> Self {
        let c = T::from_f64(num as f64 / den as f64);
        self.map(|v| v * c)
    }
    fn norm(&self) -> f64 {
        self.sup_norm()
    }
    fn is_zero(&self) -> bool {
        self.valid_sites().all(|s| self.values[s] == T::zero())
    }
    fn add_assign(&mut self, o: &Self) {
        self.valid = intersect(self.valid, o.valid);
        for (a, &b) in self.values.iter_mut().zip(&o.values) {
            *a += b;
        }
    }
    fn add_product(&mut self, a: &Self, b: &Self) {
        self.valid = intersect(self.valid, intersect(a.valid, b.valid));
        for ((s, &x), &y) in self.values.iter_mut().zip(&a.values).zip(&b.values) {
            *s += x * y;
        }
    }
}

impl<T: Scalar> Invertible for LatticeFunction<T> {
    fn try_recip(&self) -> Result<Self> {
        LatticeFunction::constant(self.grid.clone(), T::one()).pointwise(self, PointwiseOp::Div)
    }
}

impl<T: Scalar> HasCoordinate for LatticeFunction<T> {
    /// Only windowed grids can hold the coordinate function.
    fn coordinate(ctx: &Self::Ctx) -> Result<Self> {
        if ctx.is_periodic() {
            return Err(BthError::Invalid("x is not a periodic function".into()));
        }
        LatticeFunction::from_fn(ctx.clone(), |s| T::from_f64(ctx.x(s as i64)))
    }
    fn epsilon(ctx: &Self::Ctx) -> num::BigRational {
        ctx.epsilon().clone()
    }
}
