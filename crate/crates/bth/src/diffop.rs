//! Truncated Laurent series in the shift operator Λ with ring-valued coefficients.
//!
//! Every operator tracks the true (untruncated) support bounds, the stored
//! window, and the region of exponents whose stored coefficients equal the
//! untruncated ones. Products propagate that region by the one-sided rules:
//! the coefficient of Λ^k in AB is exact when every pair (i, k−i) that can
//! contribute uses exact coefficients of both factors.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::coeff::{Coeff, Invertible, LatticeFunction, LatticePoly};
use crate::error::{BthError, Result};
use crate::scalar::Scalar;

/// Stand-in for ±∞ in exponent bounds.
pub const INF: i64 = i64::MAX / 4;

fn is_inf(v: i64) -> bool {
    v.abs() >= INF
}

/// Inclusive exponent interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Band {
    pub lo: i64,
    pub hi: i64,
}

impl Band {
    pub fn new(lo: i64, hi: i64) -> Self {
        Self { lo, hi }
    }
    pub fn contains(&self, k: i64) -> bool {
        k >= self.lo && k <= self.hi
    }
    pub fn covers(&self, other: Band) -> bool {
        self.lo <= other.lo && self.hi >= other.hi
    }
    pub fn intersect(&self, o: Band) -> Option<Band> {
        let lo = self.lo.max(o.lo);
        let hi = self.hi.min(o.hi);
        (lo <= hi).then_some(Band { lo, hi })
    }
    pub fn shrink(&self, lo_by: i64, hi_by: i64) -> Option<Band> {
        let lo = self.lo + lo_by;
        let hi = self.hi - hi_by;
        (lo <= hi).then_some(Band { lo, hi })
    }
}

/// Projection selector: `Plus` keeps exponents ≥ 0, `Minus` keeps exponents < 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sign {
    Plus,
    Minus,
}

/// A truncated difference operator Σ_k a_k Λ^k.
#[derive(Debug, Clone)]
pub struct DiffOp<C: Coeff> {
    ctx: C::Ctx,
    coeffs: BTreeMap<i64, C>,
    window: Band,
    limit: Option<Band>,
    support: (i64, i64),
    exact: Option<(i64, i64)>,
}

impl<C: Coeff> DiffOp<C> {
    /// An exact operator with finite support (all coefficients given).
    pub fn finite(ctx: &C::Ctx, coeffs: impl IntoIterator<Item = (i64, C)>) -> Self {
        let coeffs: BTreeMap<i64, C> = coeffs.into_iter().filter(|(_, c)| !c.is_zero()).collect();
        let (lo, hi) = match (coeffs.keys().next(), coeffs.keys().next_back()) {
            (Some(&a), Some(&b)) => (a, b),
            _ => (0, 0),
        };
        Self {
            ctx: ctx.clone(),
            coeffs,
            window: Band::new(lo, hi),
            limit: None,
            support: (lo, hi),
            exact: Some((-INF, INF)),
        }
    }

    /// A truncated series whose stored coefficients are exact on `window`;
    /// `support` gives the true bounds (use ±[`INF`] for infinite tails) and
    /// `limit` the truncation window for results derived from it.
    pub fn series(
        ctx: &C::Ctx,
        coeffs: impl IntoIterator<Item = (i64, C)>,
        window: Band,
        support: (i64, i64),
        limit: Option<Band>,
    ) -> Self {
        let coeffs: BTreeMap<i64, C> = coeffs
            .into_iter()
            .filter(|(k, c)| window.contains(*k) && !c.is_zero())
            .collect();
        let mut op = Self {
            ctx: ctx.clone(),
            coeffs,
            window,
            limit,
            support,
            exact: Some((window.lo, window.hi)),
        };
        op.normalize();
        op
    }

    pub fn zero(ctx: &C::Ctx) -> Self {
        Self::finite(ctx, [])
    }

    pub fn identity(ctx: &C::Ctx) -> Self {
        Self::monomial(ctx, 0, C::one(ctx))
    }

    /// c·Λ^k
    pub fn monomial(ctx: &C::Ctx, k: i64, c: C) -> Self {
        Self::finite(ctx, [(k, c)])
    }

    /// Λ^k
    pub fn shift_op(ctx: &C::Ctx, k: i64) -> Self {
        Self::monomial(ctx, k, C::one(ctx))
    }

    pub fn ctx(&self) -> &C::Ctx {
        &self.ctx
    }
    pub fn window(&self) -> Band {
        self.window
    }
    pub fn limit(&self) -> Option<Band> {
        self.limit
    }
    /// True support bounds, ±[`INF`] for infinite tails.
    pub fn support(&self) -> (i64, i64) {
        self.support
    }
    pub fn has_finite_support(&self) -> bool {
        !is_inf(self.support.0) && !is_inf(self.support.1)
    }

    /// Exponents whose stored coefficients are exact, restricted to the window.
    pub fn reliable(&self) -> Option<Band> {
        let (lo, hi) = self.exact?;
        Band::new(lo, hi).intersect(self.window)
    }

    /// Exponents whose coefficients are known: the reliable band, extended
    /// past the window on sides where the true support ends inside it.
    pub fn known(&self) -> Option<Band> {
        let (lo, hi) = self.exact?;
        let (slo, shi) = self.support;
        let wlo = if !is_inf(slo) && slo >= self.window.lo { -INF } else { self.window.lo };
        let whi = if !is_inf(shi) && shi <= self.window.hi { INF } else { self.window.hi };
        Band::new(lo, hi).intersect(Band::new(wlo, whi))
    }

    /// True when no coefficient can be trusted.
    pub fn band_empty(&self) -> bool {
        self.reliable().is_none() && !(self.coeffs.is_empty() && self.exact.is_some())
    }

    /// Requires the reliable band to cover `need`.
    pub fn require(&self, need: Band, what: &str) -> Result<()> {
        if self.coeffs.is_empty() && self.exact.is_some() {
            return Ok(());
        }
        match self.known() {
            Some(b) if b.covers(need) => Ok(()),
            Some(b) => Err(BthError::BandExhausted(format!(
                "{what}: reliable [{}, {}] does not cover [{}, {}]",
                b.lo, b.hi, need.lo, need.hi
            ))),
            None => Err(BthError::BandExhausted(format!("{what}: empty reliable band"))),
        }
    }

    /// Stored coefficient of Λ^k (zero if absent).
    pub fn coeff(&self, k: i64) -> C {
        self.coeffs.get(&k).cloned().unwrap_or_else(|| C::zero(&self.ctx))
    }

    pub fn get(&self, k: i64) -> Option<&C> {
        self.coeffs.get(&k)
    }

    pub fn iter(&self) -> impl Iterator<Item = (i64, &C)> {
        self.coeffs.iter().map(|(&k, c)| (k, c))
    }

    pub fn exponents(&self) -> Vec<i64> {
        self.coeffs.keys().copied().collect()
    }

    /// Narrows the exact region, e.g. when the inputs are only trusted on a band.
    pub fn with_reliable(mut self, band: Option<Band>) -> Self {
        self.exact = match (self.exact, band) {
            (Some((a, b)), Some(r)) => {
                let lo = a.max(r.lo);
                let hi = b.min(r.hi);
                (lo <= hi).then_some((lo, hi))
            }
            _ => None,
        };
        self
    }

    pub fn with_limit(mut self, limit: Option<Band>) -> Self {
        self.limit = limit;
        self.clip_to_limit();
        self
    }

    fn clip_to_limit(&mut self) {
        if let Some(l) = self.limit {
            let w = Band::new(self.window.lo.max(l.lo), self.window.hi.min(l.hi));
            if w.lo > w.hi {
                self.coeffs.clear();
                self.window = Band::new(l.lo, l.lo - 1);
                self.exact = None;
                return;
            }
            self.window = w;
            self.coeffs.retain(|k, _| w.contains(*k));
            self.normalize();
        }
    }

    /// Restores the invariants linking exact region, window and support.
    fn normalize(&mut self) {
        let Some((mut lo, mut hi)) = self.exact else { return };
        let (slo, shi) = self.support;
        if self.window.lo > self.window.hi {
            self.exact = None;
            return;
        }
        if !is_inf(slo) && slo >= self.window.lo {
            if lo <= self.window.lo {
                lo = -INF;
            }
        } else {
            lo = lo.max(self.window.lo);
        }
        if !is_inf(shi) && shi <= self.window.hi {
            if hi >= self.window.hi {
                hi = INF;
            }
        } else {
            hi = hi.min(self.window.hi);
        }
        self.exact = (lo <= hi).then_some((lo, hi));
    }

    fn check_ctx(&self, o: &Self) -> Result<()> {
        if self.ctx != o.ctx {
            return Err(BthError::GridMismatch("operators live on different coefficient rings".into()));
        }
        Ok(())
    }

    fn merged_limit(&self, o: &Self) -> Option<Band> {
        match (self.limit, o.limit) {
            (Some(a), Some(b)) => Some(Band::new(a.lo.max(b.lo), a.hi.min(b.hi))),
            (a, None) => a,
            (None, b) => b,
        }
    }

    fn combine(&self, o: &Self, f: impl Fn(Option<&C>, Option<&C>) -> C) -> Result<Self> {
        self.check_ctx(o)?;
        let window = Band::new(self.window.lo.min(o.window.lo), self.window.hi.max(o.window.hi));
        let mut keys: Vec<i64> = self.coeffs.keys().chain(o.coeffs.keys()).copied().collect();
        keys.sort_unstable();
        keys.dedup();
        let coeffs = keys
            .into_iter()
            .map(|k| (k, f(self.coeffs.get(&k), o.coeffs.get(&k))))
            .filter(|(_, c)| !c.is_zero())
            .collect();
        let exact = match (self.exact, o.exact) {
            (Some(a), Some(b)) => {
                let lo = a.0.max(b.0);
                let hi = a.1.min(b.1);
                (lo <= hi).then_some((lo, hi))
            }
            _ => None,
        };
        let support = (self.support.0.min(o.support.0), self.support.1.max(o.support.1));
        let mut out = Self { ctx: self.ctx.clone(), coeffs, window, limit: self.merged_limit(o), support, exact };
        out.normalize();
        out.clip_to_limit();
        Ok(out)
    }

    pub fn add(&self, o: &Self) -> Result<Self> {
        self.combine(o, |a, b| match (a, b) {
            (Some(a), Some(b)) => a.add(b),
            (Some(a), None) => a.clone(),
            (None, Some(b)) => b.clone(),
            (None, None) => unreachable!(),
        })
    }

    pub fn sub(&self, o: &Self) -> Result<Self> {
        self.combine(o, |a, b| match (a, b) {
            (Some(a), Some(b)) => a.sub(b),
            (Some(a), None) => a.clone(),
            (None, Some(b)) => b.neg(),
            (None, None) => unreachable!(),
        })
    }

    pub fn neg(&self) -> Self {
        self.map(|c| c.neg())
    }

    pub fn scale(&self, c: &C::Scalar) -> Self {
        self.map(|a| a.scale(c))
    }

    pub fn scale_ratio(&self, num: i64, den: i64) -> Self {
        if num == 0 {
            return Self::zero(&self.ctx);
        }
        self.map(|a| a.scale_ratio(num, den))
    }

    /// Multiplies every coefficient on the left by the function `f`.
    pub fn mul_coeff_left(&self, f: &C) -> Self {
        self.map(|a| f.mul(a))
    }

    fn map(&self, f: impl Fn(&C) -> C) -> Self {
        let coeffs = self
            .coeffs
            .iter()
            .map(|(&k, c)| (k, f(c)))
            .filter(|(_, c)| !c.is_zero())
            .collect();
        Self { coeffs, ctx: self.ctx.clone(), ..self.clone_meta() }
    }

    fn clone_meta(&self) -> Self {
        Self {
            ctx: self.ctx.clone(),
            coeffs: BTreeMap::new(),
            window: self.window,
            limit: self.limit,
            support: self.support,
            exact: self.exact,
        }
    }

    /// Exact region of a product from the one-sided rules.
    fn product_exact(a: &Self, b: &Self) -> Option<(i64, i64)> {
        let (ea, eb) = (a.exact?, b.exact?);
        let (loa, hia) = a.support;
        let (lob, hib) = b.support;
        let mut lo = -INF;
        let mut hi = INF;
        // lower side: every contributing pair must be exact from below
        for (e, h) in [(ea.0, hib), (eb.0, hia)] {
            if !is_inf(e) {
                if is_inf(h) {
                    return None;
                }
                lo = lo.max(e + h);
            }
        }
        for (e, l) in [(ea.1, lob), (eb.1, loa)] {
            if !is_inf(e) {
                if is_inf(l) {
                    return None;
                }
                hi = hi.min(e + l);
            }
        }
        (lo <= hi).then_some((lo, hi))
    }

    /// The product AB with (AB)_k = Σ_{i+j=k} a_i · shift(b_j, i).
    pub fn mul(&self, o: &Self) -> Result<Self> {
        self.check_ctx(o)?;
        let limit = self.merged_limit(o);
        let mut window = Band::new(self.window.lo + o.window.lo, self.window.hi + o.window.hi);
        if let Some(l) = limit {
            window = Band::new(window.lo.max(l.lo), window.hi.min(l.hi));
        }
        let sat = |a: i64, b: i64| if is_inf(a) || is_inf(b) { a.signum() * INF } else { a + b };
        let support = (sat(self.support.0, o.support.0), sat(self.support.1, o.support.1));
        let exact = Self::product_exact(self, o);
        let pairs: Vec<(i64, &C)> = self.coeffs.iter().map(|(&k, c)| (k, c)).collect();
        let ks: Vec<i64> = if window.lo <= window.hi { (window.lo..=window.hi).collect() } else { Vec::new() };
        let coeffs: Vec<(i64, C)> = ks
            .par_iter()
            .filter_map(|&k| {
                let mut acc: Option<C> = None;
                for &(i, a) in &pairs {
                    if let Some(b) = o.coeffs.get(&(k - i)) {
                        let sb = b.shift(i);
                        match acc.as_mut() {
                            Some(s) => s.add_product(a, &sb),
                            None => acc = Some(a.mul(&sb)),
                        }
                    }
                }
                acc.filter(|c| !c.is_zero()).map(|c| (k, c))
            })
            .collect();
        let mut out = Self {
            ctx: self.ctx.clone(),
            coeffs: coeffs.into_iter().collect(),
            window,
            limit,
            support,
            exact,
        };
        out.normalize();
        Ok(out)
    }

    /// [A, B] = AB − BA.
    pub fn commutator(&self, o: &Self) -> Result<Self> {
        self.mul(o)?.sub(&o.mul(self)?)
    }

    /// A₊ (exponents ≥ 0) or A₋ (exponents < 0).
    pub fn project(&self, sign: Sign) -> Self {
        let keep = |k: i64| match sign {
            Sign::Plus => k >= 0,
            Sign::Minus => k < 0,
        };
        let coeffs = self.coeffs.iter().filter(|(&k, _)| keep(k)).map(|(&k, c)| (k, c.clone())).collect();
        let (slo, shi) = self.support;
        let (support, window) = match sign {
            Sign::Plus => ((slo.max(0), shi), Band::new(self.window.lo.max(0), self.window.hi.max(0))),
            Sign::Minus => ((slo, shi.min(-1)), Band::new(self.window.lo.min(-1), self.window.hi.min(-1))),
        };
        let exact = self.exact.map(|(lo, hi)| match sign {
            Sign::Plus if lo <= 0 => (-INF, hi),
            Sign::Minus if hi >= -1 => (lo, INF),
            _ => (lo, hi),
        });
        let mut out = Self { ctx: self.ctx.clone(), coeffs, window, limit: self.limit, support, exact };
        out.normalize();
        out
    }

    /// Aⁿ by repeated squaring; A⁰ = 1.
    pub fn power(&self, n: u32) -> Result<Self> {
        let mut result = Self::identity(&self.ctx);
        if n == 0 {
            return Ok(result.with_limit(self.limit));
        }
        let mut base = self.clone();
        let mut e = n;
        let mut first = true;
        while e > 0 {
            if e & 1 == 1 {
                result = if first { base.clone() } else { result.mul(&base)? };
                first = false;
            }
            e >>= 1;
            if e > 0 {
                base = base.mul(&base)?;
            }
        }
        Ok(result)
    }

    /// Max coefficient norm over the reliable band.
    pub fn norm(&self) -> f64 {
        match self.reliable() {
            Some(b) => self.coeffs.range(b.lo..=b.hi).map(|(_, c)| c.norm()).fold(0.0, f64::max),
            None if self.coeffs.is_empty() => 0.0,
            None => f64::NAN,
        }
    }

    /// Max coefficient norm over `band` (regardless of reliability).
    pub fn norm_on(&self, band: Band) -> f64 {
        self.coeffs.range(band.lo..=band.hi).map(|(_, c)| c.norm()).fold(0.0, f64::max)
    }

    /// Common reliable band of two operators.
    pub fn common_band(&self, o: &Self) -> Option<Band> {
        self.reliable()?.intersect(o.reliable()?)
    }

    /// ‖A − B‖ on the intersection of reliable bands.
    pub fn dist(&self, o: &Self) -> Result<f64> {
        let band = self.common_band(o).ok_or_else(|| {
            BthError::BandExhausted("operators have disjoint reliable bands".into())
        })?;
        self.dist_on(o, band)
    }

    /// ‖A − B‖ restricted to `band`.
    pub fn dist_on(&self, o: &Self, band: Band) -> Result<f64> {
        self.check_ctx(o)?;
        let mut m: f64 = 0.0;
        for k in band.lo..=band.hi {
            let d = match (self.coeffs.get(&k), o.coeffs.get(&k)) {
                (Some(a), Some(b)) => a.sub(b).norm(),
                (Some(a), None) => a.norm(),
                (None, Some(b)) => b.norm(),
                (None, None) => 0.0,
            };
            m = m.max(d);
        }
        Ok(m)
    }

    /// Equality within `tol` on the common reliable band.
    pub fn approx_eq(&self, o: &Self, tol: f64) -> Result<bool> {
        Ok(self.dist(o)? <= tol)
    }

    /// Exact coefficientwise equality over both windows (for exact rings).
    pub fn strict_eq(&self, o: &Self) -> bool {
        let keys: Vec<i64> = self.coeffs.keys().chain(o.coeffs.keys()).copied().collect();
        keys.into_iter().all(|k| self.coeff(k).sub(&o.coeff(k)).is_zero())
    }

    /// Declares that the true operator is supported in `band` (a fact proved
    /// elsewhere); requires the reliable band to cover it.
    pub fn assume_support(&self, band: Band, what: &str) -> Result<Self> {
        self.require(band, what)?;
        let coeffs = self.coeffs.range(band.lo..=band.hi).map(|(&k, c)| (k, c.clone())).collect();
        Ok(Self {
            ctx: self.ctx.clone(),
            coeffs,
            window: band,
            limit: self.limit,
            support: (band.lo, band.hi),
            exact: Some((-INF, INF)),
        })
    }

    /// Keeps only exponents in `band`, as a truncation (support unchanged).
    pub fn truncate(&self, band: Band) -> Self {
        let mut out = self.clone().with_limit(Some(match self.limit {
            Some(l) => Band::new(l.lo.max(band.lo), l.hi.min(band.hi)),
            None => band,
        }));
        out.limit = self.limit;
        out
    }

    /// Coefficientwise change of ring.
    pub fn map_ring<D: Coeff>(&self, ctx: &D::Ctx, f: impl Fn(&C) -> Result<D>) -> Result<DiffOp<D>> {
        let mut coeffs = BTreeMap::new();
        for (&k, c) in &self.coeffs {
            let d = f(c)?;
            if !d.is_zero() {
                coeffs.insert(k, d);
            }
        }
        Ok(DiffOp {
            ctx: ctx.clone(),
            coeffs,
            window: self.window,
            limit: self.limit,
            support: self.support,
            exact: self.exact,
        })
    }

    /// Replaces each coefficient through `f`, keeping the band bookkeeping.
    pub fn map_coeffs(&self, f: impl Fn(i64, &C) -> C) -> Self {
        let coeffs = self
            .coeffs
            .iter()
            .map(|(&k, c)| (k, f(k, c)))
            .filter(|(_, c)| !c.is_zero())
            .collect();
        Self { coeffs, ..self.clone_meta() }
    }

    /// Plain-text table: one block per exponent, then one line per site value
    /// as produced by `fmt_coeff`.
    pub fn dump(&self, fmt_coeff: impl Fn(&C) -> Vec<String>) -> String {
        let mut s = String::new();
        let rel = self.reliable();
        let _ = writeln!(
            s,
            "# window [{}, {}] reliable {}",
            self.window.lo,
            self.window.hi,
            rel.map(|b| format!("[{}, {}]", b.lo, b.hi)).unwrap_or_else(|| "empty".into())
        );
        for (k, c) in &self.coeffs {
            let _ = writeln!(s, "k {k}");
            for line in fmt_coeff(c) {
                let _ = writeln!(s, "  {line}");
            }
        }
        s
    }
}

impl<C: Invertible> DiffOp<C> {
    /// Inverse of 1 + Σ_{j≥1} w_j Λ^{−j} (lower-triangular, unit leading term)
    /// or of Σ_{j≥0} w̃_j Λ^j (upper-triangular, invertible w̃_0), order by order
    /// up to the operator's own depth.
    pub fn triangular_inverse(&self) -> Result<Self> {
        let (slo, shi) = self.support;
        let ctx = &self.ctx;
        if slo == 0 && shi == 0 {
            return Ok(Self::finite(ctx, [(0, self.coeff(0).try_recip()?)]).with_limit(self.limit));
        }
        if shi <= 0 && self.window.hi == 0 {
            let depth = -self.window.lo;
            let lead = self.coeff(0);
            let inv0 = lead.try_recip()?;
            let mut q: Vec<C> = vec![inv0.clone()];
            for j in 1..=depth {
                let mut acc = C::zero(ctx);
                for i in 1..=j {
                    acc.add_product(&self.coeff(-i), &q[(j - i) as usize].shift(-i));
                }
                q.push(inv0.mul(&acc).neg());
            }
            let coeffs = q.into_iter().enumerate().map(|(j, c)| (-(j as i64), c));
            let mut out = Self::series(ctx, coeffs, Band::new(-depth, 0), (-INF, 0), self.limit);
            out.exact = self.exact.map(|(lo, _)| (lo.max(-depth), INF));
            out.normalize();
            return Ok(out);
        }
        if slo >= 0 && self.window.lo == 0 {
            let height = self.window.hi;
            let inv0 = self.coeff(0).try_recip()?;
            let mut q: Vec<C> = vec![inv0.clone()];
            for j in 1..=height {
                let mut acc = C::zero(ctx);
                for i in 1..=j {
                    acc.add_product(&self.coeff(i), &q[(j - i) as usize].shift(i));
                }
                q.push(inv0.mul(&acc).neg());
            }
            let coeffs = q.into_iter().enumerate().map(|(j, c)| (j as i64, c));
            let mut out = Self::series(ctx, coeffs, Band::new(0, height), (0, INF), self.limit);
            out.exact = self.exact.map(|(_, hi)| (-INF, hi.min(height)));
            out.normalize();
            return Ok(out);
        }
        Err(BthError::Invalid("triangular_inverse needs a one-sided operator with window touching 0".into()))
    }
}

/// Coefficients that can be evaluated at an arbitrary integer site.
pub trait SiteEval<T: Scalar>: Coeff {
    fn at(&self, s: i64) -> Result<T>;
}

impl<T: Scalar> SiteEval<T> for LatticeFunction<T> {
    fn at(&self, s: i64) -> Result<T> {
        self.get(s)
    }
}

impl<T: Scalar> SiteEval<T> for LatticePoly<T> {
    fn at(&self, s: i64) -> Result<T> {
        Ok(self.eval(s))
    }
}

impl<C: Coeff> DiffOp<C> {
    /// (Af)(x) = Σ_k a_k(x) f(x + kε), computed on the sites of `f`'s grid
    /// where every stencil point is valid. Site s of a windowed `f` is matched
    /// with lattice site `s + offset` of the coefficients.
    pub fn apply_offset<T: Scalar>(&self, f: &LatticeFunction<T>, offset: i64) -> Result<LatticeFunction<T>>
    where
        C: SiteEval<T>,
    {
        let grid = f.grid().clone();
        let n = grid.size() as i64;
        if grid.is_periodic() {
            let mut values = vec![T::zero(); n as usize];
            for (s, v) in values.iter_mut().enumerate() {
                let mut acc = T::zero();
                for (&k, a) in &self.coeffs {
                    acc += a.at(s as i64 + offset)? * f.get(s as i64 + k)?;
                }
                *v = acc;
            }
            return LatticeFunction::new(grid, values);
        }
        let (lo, hi) = f.valid().ok_or_else(|| BthError::EmptyInterval("input".into()))?;
        let kmin = self.coeffs.keys().next().copied().unwrap_or(0);
        let kmax = self.coeffs.keys().next_back().copied().unwrap_or(0);
        let (olo, ohi) = (lo - kmin.min(0), hi - kmax.max(0));
        if olo > ohi {
            return Err(BthError::EmptyInterval("operator stencil exceeds window".into()));
        }
        let mut values = vec![T::zero(); n as usize];
        for s in olo..=ohi {
            let mut acc = T::zero();
            for (&k, a) in &self.coeffs {
                acc += a.at(s + offset)? * f.get(s + k)?;
            }
            values[s as usize] = acc;
        }
        LatticeFunction::windowed(grid, values, olo, ohi)
    }

    pub fn apply<T: Scalar>(&self, f: &LatticeFunction<T>) -> Result<LatticeFunction<T>>
    where
        C: SiteEval<T>,
    {
        self.apply_offset(f, 0)
    }
}
