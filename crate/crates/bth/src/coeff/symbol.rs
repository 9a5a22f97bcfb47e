use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use num::{BigInt, BigRational, One, Signed, ToPrimitive, Zero};

use super::{ratio, Coeff, HasCoordinate};
use crate::error::Result;

/// Indeterminates of the symbolic ring: the coordinate x and the times t_{γ,n}.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Var {
    X,
    T { gamma: i64, n: u32 },
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Var::X => write!(f, "x"),
            Var::T { gamma, n } => write!(f, "t[{gamma},{n}]"),
        }
    }
}

/// Exact parameters of the symbolic ring.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolCtx {
    pub epsilon: BigRational,
}

impl SymbolCtx {
    pub fn new(eps_num: i64, eps_den: i64) -> Arc<Self> {
        Arc::new(Self { epsilon: ratio(eps_num, eps_den) })
    }
}

type Monomial = Vec<(Var, u32)>;

/// Exact multivariate polynomial over Q in x and the time symbols.
///
/// Terms with zero coefficient are never stored, so structural equality is
/// canonical equality.
#[derive(Debug, Clone, PartialEq)]
pub struct PolySymbol {
    ctx: Arc<SymbolCtx>,
    terms: BTreeMap<Monomial, BigRational>,
}

fn mono_mul(a: &Monomial, b: &Monomial) -> Monomial {
    let mut m: BTreeMap<Var, u32> = a.iter().cloned().collect();
    for &(v, e) in b {
        *m.entry(v).or_insert(0) += e;
    }
    m.into_iter().collect()
}

fn binom(n: u32, k: u32) -> BigInt {
    let mut r = BigInt::one();
    for i in 0..k {
        r = r * BigInt::from(n - i) / BigInt::from(i + 1);
    }
    r
}

impl PolySymbol {
    pub fn zero(ctx: &Arc<SymbolCtx>) -> Self {
        Self { ctx: ctx.clone(), terms: BTreeMap::new() }
    }

    pub fn constant(ctx: &Arc<SymbolCtx>, c: BigRational) -> Self {
        let mut p = Self::zero(ctx);
        p.insert(Vec::new(), c);
        p
    }

    pub fn var(ctx: &Arc<SymbolCtx>, v: Var) -> Self {
        let mut p = Self::zero(ctx);
        p.insert(vec![(v, 1)], BigRational::one());
        p
    }

    pub fn time(ctx: &Arc<SymbolCtx>, gamma: i64, n: u32) -> Self {
        Self::var(ctx, Var::T { gamma, n })
    }

    pub fn ctx_ref(&self) -> &Arc<SymbolCtx> {
        &self.ctx
    }

    fn insert(&mut self, m: Monomial, c: BigRational) {
        use std::collections::btree_map::Entry;
        if c.is_zero() {
            return;
        }
        match self.terms.entry(m) {
            Entry::Occupied(mut e) => {
                *e.get_mut() += c;
                if e.get().is_zero() {
                    e.remove();
                }
            }
            Entry::Vacant(e) => {
                e.insert(c);
            }
        }
    }

    pub fn terms(&self) -> impl Iterator<Item = (&[(Var, u32)], &BigRational)> {
        self.terms.iter().map(|(m, c)| (m.as_slice(), c))
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn add_poly(&self, o: &Self) -> Self {
        let mut out = self.clone();
        for (m, c) in &o.terms {
            out.insert(m.clone(), c.clone());
        }
        out
    }

    pub fn mul_poly(&self, o: &Self) -> Self {
        let mut out = Self::zero(&self.ctx);
        for (ma, ca) in &self.terms {
            for (mb, cb) in &o.terms {
                out.insert(mono_mul(ma, mb), ca * cb);
            }
        }
        out
    }

    pub fn scalar(&self, c: &BigRational) -> Self {
        let mut out = Self::zero(&self.ctx);
        for (m, v) in &self.terms {
            out.insert(m.clone(), v * c);
        }
        out
    }

    /// Formal partial derivative with respect to `v`.
    pub fn dt(&self, v: Var) -> Self {
        let mut out = Self::zero(&self.ctx);
        for (m, c) in &self.terms {
            if let Some(pos) = m.iter().position(|&(w, _)| w == v) {
                let e = m[pos].1;
                let mut m2 = m.clone();
                if e == 1 {
                    m2.remove(pos);
                } else {
                    m2[pos].1 = e - 1;
                }
                out.insert(m2, c * BigRational::from_integer(BigInt::from(e)));
            }
        }
        out
    }

    /// Substitutes x → x + kε exactly.
    pub fn shift_x(&self, k: i64) -> Self {
        if k == 0 {
            return self.clone();
        }
        let h = &self.ctx.epsilon * BigRational::from_integer(BigInt::from(k));
        let mut out = Self::zero(&self.ctx);
        for (m, c) in &self.terms {
            let pos = m.iter().position(|&(w, _)| w == Var::X);
            let Some(pos) = pos else {
                out.insert(m.clone(), c.clone());
                continue;
            };
            let a = m[pos].1;
            let mut rest = m.clone();
            rest.remove(pos);
            for e in 0..=a {
                let coef = c
                    * BigRational::from_integer(binom(a, e))
                    * num::pow::pow(h.clone(), (a - e) as usize);
                let mono = if e == 0 { rest.clone() } else { mono_mul(&rest, &vec![(Var::X, e)]) };
                out.insert(mono, coef);
            }
        }
        out
    }

    /// Constant term if the polynomial is a constant.
    pub fn as_constant(&self) -> Option<BigRational> {
        match self.terms.len() {
            0 => Some(BigRational::zero()),
            1 => self.terms.get(&Vec::new()).cloned(),
            _ => None,
        }
    }
}

impl fmt::Display for PolySymbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (i, (m, c)) in self.terms.iter().enumerate() {
            if i > 0 {
                write!(f, " + ")?;
            }
            write!(f, "{c}")?;
            for (v, e) in m {
                if *e == 1 {
                    write!(f, "*{v}")?;
                } else {
                    write!(f, "*{v}^{e}")?;
                }
            }
        }
        Ok(())
    }
}

impl Coeff for PolySymbol {
    type Ctx = Arc<SymbolCtx>;
    type Scalar = BigRational;

    fn ctx(&self) -> Self::Ctx {
        self.ctx.clone()
    }
    fn zero(ctx: &Self::Ctx) -> Self {
        PolySymbol::zero(ctx)
    }
    fn constant(ctx: &Self::Ctx, c: BigRational) -> Self {
        PolySymbol::constant(ctx, c)
    }
    fn from_ratio(ctx: &Self::Ctx, num: i64, den: i64) -> Self {
        PolySymbol::constant(ctx, ratio(num, den))
    }
    fn shift(&self, k: i64) -> Self {
        self.shift_x(k)
    }
    fn add(&self, o: &Self) -> Self {
        self.add_poly(o)
    }
    fn sub(&self, o: &Self) -> Self {
        self.add_poly(&o.neg())
    }
    fn mul(&self, o: &Self) -> Self {
        self.mul_poly(o)
    }
    fn neg(&self) -> Self {
        self.scalar(&-BigRational::one())
    }
    fn scale(&self, c: &BigRational) -> Self {
        self.scalar(c)
    }
    fn scale_ratio(&self, num: i64, den: i64) -> Self {
        self.scalar(&ratio(num, den))
    }
    fn norm(&self) -> f64 {
        self.terms.values().map(|c| c.abs().to_f64().unwrap_or(f64::INFINITY)).fold(0.0, f64::max)
    }
    fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }
}

impl HasCoordinate for PolySymbol {
    fn coordinate(ctx: &Self::Ctx) -> Result<Self> {
        Ok(PolySymbol::var(ctx, Var::X))
    }
    fn epsilon(ctx: &Self::Ctx) -> num::BigRational {
        ctx.epsilon.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(n: i64, d: i64) -> BigRational {
        ratio(n, d)
    }

    #[test]
    fn dt_of_linear_term() {
        let ctx = SymbolCtx::new(1, 1);
        let t = PolySymbol::time(&ctx, 1, 0);
        let x = PolySymbol::var(&ctx, Var::X);
        let p = t.mul(&x).scale(&q(3, 1));
        let d = p.dt(Var::T { gamma: 1, n: 0 });
        assert_eq!(d, x.scale(&q(3, 1)));
        assert!(x.mul(&x).dt(Var::T { gamma: 1, n: 0 }).is_zero());
    }

    #[test]
    fn product_with_half_epsilon() {
        let ctx = SymbolCtx::new(1, 2);
        let x = PolySymbol::var(&ctx, Var::X);
        let p = x.mul(&x.shift(1));
        let expect = x.mul(&x).add(&x.scale(&q(1, 2)));
        assert_eq!(p, expect);
    }

    #[test]
    fn shift_of_square() {
        let ctx = SymbolCtx::new(1, 1);
        let x = PolySymbol::var(&ctx, Var::X);
        let sq = x.mul(&x).shift(2);
        let expect = x.mul(&x).add(&x.scale(&q(4, 1))).add(&PolySymbol::constant(&ctx, q(4, 1)));
        assert_eq!(sq, expect);
    }

    #[test]
    fn cancellation_normalizes() {
        let ctx = SymbolCtx::new(1, 3);
        let x = PolySymbol::var(&ctx, Var::X);
        let z = x.sub(&x);
        assert!(z.is_zero());
        assert_eq!(z, PolySymbol::zero(&ctx));
        assert_eq!(z.as_constant(), Some(BigRational::zero()));
    }
}
