//! Additional symmetries ∂*_{m,l}: ∂P_L = −(K)₋P_L, ∂P_R = (K)₊P_R with
//! K_{m,l} = (M_L − M_R)^m L^l, and the Block-algebra relation
//! [∂*_{m,l}, ∂*_{n,k}] = (km − nl) ∂*_{m+n−1,k+l−1}, evaluated by the chain
//! rule and, independently, by composing integrated flows.

use std::fmt;
use std::str::FromStr;

use crate::coeff::{Coeff, LatticeFunction, LatticePoly};
use crate::diffop::{Band, DiffOp, Sign};
use crate::dressing::{lift_op, secular_pair, DressingPair, LaxOperator};
use crate::error::{BthError, Result};
use crate::hierarchy::{b_from_pair, project_a, rk4_step, sato_field, FlowIndex, FlowState, TimeConfig};
use crate::oschulman::{build_m, numeric_times, os_residuals, x_over, OsContext, OsReport};
use crate::scalar::Scalar;

type Poly<T> = LatticePoly<T>;
type Op<T> = DiffOp<LatticePoly<T>>;

/// Label (m, l) of the additional time t*_{m,l}.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AddFlowIndex {
    pub m: u32,
    pub l: u32,
}

/// The generating set {∂*_{0,1}, ∂*_{1,0}, ∂*_{1,1}, ∂*_{2,1}, ∂*_{1,2}}.
pub const GENERATORS: [AddFlowIndex; 5] = [
    AddFlowIndex { m: 0, l: 1 },
    AddFlowIndex { m: 1, l: 0 },
    AddFlowIndex { m: 1, l: 1 },
    AddFlowIndex { m: 2, l: 1 },
    AddFlowIndex { m: 1, l: 2 },
];

impl AddFlowIndex {
    pub const fn new(m: u32, l: u32) -> Self {
        Self { m, l }
    }

    /// d_{a,b} = ∂*_{a+1,b+1} (a, b ≥ −1).
    pub fn block(a: i64, b: i64) -> Result<Self> {
        if a < -1 || b < -1 {
            return Err(BthError::OutOfRange(format!("d_{{{a},{b}}} needs a, b ≥ −1")));
        }
        Ok(Self::new((a + 1) as u32, (b + 1) as u32))
    }

    /// (a, b) with d_{a,b} = ∂*_{m,l}.
    pub fn block_label(&self) -> (i64, i64) {
        (self.m as i64 - 1, self.l as i64 - 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m + self.l == 0 {
            return Err(BthError::OutOfRange("additional flow (0,0) is not a flow; need m + l ≥ 1".into()));
        }
        Ok(())
    }

    /// Structure constant km − nl of [∂*_{m,l}, ∂*_{n,k}] and the index of
    /// the right side, if it is in range.
    pub fn bracket(&self, o: &Self) -> (i64, Option<Self>) {
        let c = o.l as i64 * self.m as i64 - o.m as i64 * self.l as i64;
        let (m, l) = (self.m as i64 + o.m as i64 - 1, self.l as i64 + o.l as i64 - 1);
        (c, (m >= 0 && l >= 0).then(|| Self::new(m as u32, l as u32)))
    }
}

impl fmt::Display for AddFlowIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.m, self.l)
    }
}

impl FromStr for AddFlowIndex {
    type Err = BthError;
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().trim_start_matches('(').trim_end_matches(')');
        let (m, l) = t.split_once(',').ok_or_else(|| BthError::Invalid(format!("additional flow `{s}` is not m,l")))?;
        let m = m.trim().parse().map_err(|_| BthError::Invalid(format!("bad m in `{s}`")))?;
        let l = l.trim().parse().map_err(|_| BthError::Invalid(format!("bad l in `{s}`")))?;
        Ok(Self { m, l })
    }
}

/// A linear combination Σ s_i ∂*_{idx_i}.
pub type Generator = Vec<(f64, AddFlowIndex)>;

fn single(idx: AddFlowIndex) -> Generator {
    vec![(1.0, idx)]
}

/// Truncation depth that leaves a margin of (m+n)·max(N,M) + (k+l)·N
/// beyond the basic band for the bracket of two additional flows.
pub fn required_depth(a: AddFlowIndex, b: AddFlowIndex, big_n: usize, big_m: usize) -> usize {
    let w = big_n.max(big_m) as u32;
    (8 + big_n + big_m) + ((a.m + b.m) * w + (a.l + b.l) * big_n as u32) as usize
}

/// A consistent state: L, its secular dressing pair, and M_L, M_R at the given times.
#[derive(Debug, Clone)]
pub struct AddState<T: Scalar> {
    pub lax: LaxOperator<LatticeFunction<T>>,
    pub pair: DressingPair<Poly<T>>,
    pub os: OsContext<Poly<T>>,
    pub tcfg: TimeConfig,
    pub depth: usize,
    l: Op<T>,
}

impl<T: Scalar> AddState<T> {
    pub fn new(lax: &LaxOperator<LatticeFunction<T>>, tcfg: &TimeConfig, depth: usize) -> Result<Self> {
        tcfg.validate(lax.n(), lax.m())?;
        let pair = secular_pair(lax, depth)?;
        Self::from_pair(lax, pair, tcfg)
    }

    pub fn from_pair(lax: &LaxOperator<LatticeFunction<T>>, pair: DressingPair<Poly<T>>, tcfg: &TimeConfig) -> Result<Self> {
        let ctx = pair.pl.ctx().clone();
        let os = build_m(&pair, lax.n(), lax.m(), &numeric_times(&ctx, tcfg))?;
        let l = lift_op::<T, Poly<T>>(lax.op(), &ctx)?;
        Ok(Self { lax: lax.clone(), depth: pair.depth, pair, os, tcfg: tcfg.clone(), l })
    }

    /// Rebuilds at `depth` when the current depth is smaller; with
    /// `auto_raise` off, a smaller depth is a band-exhaustion error.
    pub fn ensure_depth(self, depth: usize, auto_raise: bool) -> Result<Self> {
        if self.depth >= depth {
            return Ok(self);
        }
        if !auto_raise {
            return Err(BthError::BandExhausted(format!("truncation depth {} below the required {depth}", self.depth)));
        }
        Self::new(&self.lax, &self.tcfg, depth)
    }

    pub fn n(&self) -> usize {
        self.lax.n()
    }
    pub fn m(&self) -> usize {
        self.lax.m()
    }
    /// L lifted to the secular ring.
    pub fn l_op(&self) -> &Op<T> {
        &self.l
    }
    fn band(&self) -> Band {
        self.lax.band()
    }

    /// [L, M_L] = 1, [L, M_R] = 1, [M_L − M_R, L] = 0 residuals.
    pub fn consistency(&self) -> Result<OsReport> {
        os_residuals(&self.os, &self.l)
    }

    /// K_{m,l} = (M_L − M_R)^m L^l.
    pub fn k_op(&self, idx: AddFlowIndex) -> Result<Op<T>> {
        k_from(&self.os.ml, &self.os.mr, &self.l, idx)
    }

    fn k_gen(&self, g: &[(f64, AddFlowIndex)]) -> Result<Op<T>> {
        combine(g, |idx| self.k_op(idx))
    }

    /// −(K)₋, (K)₊ and ∂*L for a generator.
    fn parts(&self, g: &[(f64, AddFlowIndex)]) -> Result<Parts<T>> {
        let k = self.k_gen(g)?;
        let km = k.project(Sign::Minus);
        let kp = k.project(Sign::Plus);
        let dl = km.neg().commutator(&self.l)?.assume_support(self.band(), "∂*L")?;
        Ok(Parts { km, kp, dl })
    }

    /// ∂*(M_L − M_R) along a generator.
    fn d_diff(&self, p: &Parts<T>) -> Result<Op<T>> {
        let dml = p.km.neg().commutator(&self.os.ml)?;
        let dmr = p.kp.commutator(&self.os.mr)?;
        dml.sub(&dmr)
    }

    /// ∂ K_{idx} along the direction with ∂(M_L − M_R) = `dd` and ∂L = `dl`.
    fn leibniz(&self, idx: AddFlowIndex, dd: &Op<T>, dl: &Op<T>) -> Result<Op<T>> {
        let d = self.os.ml.sub(&self.os.mr)?;
        leibniz(&d, dd, &self.l, dl, idx)
    }
}

struct Parts<T: Scalar> {
    km: Op<T>,
    kp: Op<T>,
    dl: Op<T>,
}

fn combine<T: Scalar>(g: &[(f64, AddFlowIndex)], mut f: impl FnMut(AddFlowIndex) -> Result<Op<T>>) -> Result<Op<T>> {
    let mut acc: Option<Op<T>> = None;
    for &(s, idx) in g {
        let term = f(idx)?.scale(&T::from_f64(s));
        acc = Some(match acc {
            Some(a) => a.add(&term)?,
            None => term,
        });
    }
    acc.ok_or_else(|| BthError::Invalid("empty generator".into()))
}

fn k_from<T: Scalar>(ml: &Op<T>, mr: &Op<T>, l: &Op<T>, idx: AddFlowIndex) -> Result<Op<T>> {
    let d = ml.sub(mr)?;
    let k = d.power(idx.m)?.mul(&l.power(idx.l)?)?;
    if k.band_empty() {
        return Err(BthError::BandExhausted(format!(
            "K_{idx} = (M_L − M_R)^{} L^{}: no coefficient has a finite expansion (M_L is unbounded below, M_R above)",
            idx.m, idx.l
        )));
    }
    Ok(k)
}

/// Σ_i D^i (∂D) D^{m−1−i} L^l + D^m Σ_j L^j (∂L) L^{l−1−j}.
fn leibniz<T: Scalar>(d: &Op<T>, dd: &Op<T>, l: &Op<T>, dl: &Op<T>, idx: AddFlowIndex) -> Result<Op<T>> {
    let ctx = d.ctx().clone();
    let mut out = DiffOp::zero(&ctx);
    let lp = l.power(idx.l)?;
    for i in 0..idx.m {
        let t = d.power(i)?.mul(dd)?.mul(&d.power(idx.m - 1 - i)?)?.mul(&lp)?;
        out = out.add(&t)?;
    }
    let dm = d.power(idx.m)?;
    for j in 0..idx.l {
        let t = dm.mul(&l.power(j)?)?.mul(dl)?.mul(&l.power(idx.l - 1 - j)?)?;
        out = out.add(&t)?;
    }
    if out.band_empty() {
        return Err(BthError::BandExhausted(format!("∂K_{idx}: empty reliable band")));
    }
    Ok(out)
}

/// The additional vector field on (P_L, P_R) and the induced ∂L from both sides.
#[derive(Debug, Clone)]
pub struct AddField<C: Coeff> {
    pub dpl: DiffOp<C>,
    pub dpr: DiffOp<C>,
    pub dl_left: DiffOp<C>,
    pub dl_right: DiffOp<C>,
    /// ‖ΔL_left − ΔL_right‖ on [−M, N], relative to max(1, ‖ΔL‖).
    pub reduction: f64,
    /// Largest reliable coefficient of ΔL at Λ^N or outside [−M, N−1], same scale.
    pub leak: f64,
}

pub fn add_field<T: Scalar>(state: &AddState<T>, idx: AddFlowIndex) -> Result<AddField<Poly<T>>> {
    idx.validate()?;
    let k = state.k_op(idx)?;
    let km = k.project(Sign::Minus);
    let kp = k.project(Sign::Plus);
    let dpl = km.mul(&state.pair.pl)?.neg();
    let dpr = kp.mul(&state.pair.pr)?;
    let dl_left = km.neg().commutator(&state.l)?;
    let dl_right = kp.commutator(&state.l)?;
    let band = state.band();
    dl_left.require(band, "ΔL from P_L")?;
    dl_right.require(band, "ΔL from P_R")?;
    let scale = dl_left.norm_on(band).max(1.0);
    let reduction = dl_left.dist_on(&dl_right, band)? / scale;
    let (n, m) = (state.n() as i64, state.m() as i64);
    let mut leak: f64 = 0.0;
    for op in [&dl_left, &dl_right] {
        if let Some(r) = op.reliable() {
            for out in [Band::new(r.lo, -m - 1), Band::new(n, r.hi)] {
                if let Some(b) = out.intersect(r) {
                    leak = leak.max(op.norm_on(b));
                }
            }
        }
    }
    Ok(AddField { dpl, dpr, dl_left, dl_right, reduction, leak: leak / scale })
}

/// Operand of [`directional_derivative`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Ml,
    Mr,
    L,
    B(FlowIndex),
    K(AddFlowIndex),
}

/// Closed-form derivative of `target` along ∂*_{idx}.
pub fn directional_derivative<T: Scalar>(state: &AddState<T>, idx: AddFlowIndex, target: Target) -> Result<Op<T>> {
    idx.validate()?;
    derivative_along(state, &single(idx), target)
}

fn derivative_along<T: Scalar>(state: &AddState<T>, g: &[(f64, AddFlowIndex)], target: Target) -> Result<Op<T>> {
    let p = state.parts(g)?;
    match target {
        Target::Ml => p.km.neg().commutator(&state.os.ml),
        Target::Mr => p.kp.commutator(&state.os.mr),
        Target::L => Ok(p.dl),
        Target::B(flow) => {
            let b = b_from_pair(&state.pair, flow, state.n(), state.m())?;
            if flow.is_upper() { p.km.neg().commutator(&b) } else { p.kp.commutator(&b) }
        }
        Target::K(k) => state.leibniz(k, &state.d_diff(&p)?, &p.dl),
    }
}

/// The three components of a bracket of vector fields, with the scale used to make residuals relative.
#[derive(Debug, Clone)]
pub struct BracketOps<C: Coeff> {
    pub pl: DiffOp<C>,
    pub pr: DiffOp<C>,
    pub l: DiffOp<C>,
    pub scale: [f64; 3],
}

fn max_norm<C: Coeff>(ops: &[&DiffOp<C>]) -> f64 {
    ops.iter().map(|o| o.norm()).fold(f64::MIN_POSITIVE, f64::max)
}

/// [X_A, X_B] applied to P_L, P_R and L by the chain rule, for generators A, B.
pub fn bracket_ops<T: Scalar>(
    state: &AddState<T>,
    a: &[(f64, AddFlowIndex)],
    b: &[(f64, AddFlowIndex)],
) -> Result<BracketOps<Poly<T>>> {
    let pa = state.parts(a)?;
    let pb = state.parts(b)?;
    let dd_a = state.d_diff(&pa)?;
    let dd_b = state.d_diff(&pb)?;
    let dkb_a = combine(b, |idx| state.leibniz(idx, &dd_a, &pa.dl))?;
    let dka_b = combine(a, |idx| state.leibniz(idx, &dd_b, &pb.dl))?;
    let (pl, pr, l) = (&state.pair.pl, &state.pair.pr, &state.l);

    let t1 = dkb_a.project(Sign::Minus).mul(pl)?.neg();
    let t2 = pb.km.mul(&pa.km)?.mul(pl)?;
    let t3 = dka_b.project(Sign::Minus).mul(pl)?.neg();
    let t4 = pa.km.mul(&pb.km)?.mul(pl)?;
    let on_pl = t1.add(&t2)?.sub(&t3)?.sub(&t4)?;
    let s_pl = max_norm(&[&t1, &t2, &t3, &t4]);

    let r1 = dkb_a.project(Sign::Plus).mul(pr)?;
    let r2 = pb.kp.mul(&pa.kp)?.mul(pr)?;
    let r3 = dka_b.project(Sign::Plus).mul(pr)?;
    let r4 = pa.kp.mul(&pb.kp)?.mul(pr)?;
    let on_pr = r1.add(&r2)?.sub(&r3)?.sub(&r4)?;
    let s_pr = max_norm(&[&r1, &r2, &r3, &r4]);

    let band = state.band();
    let l1 = dkb_a.project(Sign::Minus).neg().commutator(l)?;
    let l2 = pb.km.neg().commutator(&pa.dl)?;
    let l3 = dka_b.project(Sign::Minus).neg().commutator(l)?;
    let l4 = pa.km.neg().commutator(&pb.dl)?;
    let on_l = l1.add(&l2)?.sub(&l3)?.sub(&l4)?.assume_support(band, "[X_A, X_B]L")?;
    let s_l = [&l1, &l2, &l3, &l4].iter().map(|o| o.norm_on(band)).fold(f64::MIN_POSITIVE, f64::max);
    Ok(BracketOps { pl: on_pl, pr: on_pr, l: on_l, scale: [s_pl, s_pr, s_l] })
}

/// c·F_C on P_L, P_R and L (zero when c = 0).
fn rhs_ops<T: Scalar>(state: &AddState<T>, c: i64, target: Option<AddFlowIndex>) -> Result<[Op<T>; 3]> {
    let ctx = state.pair.pl.ctx().clone();
    if c == 0 {
        return Ok([DiffOp::zero(&ctx), DiffOp::zero(&ctx), DiffOp::zero(&ctx)]);
    }
    let t = target.ok_or_else(|| BthError::OutOfRange("right-side index leaves m, l ≥ 0 with nonzero structure constant".into()))?;
    let p = state.parts(&single(t))?;
    let s = T::from_f64(c as f64);
    Ok([
        p.km.mul(&state.pair.pl)?.neg().scale(&s),
        p.kp.mul(&state.pair.pr)?.scale(&s),
        p.dl.scale(&s),
    ])
}

/// Relative residuals of the Block relation on P_L, P_R and L.
#[derive(Debug, Clone, Copy)]
pub struct BracketReport {
    pub structure: i64,
    pub target: Option<AddFlowIndex>,
    pub pl: f64,
    pub pr: f64,
    pub l: f64,
}

impl BracketReport {
    pub fn max(&self) -> f64 {
        self.pl.max(self.pr).max(self.l)
    }
}

fn rel_dist<C: Coeff>(a: &DiffOp<C>, b: &DiffOp<C>, scale: f64, what: &str) -> Result<f64> {
    let band = a
        .common_band(b)
        .or_else(|| if b.exponents().is_empty() { a.reliable() } else { None })
        .ok_or_else(|| BthError::BandExhausted(format!("{what}: no common reliable band")))?;
    Ok(a.dist_on(b, band)? / scale)
}

/// [∂*_A, ∂*_B] − (km − nl)∂*_{m+n−1,k+l−1} by the chain rule.
pub fn block_bracket_residual<T: Scalar>(state: &AddState<T>, a: AddFlowIndex, b: AddFlowIndex) -> Result<BracketReport> {
    a.validate()?;
    b.validate()?;
    let (c, target) = a.bracket(&b);
    let ops = bracket_ops(state, &single(a), &single(b))?;
    let rhs = rhs_ops(state, c, target)?;
    Ok(BracketReport {
        structure: c,
        target,
        pl: rel_dist(&ops.pl, &rhs[0], ops.scale[0], "bracket on P_L")?,
        pr: rel_dist(&ops.pr, &rhs[1], ops.scale[1], "bracket on P_R")?,
        l: rel_dist(&ops.l, &rhs[2], ops.scale[2], "bracket on L")?,
    })
}

/// ‖[A, B] + [B, A]‖ relative, all three components.
pub fn antisymmetry_residual<T: Scalar>(state: &AddState<T>, a: AddFlowIndex, b: AddFlowIndex) -> Result<f64> {
    let ab = bracket_ops(state, &single(a), &single(b))?;
    let ba = bracket_ops(state, &single(b), &single(a))?;
    let mut r: f64 = 0.0;
    for (i, (x, y)) in [(&ab.pl, &ba.pl), (&ab.pr, &ba.pr), (&ab.l, &ba.l)].into_iter().enumerate() {
        r = r.max(rel_dist(x, &y.neg(), ab.scale[i], "antisymmetry")?);
    }
    Ok(r)
}

/// ‖[A + sC, B] − [A, B] − s[C, B]‖ relative, all three components.
pub fn bilinearity_residual<T: Scalar>(state: &AddState<T>, a: AddFlowIndex, c: AddFlowIndex, s: f64, b: AddFlowIndex) -> Result<f64> {
    let mixed = bracket_ops(state, &[(1.0, a), (s, c)], &single(b))?;
    let ab = bracket_ops(state, &single(a), &single(b))?;
    let cb = bracket_ops(state, &single(c), &single(b))?;
    let sc = T::from_f64(s);
    let mut r: f64 = 0.0;
    for (i, (m, (x, y))) in [(&mixed.pl, (&ab.pl, &cb.pl)), (&mixed.pr, (&ab.pr, &cb.pr)), (&mixed.l, (&ab.l, &cb.l))]
        .into_iter()
        .enumerate()
    {
        let lin = x.add(&y.scale(&sc))?;
        r = r.max(rel_dist(m, &lin, mixed.scale[i], "bilinearity")?);
    }
    Ok(r)
}

/// [d_{a,0}, d_{b,0}] − (a − b)d_{a+b,0} for the shifted labels a, b (relative, max over components).
pub fn witt_residual<T: Scalar>(state: &AddState<T>, a: i64, b: i64) -> Result<f64> {
    let rep = block_bracket_residual(state, AddFlowIndex::block(a, 0)?, AddFlowIndex::block(b, 0)?)?;
    debug_assert_eq!(rep.structure, a - b);
    Ok(rep.max())
}

/// (P_L, P_L^{-1}, P_R, P_R^{-1}) advanced together under an additional flow.
#[derive(Debug, Clone)]
pub struct AddFlowState<C: Coeff> {
    pub pl: DiffOp<C>,
    pub pl_inv: DiffOp<C>,
    pub pr: DiffOp<C>,
    pub pr_inv: DiffOp<C>,
}

impl<C: Coeff> AddFlowState<C> {
    pub fn from_pair(pair: &DressingPair<C>) -> Self {
        Self { pl: pair.pl.clone(), pl_inv: pair.pl_inv.clone(), pr: pair.pr.clone(), pr_inv: pair.pr_inv.clone() }
    }
}

impl<C: Coeff> FlowState for AddFlowState<C>
where
    C::Scalar: Scalar,
{
    fn axpy(&self, h: f64, d: &Self) -> Result<Self> {
        let s = C::Scalar::from_f64(h);
        let step = |a: &DiffOp<C>, b: &DiffOp<C>| a.add(&b.scale(&s));
        Ok(Self {
            pl: step(&self.pl, &d.pl)?,
            pl_inv: step(&self.pl_inv, &d.pl_inv)?,
            pr: step(&self.pr, &d.pr)?,
            pr_inv: step(&self.pr_inv, &d.pr_inv)?,
        })
    }
    fn magnitude(&self) -> f64 {
        let m = [&self.pl, &self.pl_inv, &self.pr, &self.pr_inv].iter().map(|o| o.norm()).fold(0.0, f64::max);
        if m.is_finite() { m } else { f64::NAN }
    }
}

/// Evaluation of the additional field at an arbitrary (P_L, P_R), with Γ fixed.
struct FlowEngine<'a, T: Scalar> {
    state: &'a AddState<T>,
}

impl<T: Scalar> FlowEngine<'_, T> {
    fn lax_of(&self, s: &AddFlowState<Poly<T>>) -> Result<Op<T>> {
        let ctx = s.pl.ctx();
        let n = self.state.n() as i64;
        s.pl.mul(&DiffOp::shift_op(ctx, n))?.mul(&s.pl_inv)?.assume_support(self.state.band(), "evolved L")
    }

    fn rhs(&self, s: &AddFlowState<Poly<T>>, idx: AddFlowIndex) -> Result<AddFlowState<Poly<T>>> {
        let os = &self.state.os;
        let ml = s.pl.mul(&os.gamma_l)?.mul(&s.pl_inv)?;
        let mr = s.pr.mul(&os.gamma_r)?.mul(&s.pr_inv)?;
        let k = k_from(&ml, &mr, &self.lax_of(s)?, idx)?;
        let km = k.project(Sign::Minus);
        let kp = k.project(Sign::Plus);
        Ok(AddFlowState {
            pl: km.mul(&s.pl)?.neg(),
            pl_inv: s.pl_inv.mul(&km)?,
            pr: kp.mul(&s.pr)?,
            pr_inv: s.pr_inv.mul(&kp)?.neg(),
        })
    }

    /// One RK4 step of length h (of either sign) along ∂*_{idx}.
    fn flow(&self, s: &AddFlowState<Poly<T>>, idx: AddFlowIndex, h: f64) -> Result<AddFlowState<Poly<T>>> {
        rk4_step(s, h, &|x: &AddFlowState<Poly<T>>| self.rhs(x, idx))
    }
}

/// Integrates ∂*_{idx} over `duration` in `steps` RK4 steps.
pub fn evolve_additional<T: Scalar>(
    state: &AddState<T>,
    idx: AddFlowIndex,
    duration: f64,
    steps: usize,
) -> Result<AddFlowState<Poly<T>>> {
    idx.validate()?;
    let eng = FlowEngine { state };
    let h = duration / steps.max(1) as f64;
    let mut s = AddFlowState::from_pair(&state.pair);
    for step in 1..=steps.max(1) {
        s = eng.flow(&s, idx, h).map_err(|e| match e {
            BthError::NonFinite { .. } => BthError::Diverged { step },
            e => e,
        })?;
        if !(s.magnitude() < 1e12) {
            return Err(BthError::Diverged { step });
        }
    }
    Ok(s)
}

/// L = P_L Λ^N P_L^{-1} of an evolved state, restricted to [−M, N].
pub fn evolved_lax<T: Scalar>(state: &AddState<T>, s: &AddFlowState<Poly<T>>) -> Result<Op<T>> {
    FlowEngine { state }.lax_of(s)
}

/// Finite-difference bracket at one step size.
#[derive(Debug, Clone, Copy)]
pub struct FdReport {
    pub h: f64,
    pub structure: i64,
    /// ‖(Φ(p) − p)/h² − c F_C(p)‖ relative, on P_L, P_R and L.
    pub pl: f64,
    pub pr: f64,
    pub l: f64,
    /// The same estimate compared with the chain-rule bracket.
    pub vs_chain: f64,
}

/// Estimates [X_A, X_B] from Φ^B_{−h}Φ^A_{−h}Φ^B_hΦ^A_h and compares with c F_C.
pub fn block_bracket_fd<T: Scalar>(state: &AddState<T>, a: AddFlowIndex, b: AddFlowIndex, h: f64) -> Result<FdReport> {
    a.validate()?;
    b.validate()?;
    if !(h > 0.0 && h.is_finite()) {
        return Err(BthError::Invalid(format!("finite-difference step {h} must be positive")));
    }
    let (c, target) = a.bracket(&b);
    let eng = FlowEngine { state };
    let p0 = AddFlowState::from_pair(&state.pair);
    let s = eng.flow(&p0, a, h)?;
    let s = eng.flow(&s, b, h)?;
    let s = eng.flow(&s, a, -h)?;
    let s = eng.flow(&s, b, -h)?;
    let inv = T::from_f64(1.0 / (h * h));
    let est_pl = s.pl.sub(&p0.pl)?.scale(&inv);
    let est_pr = s.pr.sub(&p0.pr)?.scale(&inv);
    let est_l = eng.lax_of(&s)?.sub(&eng.lax_of(&p0)?)?.scale(&inv);
    let chain = bracket_ops(state, &single(a), &single(b))?;
    let rhs = rhs_ops(state, c, target)?;
    let pl = rel_dist(&est_pl, &rhs[0], chain.scale[0], "fd bracket on P_L")?;
    let pr = rel_dist(&est_pr, &rhs[1], chain.scale[1], "fd bracket on P_R")?;
    let l = rel_dist(&est_l, &rhs[2], chain.scale[2], "fd bracket on L")?;
    let vs_chain = rel_dist(&est_pl, &chain.pl, chain.scale[0], "fd vs chain on P_L")?
        .max(rel_dist(&est_pr, &chain.pr, chain.scale[1], "fd vs chain on P_R")?);
    Ok(FdReport { h, structure: c, pl, pr, l, vs_chain })
}

/// Finite-difference residuals at h and h/2 and their ratio (P_L and P_R combined).
#[derive(Debug, Clone, Copy)]
pub struct Richardson {
    pub coarse: FdReport,
    pub fine: FdReport,
    pub ratio: f64,
}

pub fn block_bracket_richardson<T: Scalar>(state: &AddState<T>, a: AddFlowIndex, b: AddFlowIndex, h: f64) -> Result<Richardson> {
    let coarse = block_bracket_fd(state, a, b, h)?;
    let fine = block_bracket_fd(state, a, b, h / 2.0)?;
    let ratio = coarse.pl.max(coarse.pr) / fine.pl.max(fine.pr);
    Ok(Richardson { coarse, fine, ratio })
}

/// [∂*_{idx}, ∂_{t_{γ,n}}] on P_L and P_R (relative).
#[derive(Debug, Clone, Copy)]
pub struct CommReport {
    pub pl: f64,
    pub pr: f64,
}

impl CommReport {
    pub fn max(&self) -> f64 {
        self.pl.max(self.pr)
    }
}

/// Chain-rule bracket of an additional flow with a hierarchy flow, using
/// ∂_t M = [A, M], ∂_t L = [A, L] and ∂*B from the dressing.
pub fn hierarchy_commutativity_residual<T: Scalar>(state: &AddState<T>, idx: AddFlowIndex, flow: FlowIndex) -> Result<CommReport> {
    idx.validate()?;
    let (n, m) = (state.n(), state.m());
    let b = b_from_pair(&state.pair, flow, n, m)?;
    let a = project_a(&b, flow);
    let g = single(idx);
    let p = state.parts(&g)?;
    let db_star = derivative_along(state, &g, Target::B(flow))?;
    let dd_t = a.commutator(&state.os.ml)?.sub(&a.commutator(&state.os.mr)?)?;
    let dl_t = a.commutator(&state.l)?.assume_support(state.band(), "∂_t L")?;
    let dk_t = state.leibniz(idx, &dd_t, &dl_t)?;
    let (pl, pr) = (&state.pair.pl, &state.pair.pr);
    let (bm, bp) = (b.project(Sign::Minus), b.project(Sign::Plus));

    let t1 = db_star.project(Sign::Minus).mul(pl)?.neg();
    let t2 = bm.mul(&p.km)?.mul(pl)?;
    let t3 = dk_t.project(Sign::Minus).mul(pl)?;
    let t4 = p.km.mul(&bm)?.mul(pl)?;
    let on_pl = t1.add(&t2)?.add(&t3)?.sub(&t4)?;
    let r1 = db_star.project(Sign::Plus).mul(pr)?;
    let r2 = bp.mul(&p.kp)?.mul(pr)?;
    let r3 = dk_t.project(Sign::Plus).mul(pr)?;
    let r4 = p.kp.mul(&bp)?.mul(pr)?;
    let on_pr = r1.add(&r2)?.sub(&r3)?.sub(&r4)?;
    let zero = DiffOp::zero(pl.ctx());
    Ok(CommReport {
        pl: rel_dist(&on_pl, &zero, max_norm(&[&t1, &t2, &t3, &t4]), "[∂*, ∂_t]P_L")?,
        pr: rel_dist(&on_pr, &zero, max_norm(&[&r1, &r2, &r3, &r4]), "[∂*, ∂_t]P_R")?,
    })
}

/// The printed symbol flows A*_{L0,1}, …, A*_{R1,1}.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SymbolFlow {
    L01,
    L10,
    L11,
    R01,
    R10,
    R11,
}

impl SymbolFlow {
    pub const ALL: [SymbolFlow; 6] = [Self::L01, Self::L10, Self::L11, Self::R01, Self::R10, Self::R11];

    pub fn index(&self) -> AddFlowIndex {
        match self {
            Self::L01 | Self::R01 => AddFlowIndex::new(0, 1),
            Self::L10 | Self::R10 => AddFlowIndex::new(1, 0),
            Self::L11 | Self::R11 => AddFlowIndex::new(1, 1),
        }
    }

    pub fn is_left(&self) -> bool {
        matches!(self, Self::L01 | Self::L10 | Self::L11)
    }
}

impl fmt::Display for SymbolFlow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let side = if self.is_left() { 'L' } else { 'R' };
        let i = self.index();
        write!(f, "{side}{},{}", i.m, i.l)
    }
}

impl FromStr for SymbolFlow {
    type Err = BthError;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|w| w.to_string() == s.trim())
            .ok_or_else(|| BthError::Invalid(format!("unsupported symbol flow `{s}`")))
    }
}

/// Symbol of P ↦ z^a ∂_z P, termwise: z^e ↦ e z^{e+a−1}.
fn z_pow_dz<C: Coeff>(p: &DiffOp<C>, a: i64) -> Result<DiffOp<C>> {
    let d = p.map_coeffs(|e, c| c.scale_ratio(e, 1));
    d.mul(&DiffOp::shift_op(p.ctx(), a - 1))
}

/// Symbol of P ↦ f z^a P.
fn times_z_pow<C: Coeff>(p: &DiffOp<C>, f: &C, a: i64) -> Result<DiffOp<C>> {
    Ok(p.mul(&DiffOp::shift_op(p.ctx(), a))?.mul_coeff_left(f))
}

/// Compares the operator-level additional flow of P_L or P_R with the
/// printed A*·P, coefficientwise in z; relative to max(1, ‖ΔP‖).
pub fn symbol_flow_check<T: Scalar>(state: &AddState<T>, which: SymbolFlow) -> Result<f64> {
    let (big_n, big_m) = (state.n(), state.m());
    let (nn, mm) = (big_n as i64, big_m as i64);
    let ctx = state.pair.pl.ctx().clone();
    let pair = &state.pair;
    let left = which.is_left();
    let p = if left { &pair.pl } else { &pair.pr };
    // ∂_{γ,n} P from the Sato equations of the pair
    let sato = |flow: FlowIndex| -> Result<Op<T>> {
        let b = b_from_pair(pair, flow, big_n, big_m)?;
        let (dpl, dpr) = sato_field(pair, &b)?;
        Ok(if left { dpl } else { dpr })
    };
    // Σ c_{γ,n} t_{γ,n} ∂_{γ,n−shift} P over the active times with n ≥ shift
    let time_sum = |shift: u32| -> Result<Op<T>> {
        let mut acc = DiffOp::zero(&ctx);
        for (idx, t) in state.tcfg.iter() {
            if idx.n < shift {
                continue;
            }
            let n1 = idx.n as i64 + 1;
            let c = if idx.is_upper() { (nn * n1 - idx.gamma + 1) as f64 / nn as f64 } else { (mm * n1 + idx.gamma) as f64 / mm as f64 };
            let term = sato(FlowIndex::new(idx.gamma, idx.n - shift))?.scale(&T::from_f64(c * t));
            acc = acc.add(&term)?;
        }
        Ok(acc)
    };
    let xn = x_over::<Poly<T>>(&ctx, big_n)?;
    let xm = x_over::<Poly<T>>(&ctx, big_m)?;
    let printed = match which {
        SymbolFlow::L01 => sato(FlowIndex::new(0, 0))?,
        SymbolFlow::R01 => sato(FlowIndex::new(1, 0))?,
        SymbolFlow::L10 => {
            let mut a = z_pow_dz(p, 1 - nn)?.scale_ratio(-1, nn);
            a = a.sub(&times_z_pow(p, &xn, -nn)?)?;
            for alpha in 2..=nn {
                let t = state.tcfg.get(FlowIndex::new(alpha, 0));
                if t != 0.0 {
                    let c = (nn - alpha + 1) as f64 / nn as f64;
                    a = a.sub(&p.mul(&DiffOp::shift_op(&ctx, 1 - alpha))?.scale(&T::from_f64(c * t)))?;
                }
            }
            a.add(&time_sum(1)?)?
        }
        SymbolFlow::L11 => z_pow_dz(p, 1)?.scale_ratio(-1, nn).add(&time_sum(0)?)?,
        SymbolFlow::R10 => {
            let mut a = z_pow_dz(p, mm + 1)?.scale_ratio(1, mm);
            a = a.add(&times_z_pow(p, &xm, mm)?)?;
            a = a.add(&time_sum(1)?)?;
            let t10 = state.tcfg.get(FlowIndex::new(1, 0));
            if t10 != 0.0 {
                a = a.add(&p.scale(&T::from_f64(t10)))?;
            }
            for beta in (1 - mm)..=0 {
                let t = state.tcfg.get(FlowIndex::new(beta, 0));
                if t != 0.0 {
                    let c = (mm + beta) as f64 / mm as f64;
                    a = a.add(&p.mul(&DiffOp::shift_op(&ctx, -beta))?.scale(&T::from_f64(c * t)))?;
                }
            }
            a
        }
        SymbolFlow::R11 => {
            let xs = xm.add(&xn);
            z_pow_dz(p, 1)?.scale_ratio(1, mm).add(&p.mul_coeff_left(&xs))?.add(&time_sum(0)?)?
        }
    };
    let field = add_field(state, which.index())?;
    let engine = if left { field.dpl } else { field.dpr };
    let band = engine
        .common_band(&printed)
        .ok_or_else(|| BthError::BandExhausted(format!("symbol flow {which}: no common reliable band")))?;
    Ok(engine.dist_on(&printed, band)? / engine.norm_on(band).max(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeff::LatticeGrid;
    use crate::random::{random_lax, FieldSpec};

    fn state(n: usize, m: usize, depth: usize, tcfg: TimeConfig) -> AddState<f64> {
        let g = LatticeGrid::periodic(31, 1, 1).unwrap();
        let l = random_lax(&g, n, m, FieldSpec { modes: 2, amplitude: 0.2 }, 11).unwrap();
        AddState::new(&l, &tcfg, depth).unwrap()
    }

    #[test]
    fn index_algebra() {
        let a = AddFlowIndex::new(2, 1);
        let b = AddFlowIndex::new(1, 2);
        assert_eq!(a.bracket(&b), (3, Some(AddFlowIndex::new(2, 2))));
        assert_eq!(AddFlowIndex::new(1, 0).bracket(&AddFlowIndex::new(1, 1)), (1, Some(AddFlowIndex::new(1, 0))));
        assert_eq!(AddFlowIndex::block(-1, 0).unwrap(), AddFlowIndex::new(0, 1));
        assert_eq!("1,2".parse::<AddFlowIndex>().unwrap(), b);
        assert!(AddFlowIndex::new(0, 0).validate().is_err());
        assert_eq!("R1,0".parse::<SymbolFlow>().unwrap(), SymbolFlow::R10);
    }

    #[test]
    fn reduction_is_preserved() {
        let s = state(1, 1, 12, TimeConfig::new());
        for idx in [AddFlowIndex::new(0, 1), AddFlowIndex::new(1, 0), AddFlowIndex::new(1, 1), AddFlowIndex::new(1, 2)] {
            let f = add_field(&s, idx).unwrap();
            assert!(f.reduction < 1e-8 && f.leak < 1e-8, "{idx}: {} {}", f.reduction, f.leak);
        }
    }

    #[test]
    fn quadratic_flows_exhaust_the_band() {
        let s = state(1, 1, 10, TimeConfig::new());
        assert!(matches!(add_field(&s, AddFlowIndex::new(2, 1)), Err(BthError::BandExhausted(_))));
    }

    #[test]
    fn first_flow_is_a_hierarchy_flow() {
        let s = state(2, 1, 12, TimeConfig::new());
        let f = add_field(&s, AddFlowIndex::new(0, 1)).unwrap();
        let b = b_from_pair(&s.pair, FlowIndex::new(0, 0), 2, 1).unwrap();
        let (dpl, _) = sato_field(&s.pair, &b).unwrap();
        assert!(f.dpl.dist(&dpl).unwrap() < 1e-9);
    }

    #[test]
    fn leibniz_self_consistency() {
        let s = state(1, 1, 12, TimeConfig::new());
        let a = AddFlowIndex::new(1, 0);
        let dk = directional_derivative(&s, a, Target::K(AddFlowIndex::new(1, 1))).unwrap();
        let dml = directional_derivative(&s, a, Target::Ml).unwrap();
        let dmr = directional_derivative(&s, a, Target::Mr).unwrap();
        let dl = directional_derivative(&s, a, Target::L).unwrap();
        let d = s.os.ml.sub(&s.os.mr).unwrap();
        let manual = dml.sub(&dmr).unwrap().mul(s.l_op()).unwrap().add(&d.mul(&dl).unwrap()).unwrap();
        assert!(dk.dist(&manual).unwrap() <= 1e-10 * dk.norm().max(1.0));
    }

    #[test]
    fn block_relation_on_generators() {
        let s = state(1, 1, 14, TimeConfig::new());
        let gens = [AddFlowIndex::new(0, 1), AddFlowIndex::new(1, 0), AddFlowIndex::new(1, 1), AddFlowIndex::new(1, 2)];
        for a in gens {
            for b in gens {
                let r = block_bracket_residual(&s, a, b).unwrap();
                assert!(r.max() < 1e-7, "{a} {b}: {r:?}");
            }
        }
        assert!(matches!(block_bracket_residual(&s, AddFlowIndex::new(2, 1), AddFlowIndex::new(1, 2)), Err(BthError::BandExhausted(_))));
    }

    #[test]
    fn antisymmetry_and_bilinearity() {
        let s = state(1, 1, 12, TimeConfig::new());
        let (a, b, c) = (AddFlowIndex::new(1, 0), AddFlowIndex::new(1, 1), AddFlowIndex::new(0, 1));
        assert!(antisymmetry_residual(&s, a, b).unwrap() < 1e-9);
        assert!(bilinearity_residual(&s, a, c, 0.7, b).unwrap() < 1e-9);
    }

    #[test]
    fn commutes_with_hierarchy() {
        let s = state(1, 1, 14, TimeConfig::new());
        for idx in [AddFlowIndex::new(0, 1), AddFlowIndex::new(1, 1)] {
            for flow in [FlowIndex::new(1, 0), FlowIndex::new(0, 0)] {
                let r = hierarchy_commutativity_residual(&s, idx, flow).unwrap();
                assert!(r.max() < 1e-7, "{idx} {flow}: {r:?}");
            }
        }
    }

    #[test]
    fn finite_difference_bracket_is_first_order() {
        let s = state(1, 1, 10, TimeConfig::new());
        let r = block_bracket_richardson(&s, AddFlowIndex::new(1, 0), AddFlowIndex::new(1, 1), 1e-3).unwrap();
        assert!((1.6..=2.6).contains(&r.ratio), "{r:?}");
        assert!(r.coarse.vs_chain < 20.0 * r.coarse.h);
    }

    #[test]
    fn symbol_flows_match_transcription() {
        let tc = TimeConfig::new().with(FlowIndex::new(1, 0), 0.2).unwrap().with(FlowIndex::new(0, 1), -0.1).unwrap();
        let s = state(1, 1, 12, tc);
        for w in SymbolFlow::ALL {
            let r = symbol_flow_check(&s, w).unwrap();
            assert!(r < 1e-7, "{w}: {r}");
        }
    }
}
