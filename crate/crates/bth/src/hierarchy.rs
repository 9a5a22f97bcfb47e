//! Flow generators B_{γ,n}, A_{γ,n}, Lax and Sato right-hand sides, RK4
//! integration, and zero-curvature residuals.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::coeff::{Coeff, Invertible, LatticeFunction, ShiftSum};
use crate::diffop::{Band, DiffOp, Sign};
use crate::dressing::{lift_op, root_lower, root_upper, DressingPair, FromPeriodic, LaxOperator};
use crate::error::{BthError, Result};
use crate::scalar::Scalar;

type Field<T> = LatticeFunction<T>;

/// Leakage of [A, L] outside [−M, N−1] beyond this (relative) is an error.
const LEAK_TOL: f64 = 1e-8;
/// Fields above this magnitude count as a diverged trajectory.
const BLOWUP: f64 = 1e12;

/// Hierarchy flow label (γ, n), −M+1 ≤ γ ≤ N.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FlowIndex {
    pub gamma: i64,
    pub n: u32,
}

impl FlowIndex {
    pub fn new(gamma: i64, n: u32) -> Self {
        Self { gamma, n }
    }

    pub fn validate(&self, big_n: usize, big_m: usize) -> Result<()> {
        if self.gamma > big_n as i64 || self.gamma < 1 - big_m as i64 {
            return Err(BthError::OutOfRange(format!(
                "flow {self}: γ must lie in [{}, {}]",
                1 - big_m as i64,
                big_n
            )));
        }
        Ok(())
    }

    /// True for γ ≥ 1 (generated by the upper root).
    pub fn is_upper(&self) -> bool {
        self.gamma >= 1
    }

    /// Power of L^{1/N} (γ ≥ 1) or L^{1/M} (γ ≤ 0) giving B_{γ,n}.
    pub fn root_power(&self, big_n: usize, big_m: usize) -> u32 {
        let n = self.n as i64 + 1;
        let k = if self.is_upper() { big_n as i64 * n - self.gamma + 1 } else { big_m as i64 * n + self.gamma };
        k as u32
    }

    /// All flows with n ≤ `n_max`.
    pub fn all(big_n: usize, big_m: usize, n_max: u32) -> Vec<Self> {
        let mut out = Vec::new();
        for n in 0..=n_max {
            for gamma in (1 - big_m as i64..=big_n as i64).rev() {
                out.push(Self::new(gamma, n));
            }
        }
        out
    }
}

impl fmt::Display for FlowIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.gamma, self.n)
    }
}

impl FromStr for FlowIndex {
    type Err = BthError;
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().trim_start_matches('(').trim_end_matches(')');
        let (g, n) = t.split_once(',').ok_or_else(|| BthError::Invalid(format!("flow `{s}` is not γ,n")))?;
        let gamma = g.trim().parse().map_err(|_| BthError::Invalid(format!("bad γ in `{s}`")))?;
        let n = n.trim().parse().map_err(|_| BthError::Invalid(format!("bad n in `{s}`")))?;
        Ok(Self { gamma, n })
    }
}

/// Finitely supported assignment of the times t_{γ,n}.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TimeConfig {
    times: BTreeMap<FlowIndex, f64>,
}

impl TimeConfig {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, idx: FlowIndex, t: f64) -> Result<()> {
        if !t.is_finite() {
            return Err(BthError::Invalid(format!("time {idx} is not finite")));
        }
        if t == 0.0 {
            self.times.remove(&idx);
        } else {
            self.times.insert(idx, t);
        }
        Ok(())
    }

    pub fn with(mut self, idx: FlowIndex, t: f64) -> Result<Self> {
        self.set(idx, t)?;
        Ok(self)
    }

    pub fn get(&self, idx: FlowIndex) -> f64 {
        self.times.get(&idx).copied().unwrap_or(0.0)
    }

    /// t_{idx} ↦ t_{idx} + dt.
    pub fn advanced(&self, idx: FlowIndex, dt: f64) -> Result<Self> {
        let mut out = self.clone();
        out.set(idx, self.get(idx) + dt)?;
        Ok(out)
    }

    pub fn iter(&self) -> impl Iterator<Item = (FlowIndex, f64)> + '_ {
        self.times.iter().map(|(&k, &v)| (k, v))
    }

    pub fn support(&self) -> Vec<FlowIndex> {
        self.times.keys().copied().collect()
    }

    pub fn validate(&self, big_n: usize, big_m: usize) -> Result<()> {
        self.times.keys().try_for_each(|k| k.validate(big_n, big_m))
    }
}

/// The two fractional roots of L, computed once and reused for several flows.
#[derive(Debug, Clone)]
pub struct Roots<T: Scalar> {
    pub upper: DiffOp<Field<T>>,
    pub lower: DiffOp<Field<T>>,
    n: usize,
    m: usize,
}

impl<T: Scalar> Roots<T> {
    pub fn new(l: &LaxOperator<Field<T>>, depth: usize) -> Result<Self> {
        Ok(Self { upper: root_upper(l, depth)?, lower: root_lower(l, depth)?, n: l.n(), m: l.m() })
    }

    /// Only the root the flow needs; the other is left as the zero operator.
    pub fn for_flow(l: &LaxOperator<Field<T>>, flow: FlowIndex, depth: usize) -> Result<Self> {
        let zero = DiffOp::zero(l.ctx());
        let (upper, lower) = if flow.is_upper() {
            (root_upper(l, depth)?, zero)
        } else {
            (zero, root_lower(l, depth)?)
        };
        Ok(Self { upper, lower, n: l.n(), m: l.m() })
    }

    pub fn b(&self, flow: FlowIndex) -> Result<DiffOp<Field<T>>> {
        flow.validate(self.n, self.m)?;
        let k = flow.root_power(self.n, self.m);
        if flow.is_upper() { self.upper.power(k) } else { self.lower.power(k) }
    }

    pub fn a(&self, flow: FlowIndex) -> Result<DiffOp<Field<T>>> {
        Ok(project_a(&self.b(flow)?, flow))
    }
}

/// A = B₊ (γ ≥ 1) or −B₋ (γ ≤ 0).
pub fn project_a<C: Coeff>(b: &DiffOp<C>, flow: FlowIndex) -> DiffOp<C> {
    if flow.is_upper() { b.project(Sign::Plus) } else { b.project(Sign::Minus).neg() }
}

/// Smallest root depth for which A_{γ,n} is exact.
pub fn flow_depth(flow: FlowIndex, big_n: usize, big_m: usize) -> usize {
    flow.root_power(big_n, big_m) as usize + 1
}

/// B_{γ,n}: a power of L^{1/N} (γ ≥ 1) or of L^{1/M} (γ ≤ 0).
pub fn build_b<T: Scalar>(l: &LaxOperator<Field<T>>, flow: FlowIndex, depth: usize) -> Result<DiffOp<Field<T>>> {
    flow.validate(l.n(), l.m())?;
    Roots::for_flow(l, flow, depth)?.b(flow)
}

/// A_{γ,n} = (B_{γ,n})₊ or −(B_{γ,n})₋.
pub fn build_a<T: Scalar>(l: &LaxOperator<Field<T>>, flow: FlowIndex, depth: usize) -> Result<DiffOp<Field<T>>> {
    Ok(project_a(&build_b(l, flow, depth)?, flow))
}

/// Lax right-hand side as field updates u̇_{−M}, …, u̇_{N−1}.
#[derive(Debug, Clone)]
pub struct LaxRhs<T: Scalar> {
    pub fields: Vec<Field<T>>,
    /// Largest coefficient of [A, L] at Λ^N or outside [−M, N].
    pub leak: f64,
}

/// [A, L] read back as field updates, with the monicity/band leak measured.
pub fn commutator_rhs<T: Scalar>(l: &LaxOperator<Field<T>>, a: &DiffOp<Field<T>>) -> Result<LaxRhs<T>> {
    let c = a.commutator(l.op())?;
    let (n, m) = (l.n() as i64, l.m() as i64);
    c.require(Band::new(-m, n), "[A, L]")?;
    let mut leak: f64 = 0.0;
    for (k, v) in c.iter() {
        if k < -m || k >= n {
            leak = leak.max(v.norm());
        }
    }
    let scale = a.norm().max(1.0) * l.op().norm().max(1.0);
    if leak > LEAK_TOL * scale {
        return Err(BthError::Residual { what: "band of [A, L]".into(), achieved: leak, tolerance: LEAK_TOL * scale });
    }
    let fields = (-m..n).map(|k| c.coeff(k)).collect();
    Ok(LaxRhs { fields, leak })
}

/// ∂_{t_{γ,n}} L = [A_{γ,n}, L].
pub fn lax_rhs<T: Scalar>(l: &LaxOperator<Field<T>>, flow: FlowIndex, depth: usize) -> Result<LaxRhs<T>> {
    commutator_rhs(l, &build_a(l, flow, depth)?)
}

/// (1,1) Toda: u̇₀ = u₋₁(x+ε) − u₋₁, u̇₋₁ = u₋₁(u₀ − u₀(x−ε)). Returns [u̇₋₁, u̇₀].
pub fn toda_rhs<T: Scalar>(u0: &Field<T>, um1: &Field<T>) -> Vec<Field<T>> {
    let du0 = um1.shifted(1).sub(um1);
    let dum1 = um1.mul(&u0.sub(&u0.shifted(-1)));
    vec![dum1, du0]
}

/// Explicit (N,M) = (1,2) flows (1,0) and (−1,0). Returns [u̇₋₂, u̇₋₁, u̇₀].
pub fn rhs_oracle_n1m2<T: Scalar>(
    u0: &Field<T>,
    um1: &Field<T>,
    um2: &Field<T>,
    flow: FlowIndex,
) -> Result<Vec<Field<T>>> {
    match (flow.gamma, flow.n) {
        (1, 0) => {
            let du0 = um1.shifted(1).sub(um1);
            let dum1 = um2.shifted(1).sub(um2).add(&um1.mul(&u0.sub(&u0.shifted(-1))));
            let dum2 = um2.mul(&u0.sub(&u0.shifted(-2)));
            Ok(vec![dum2, dum1, du0])
        }
        (-1, 0) => {
            // e = exp((1 + Λ^{-1})^{-1} log u₋₂)
            let size = u0.grid().size();
            let e = ShiftSum::orbit_sum(2, -1, size).solve(&um2.log()?)?.exp()?;
            let du0 = e.shifted(1).sub(&e);
            let dum1 = e.mul(&u0.sub(&u0.shifted(-1)));
            let dum2 = um1.mul(&e.shifted(-1)).sub(&e.mul(&um1.shifted(-1)));
            Ok(vec![dum2, dum1, du0])
        }
        _ => Err(BthError::OutOfRange(format!("no explicit (1,2) system for flow {flow}"))),
    }
}

/// Explicit (N,M) = (2,1) flows (2,0) and (1,0). Returns [u̇₋₁, u̇₀, u̇₁].
///
/// With a = (1+Λ)^{-1}u₁ the (2,0) system reads u̇₁ = u₀(x+ε) − u₀ + u₁(1−Λ)a,
/// u̇₀ = u₋₁(x+ε) − u₋₁, u̇₋₁ = u₋₁(1−Λ^{-1})a.
pub fn rhs_oracle_n2m1<T: Scalar>(
    u1: &Field<T>,
    u0: &Field<T>,
    um1: &Field<T>,
    flow: FlowIndex,
) -> Result<Vec<Field<T>>> {
    match (flow.gamma, flow.n) {
        (2, 0) => {
            let a = ShiftSum::orbit_sum(2, 1, u1.grid().size()).solve(u1)?;
            let du1 = u0.shifted(1).sub(u0).add(&u1.mul(&a.sub(&a.shifted(1))));
            let du0 = um1.shifted(1).sub(um1);
            let dum1 = um1.mul(&a.sub(&a.shifted(-1)));
            Ok(vec![dum1, du0, du1])
        }
        (1, 0) => {
            let du1 = um1.shifted(2).sub(um1);
            let du0 = u1.mul(&um1.shifted(1)).sub(&um1.mul(&u1.shifted(-1)));
            let dum1 = um1.mul(&u0.sub(&u0.shifted(-1)));
            Ok(vec![dum1, du0, du1])
        }
        _ => Err(BthError::OutOfRange(format!("no explicit (2,1) system for flow {flow}"))),
    }
}

/// B_{γ,n} from the dressing pair: P_L Λ^k P_L^{-1} (γ ≥ 1) or P_R Λ^{−k} P_R^{-1}.
pub fn b_from_pair<C: Coeff>(pair: &DressingPair<C>, flow: FlowIndex, big_n: usize, big_m: usize) -> Result<DiffOp<C>> {
    flow.validate(big_n, big_m)?;
    let k = flow.root_power(big_n, big_m) as i64;
    if flow.is_upper() { pair.left_conj(k) } else { pair.right_conj(-k) }
}

/// Sato right-hand side with its consistency measurement.
#[derive(Debug, Clone)]
pub struct SatoRhs<C: Coeff> {
    pub dpl: DiffOp<C>,
    pub dpr: DiffOp<C>,
    /// ‖L̇ induced by ΔP_L − [A, L]‖ on [−M, N].
    pub consistency: f64,
}

/// ΔP_L = −B₋P_L, ΔP_R = B₊P_R for a given generator B.
pub fn sato_field<C: Coeff>(pair: &DressingPair<C>, b: &DiffOp<C>) -> Result<(DiffOp<C>, DiffOp<C>)> {
    let dpl = b.project(Sign::Minus).mul(&pair.pl)?.neg();
    let dpr = b.project(Sign::Plus).mul(&pair.pr)?;
    Ok((dpl, dpr))
}

/// L̇ = Ṗ P^{-1} L − L Ṗ P^{-1} for a dressing P with P Λ^k P^{-1} = L.
pub fn induced_lax<C: Coeff>(dp: &DiffOp<C>, p_inv: &DiffOp<C>, l: &DiffOp<C>) -> Result<DiffOp<C>> {
    let g = dp.mul(p_inv)?;
    g.commutator(l).map(|c| c.neg())
}

/// Sato equations for the pair, with B from the roots of L lifted to the pair's ring.
pub fn sato_rhs<T: Scalar, C: FromPeriodic<T>>(
    pair: &DressingPair<C>,
    l: &LaxOperator<Field<T>>,
    flow: FlowIndex,
    depth: usize,
) -> Result<SatoRhs<C>> {
    let ctx = pair.pl.ctx().clone();
    let b = lift_op::<T, C>(&build_b(l, flow, depth)?, &ctx)?;
    let (dpl, dpr) = sato_field(pair, &b)?;
    let lifted = lift_op::<T, C>(l.op(), &ctx)?;
    let dl = induced_lax(&dpl, &pair.pl_inv, &lifted)?.neg();
    let band = l.band();
    dl.require(band, "Sato-induced L̇")?;
    let a = lift_op::<T, C>(&build_a(l, flow, depth)?, &ctx)?;
    let expect = a.commutator(&lifted)?;
    let consistency = dl.dist_on(&expect, band)?;
    Ok(SatoRhs { dpl, dpr, consistency })
}

/// A state that RK4 can advance.
pub trait FlowState: Clone {
    /// self + h·d
    fn axpy(&self, h: f64, d: &Self) -> Result<Self>;
    /// Largest magnitude, NaN if any entry is not finite.
    fn magnitude(&self) -> f64;
}

/// The fields u_{−M}, …, u_{N−1}.
#[derive(Debug, Clone)]
pub struct Fields<T: Scalar>(pub Vec<Field<T>>);

impl<T: Scalar> FlowState for Fields<T> {
    fn axpy(&self, h: f64, d: &Self) -> Result<Self> {
        let s = T::from_f64(h);
        Ok(Fields(self.0.iter().zip(&d.0).map(|(a, b)| a.add(&b.scale(&s))).collect()))
    }
    fn magnitude(&self) -> f64 {
        let mut m: f64 = 0.0;
        for f in &self.0 {
            for v in f.values() {
                if !v.finite() {
                    return f64::NAN;
                }
                m = m.max(v.modulus());
            }
        }
        m
    }
}

/// The dressing operators (P_L, P_R), inverses rebuilt on demand.
#[derive(Debug, Clone)]
pub struct PairState<C: Coeff> {
    pub pl: DiffOp<C>,
    pub pr: DiffOp<C>,
}

impl<C: Invertible> PairState<C> {
    pub fn from_pair(pair: &DressingPair<C>) -> Self {
        Self { pl: pair.pl.clone(), pr: pair.pr.clone() }
    }
    pub fn to_pair(&self, depth: usize) -> Result<DressingPair<C>> {
        DressingPair::from_ops(self.pl.clone(), self.pr.clone(), depth)
    }
}

impl<C: Coeff> FlowState for PairState<C>
where
    C::Scalar: Scalar,
{
    fn axpy(&self, h: f64, d: &Self) -> Result<Self> {
        let s = C::Scalar::from_f64(h);
        Ok(Self { pl: self.pl.add(&d.pl.scale(&s))?, pr: self.pr.add(&d.pr.scale(&s))? })
    }
    fn magnitude(&self) -> f64 {
        let m = self.pl.norm().max(self.pr.norm());
        if m.is_finite() { m } else { f64::NAN }
    }
}

/// Integrates the Sato equations of the pair alone (B taken from the pair's
/// own conjugations) over `duration`.
pub fn evolve_pair<C: Invertible>(
    pair: &DressingPair<C>,
    flow: FlowIndex,
    big_n: usize,
    big_m: usize,
    duration: f64,
    dt: f64,
) -> Result<DressingPair<C>>
where
    C::Scalar: Scalar,
{
    let depth = pair.depth;
    let rhs = |s: &PairState<C>| -> Result<PairState<C>> {
        let p = s.to_pair(depth)?;
        let b = b_from_pair(&p, flow, big_n, big_m)?;
        let (pl, pr) = sato_field(&p, &b)?;
        Ok(PairState { pl, pr })
    };
    let end = if duration < 0.0 {
        let neg = |s: &PairState<C>| -> Result<PairState<C>> {
            let d = rhs(s)?;
            let m1 = C::Scalar::from_f64(-1.0);
            Ok(PairState { pl: d.pl.scale(&m1), pr: d.pr.scale(&m1) })
        };
        integrate_state(&PairState::from_pair(pair), -duration, dt, 0, neg, |_, _, _| {})?
    } else {
        integrate_state(&PairState::from_pair(pair), duration, dt, 0, rhs, |_, _, _| {})?
    };
    end.to_pair(depth)
}

/// One classical Runge–Kutta step.
pub fn rk4_step<S: FlowState>(s: &S, h: f64, rhs: &impl Fn(&S) -> Result<S>) -> Result<S> {
    let k1 = rhs(s)?;
    let k2 = rhs(&s.axpy(h / 2.0, &k1)?)?;
    let k3 = rhs(&s.axpy(h / 2.0, &k2)?)?;
    let k4 = rhs(&s.axpy(h, &k3)?)?;
    s.axpy(h / 6.0, &k1)?.axpy(h / 3.0, &k2)?.axpy(h / 3.0, &k3)?.axpy(h / 6.0, &k4)
}

/// Integrates `rhs` over `duration` with steps of at most `dt`, calling
/// `sample` after every step; `step0` offsets the step counter in errors.
pub fn integrate_state<S: FlowState>(
    s0: &S,
    duration: f64,
    dt: f64,
    step0: usize,
    rhs: impl Fn(&S) -> Result<S>,
    mut sample: impl FnMut(usize, f64, &S),
) -> Result<S> {
    if !(dt > 0.0) || !duration.is_finite() || duration < 0.0 {
        return Err(BthError::Invalid(format!("bad time step {dt} or duration {duration}")));
    }
    let steps = (duration / dt).ceil().max(0.0) as usize;
    let h = if steps > 0 { duration / steps as f64 } else { 0.0 };
    let mut s = s0.clone();
    for i in 0..steps {
        let step = step0 + i + 1;
        s = match rk4_step(&s, h, &rhs) {
            Ok(v) => v,
            Err(BthError::NonFinite { .. }) | Err(BthError::NonPositiveLog { .. }) => {
                return Err(BthError::Diverged { step })
            }
            Err(e) => return Err(e),
        };
        let mag = s.magnitude();
        if !(mag <= BLOWUP) {
            return Err(BthError::Diverged { step });
        }
        sample(step, (i + 1) as f64 * h, &s);
    }
    Ok(s)
}

/// Sampled trajectory of the fields.
#[derive(Debug, Clone)]
pub struct Trajectory<T: Scalar> {
    pub times: Vec<f64>,
    pub states: Vec<Vec<Field<T>>>,
}

/// Integrates ∂L = [A, L] along each (flow, duration) in turn with RK4,
/// recording every `every`-th step (and the endpoints).
pub fn integrate<T: Scalar>(
    l: &LaxOperator<Field<T>>,
    flows: &[(FlowIndex, f64)],
    dt: f64,
    depth: usize,
    every: usize,
) -> Result<Trajectory<T>> {
    let (n, m) = (l.n(), l.m());
    let ctx = l.ctx().clone();
    let mut traj = Trajectory { times: vec![0.0], states: vec![l.fields()] };
    let mut state = Fields(l.fields());
    let mut t0 = 0.0;
    let mut step0 = 0;
    for &(flow, duration) in flows {
        flow.validate(n, m)?;
        let rhs = |s: &Fields<T>| -> Result<Fields<T>> {
            let lax = LaxOperator::from_fields(&ctx, n, m, s.0.clone())?;
            Ok(Fields(lax_rhs(&lax, flow, depth)?.fields))
        };
        let steps = (duration / dt).ceil() as usize;
        state = integrate_state(&state, duration, dt, step0, rhs, |step, t, s| {
            if (step - step0) % every.max(1) == 0 || step - step0 == steps {
                traj.times.push(t0 + t);
                traj.states.push(s.0.clone());
            }
        })?;
        t0 += duration;
        step0 += steps;
    }
    Ok(traj)
}

/// Σ_x of the Λ⁰ coefficient of L^k.
pub fn trace_functional<T: Scalar>(l: &LaxOperator<Field<T>>, k: u32) -> Result<T> {
    let c = l.op().power(k)?.coeff(0);
    Ok(c.values().iter().copied().sum())
}

/// Derivative of an operator-valued map of L along v by central differences.
pub fn directional_fd<T: Scalar>(
    l: &LaxOperator<Field<T>>,
    v: &[Field<T>],
    h: f64,
    f: impl Fn(&LaxOperator<Field<T>>) -> Result<DiffOp<Field<T>>>,
) -> Result<DiffOp<Field<T>>> {
    let base = Fields(l.fields());
    let dir = Fields(v.to_vec());
    let plus = LaxOperator::from_fields(l.ctx(), l.n(), l.m(), base.axpy(h, &dir)?.0)?;
    let minus = LaxOperator::from_fields(l.ctx(), l.n(), l.m(), base.axpy(-h, &dir)?.0)?;
    let s = T::from_f64(1.0 / (2.0 * h));
    Ok(f(&plus)?.sub(&f(&minus)?)?.scale(&s))
}

/// Step used for the zero-curvature finite differences.
pub const ZS_STEP: f64 = 1e-4;

/// Zero-curvature residuals of a pair of flows.
#[derive(Debug, Clone, Copy)]
pub struct ZsReport {
    /// ∂_β A_α − ∂_α A_β + [A_α, A_β]
    pub full: f64,
    /// ∂_β(B_α)₋ − ∂_α(B_β)₋ − [(B_α)₋, (B_β)₋]
    pub minus: f64,
    /// −∂_β(B_α)₊ + ∂_α(B_β)₊ − [(B_α)₊, (B_β)₊]
    pub plus: f64,
}

/// Zero-curvature residuals, derivatives by central differences along the flows.
pub fn zs_residual<T: Scalar>(
    l: &LaxOperator<Field<T>>,
    fa: FlowIndex,
    fb: FlowIndex,
    depth: usize,
) -> Result<ZsReport> {
    let va = lax_rhs(l, fa, depth)?.fields;
    let vb = lax_rhs(l, fb, depth)?.fields;
    let roots = Roots::new(l, depth)?;
    let (ba, bb) = (roots.b(fa)?, roots.b(fb)?);
    let h = ZS_STEP;
    let d_b = |fl: FlowIndex, v: &[Field<T>], sign: Option<Sign>| {
        directional_fd(l, v, h, |lax| {
            let b = build_b(lax, fl, depth)?;
            Ok(match sign {
                None => project_a(&b, fl),
                Some(s) => b.project(s),
            })
        })
    };
    let (aa, ab) = (project_a(&ba, fa), project_a(&bb, fb));
    let full = d_b(fa, &vb, None)?.sub(&d_b(fb, &va, None)?)?.add(&aa.commutator(&ab)?)?;
    let (ma, mb) = (ba.project(Sign::Minus), bb.project(Sign::Minus));
    let minus = d_b(fa, &vb, Some(Sign::Minus))?
        .sub(&d_b(fb, &va, Some(Sign::Minus))?)?
        .sub(&ma.commutator(&mb)?)?;
    let (pa, pb) = (ba.project(Sign::Plus), bb.project(Sign::Plus));
    let plus = d_b(fb, &va, Some(Sign::Plus))?
        .sub(&d_b(fa, &vb, Some(Sign::Plus))?)?
        .sub(&pa.commutator(&pb)?)?;
    Ok(ZsReport { full: full.norm(), minus: minus.norm(), plus: plus.norm() })
}

/// ‖Φ_B(h)Φ_A(h)L − Φ_A(h)Φ_B(h)L‖ with one RK4 step per flow.
pub fn flow_commutator<T: Scalar>(
    l: &LaxOperator<Field<T>>,
    fa: FlowIndex,
    fb: FlowIndex,
    h: f64,
    depth: usize,
) -> Result<f64> {
    let (n, m, ctx) = (l.n(), l.m(), l.ctx().clone());
    let step = |s: &Fields<T>, fl: FlowIndex| {
        rk4_step(s, h, &|x: &Fields<T>| {
            let lax = LaxOperator::from_fields(&ctx, n, m, x.0.clone())?;
            Ok(Fields(lax_rhs(&lax, fl, depth)?.fields))
        })
    };
    let s = Fields(l.fields());
    let ab = step(&step(&s, fa)?, fb)?;
    let ba = step(&step(&s, fb)?, fa)?;
    Ok(ab.0.iter().zip(&ba.0).map(|(x, y)| x.dist(y)).fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeff::LatticeGrid;
    use crate::dressing::secular_pair;
    use std::sync::Arc;

    type F = LatticeFunction<f64>;

    fn wave(g: &Arc<LatticeGrid>, amp: f64, k: f64, phase: f64) -> F {
        let p = g.size() as f64;
        F::from_fn(g.clone(), |s| amp * (std::f64::consts::TAU * k * s as f64 / p + phase).sin()).unwrap()
    }

    fn lax(p: usize, n: usize, m: usize) -> LaxOperator<F> {
        let g = LatticeGrid::periodic(p, 1, 1).unwrap();
        let fields = (-(m as i64)..n as i64)
            .map(|j| {
                if j == -(m as i64) {
                    wave(&g, 0.2, 1.0, 0.4).exp().unwrap()
                } else {
                    wave(&g, 0.15, 1.0, 1.3 * j as f64).add(&wave(&g, 0.1, 2.0, 0.5 + j as f64))
                }
            })
            .collect();
        LaxOperator::from_fields(&g, n, m, fields).unwrap()
    }

    fn max_dist(a: &[F], b: &[F]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x.dist(y)).fold(0.0, f64::max)
    }

    #[test]
    fn flow_index_parsing_and_powers() {
        let f: FlowIndex = "-1,0".parse().unwrap();
        assert_eq!(f, FlowIndex::new(-1, 0));
        assert_eq!(FlowIndex::new(2, 0).root_power(2, 1), 1);
        assert_eq!(FlowIndex::new(1, 1).root_power(3, 2), 6);
        assert_eq!(FlowIndex::new(0, 1).root_power(3, 2), 4);
        assert!(FlowIndex::new(3, 0).validate(2, 1).is_err());
        assert!(FlowIndex::new(-1, 0).validate(2, 1).is_err());
    }

    #[test]
    fn toda_oracle_and_fixed_point() {
        let l = lax(31, 1, 1);
        let rhs = lax_rhs(&l, FlowIndex::new(1, 0), 6).unwrap();
        let oracle = toda_rhs(&l.field(0), &l.field(-1));
        assert!(max_dist(&rhs.fields, &oracle) < 1e-12);
        let g = l.ctx().clone();
        let c = LaxOperator::from_fields(&g, 1, 1, vec![F::constant(g.clone(), 1.0), F::zeros(g.clone())]).unwrap();
        let r = lax_rhs(&c, FlowIndex::new(1, 0), 6).unwrap();
        assert!(r.fields.iter().all(|f| f.sup_norm() == 0.0));
    }

    #[test]
    fn explicit_systems_match() {
        let l = lax(31, 1, 2);
        for f in [FlowIndex::new(1, 0), FlowIndex::new(-1, 0)] {
            let rhs = lax_rhs(&l, f, 8).unwrap();
            let o = rhs_oracle_n1m2(&l.field(0), &l.field(-1), &l.field(-2), f).unwrap();
            assert!(max_dist(&rhs.fields, &o) < 1e-9, "{f}");
        }
        let l = lax(31, 2, 1);
        for f in [FlowIndex::new(2, 0), FlowIndex::new(1, 0)] {
            let rhs = lax_rhs(&l, f, 8).unwrap();
            let o = rhs_oracle_n2m1(&l.field(1), &l.field(0), &l.field(-1), f).unwrap();
            assert!(max_dist(&rhs.fields, &o) < 1e-9, "{f}");
        }
    }

    #[test]
    fn gamma_one_and_zero_agree() {
        for (n, m) in [(1, 1), (2, 1), (1, 2), (2, 3)] {
            let l = lax(31, n, m);
            let a = lax_rhs(&l, FlowIndex::new(1, 0), 10).unwrap();
            let b = lax_rhs(&l, FlowIndex::new(0, 0), 10).unwrap();
            assert!(max_dist(&a.fields, &b.fields) < 1e-11, "{n},{m}");
            assert!(a.leak < 1e-11 && b.leak < 1e-11);
        }
    }

    #[test]
    fn sato_consistency() {
        let l = lax(31, 1, 1);
        let pair = secular_pair(&l, 12).unwrap();
        for f in [FlowIndex::new(1, 0), FlowIndex::new(0, 0), FlowIndex::new(1, 1)] {
            let s = sato_rhs(&pair, &l, f, 12).unwrap();
            assert!(s.consistency < 1e-9, "{f}: {}", s.consistency);
        }
        let b = b_from_pair(&pair, FlowIndex::new(1, 0), 1, 1).unwrap();
        let lifted = lift_op::<f64, _>(&build_b(&l, FlowIndex::new(1, 0), 12).unwrap(), pair.pl.ctx()).unwrap();
        assert!(b.dist(&lifted).unwrap() < 1e-10);
    }

    #[test]
    fn rk4_richardson() {
        let l = lax(31, 1, 1);
        let f = FlowIndex::new(1, 0);
        let end = |dt: f64| integrate(&l, &[(f, 1.0)], dt, 4, 1_000_000).unwrap().states.pop().unwrap();
        let (a, b, c) = (end(0.2), end(0.1), end(0.05));
        let ratio = max_dist(&a, &b) / max_dist(&b, &c);
        assert!((12.0..20.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn traces_are_conserved() {
        let l = lax(31, 2, 1);
        let traj = integrate(&l, &[(FlowIndex::new(2, 0), 0.5)], 0.01, 4, 1000).unwrap();
        let last = LaxOperator::from_fields(l.ctx(), 2, 1, traj.states.last().unwrap().clone()).unwrap();
        for k in 1..=3 {
            let d = (trace_functional(&l, k).unwrap() - trace_functional(&last, k).unwrap()).abs();
            assert!(d < 1e-8, "k={k} drift {d}");
        }
    }

    #[test]
    fn zero_curvature() {
        let l = lax(31, 2, 1);
        let r = zs_residual(&l, FlowIndex::new(2, 0), FlowIndex::new(1, 0), 10).unwrap();
        assert!(r.full < 1e-6 && r.minus < 1e-6 && r.plus < 1e-6, "{r:?}");
        let r = zs_residual(&l, FlowIndex::new(2, 0), FlowIndex::new(2, 0), 10).unwrap();
        assert_eq!(r.full, 0.0);
    }

    #[test]
    fn flows_commute_to_third_order() {
        let l = lax(31, 1, 1);
        let (fa, fb) = (FlowIndex::new(1, 0), FlowIndex::new(1, 1));
        let e1 = flow_commutator(&l, fa, fb, 0.02, 6).unwrap();
        let e2 = flow_commutator(&l, fa, fb, 0.01, 6).unwrap();
        let slope = (e1 / e2).log2();
        assert!(slope >= 2.7, "slope {slope}");
    }
}
