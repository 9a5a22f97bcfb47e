//! Algebraic and structural invariants under random inputs.

use std::sync::Arc;

use bth::coeff::{Coeff, LatticeGrid, PolySymbol, SymbolCtx, Var};
use bth::diffop::{DiffOp, Sign};
use bth::dressing::{root_lower, root_upper, secular_pair};
use bth::hierarchy::{flow_depth, lax_rhs, trace_functional, FlowIndex};
use bth::random::{random_lax, FieldSpec};
use bth::{Field, Lax, Op};
use num::BigRational;
use proptest::prelude::*;

const SITES: usize = 7;

fn grid() -> Arc<LatticeGrid> {
    LatticeGrid::periodic(SITES, 1, 1).unwrap()
}

fn field(v: &[f64]) -> Field {
    Field::new(grid(), v.to_vec()).unwrap()
}

/// A finite operator Σ_{k=−2}^{2} c_k Λ^k with random periodic coefficients.
fn finite_op() -> impl Strategy<Value = Op> {
    prop::collection::vec(prop::collection::vec(-1.0f64..1.0, SITES), 5).prop_map(|cs| {
        let g = grid();
        DiffOp::finite(&g, cs.iter().enumerate().map(|(i, c)| (i as i64 - 2, field(c))))
    })
}

fn close(a: &Op, b: &Op, tol: f64) -> bool {
    a.dist(b).unwrap() <= tol
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn product_is_associative_and_distributive(a in finite_op(), b in finite_op(), c in finite_op()) {
        let ab_c = a.mul(&b).unwrap().mul(&c).unwrap();
        let a_bc = a.mul(&b.mul(&c).unwrap()).unwrap();
        prop_assert!(close(&ab_c, &a_bc, 1e-12));
        let left = a.mul(&b.add(&c).unwrap()).unwrap();
        let right = a.mul(&b).unwrap().add(&a.mul(&c).unwrap()).unwrap();
        prop_assert!(close(&left, &right, 1e-12));
    }

    #[test]
    fn commutator_satisfies_jacobi(a in finite_op(), b in finite_op(), c in finite_op()) {
        let t1 = a.commutator(&b.commutator(&c).unwrap()).unwrap();
        let t2 = b.commutator(&c.commutator(&a).unwrap()).unwrap();
        let t3 = c.commutator(&a.commutator(&b).unwrap()).unwrap();
        let sum = t1.add(&t2).unwrap().add(&t3).unwrap();
        prop_assert!(sum.norm() <= 1e-12);
    }

    #[test]
    fn projections_split_the_operator(a in finite_op()) {
        let parts = a.project(Sign::Plus).add(&a.project(Sign::Minus)).unwrap();
        prop_assert!(close(&parts, &a, 0.0));
        prop_assert!(a.project(Sign::Minus).exponents().iter().all(|&k| k < 0));
    }

    #[test]
    fn action_is_a_representation(a in finite_op(), b in finite_op(), v in prop::collection::vec(-1.0f64..1.0, SITES)) {
        let f = field(&v);
        let lhs = a.apply(&b.apply(&f).unwrap()).unwrap();
        let rhs = a.mul(&b).unwrap().apply(&f).unwrap();
        prop_assert!(lhs.dist(&rhs) <= 1e-12);
    }

    #[test]
    fn shift_operator_shifts(k in -3i64..=3, v in prop::collection::vec(-1.0f64..1.0, SITES)) {
        let f = field(&v);
        let g = DiffOp::<Field>::shift_op(&grid(), k).apply(&f).unwrap();
        for s in 0..SITES {
            prop_assert_eq!(g.values()[s], v[(s as i64 + k).rem_euclid(SITES as i64) as usize]);
        }
    }
}

fn symbol() -> impl Strategy<Value = PolySymbol> {
    prop::collection::vec((-3i64..=3, 0u32..3, 0u32..2), 1..4).prop_map(|terms| {
        let ctx = SymbolCtx::new(1, 2);
        let x = PolySymbol::var(&ctx, Var::X);
        let t = PolySymbol::time(&ctx, 1, 0);
        let mut p = PolySymbol::zero(&ctx);
        for (c, ex, et) in terms {
            let mut m = PolySymbol::constant(&ctx, BigRational::from_integer(c.into()));
            for _ in 0..ex {
                m = m.mul(&x);
            }
            for _ in 0..et {
                m = m.mul(&t);
            }
            p = p.add(&m);
        }
        p
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn symbol_derivative_is_a_derivation(p in symbol(), q in symbol()) {
        for v in [Var::X, Var::T { gamma: 1, n: 0 }] {
            let lhs = p.mul(&q).dt(v);
            let rhs = p.dt(v).mul(&q).add(&p.mul(&q.dt(v)));
            prop_assert!(lhs.sub(&rhs).is_zero());
        }
    }

    #[test]
    fn symbol_shift_is_a_ring_homomorphism(p in symbol(), q in symbol(), k in -3i64..=3) {
        prop_assert!(p.mul(&q).shift(k).sub(&p.shift(k).mul(&q.shift(k))).is_zero());
        prop_assert!(p.add(&q).shift(k).sub(&p.shift(k).add(&q.shift(k))).is_zero());
        prop_assert!(p.shift(k).shift(-k).sub(&p).is_zero());
    }
}

fn lax(n: usize, m: usize, seed: u64) -> Lax {
    let g = LatticeGrid::periodic(31, 1, 1).unwrap();
    random_lax(&g, n, m, FieldSpec::default(), seed).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn roots_reproduce_the_lax_operator(seed in any::<u64>(), n in 1usize..=3, m in 1usize..=3) {
        let l = lax(n, m, seed);
        let band = l.band();
        let up = root_upper(&l, 10).unwrap().power(n as u32).unwrap();
        let lo = root_lower(&l, 10).unwrap().power(m as u32).unwrap();
        prop_assert!(up.dist_on(l.op(), band).unwrap() <= 1e-10);
        prop_assert!(lo.dist_on(l.op(), band).unwrap() <= 1e-10);
    }

    #[test]
    fn dressing_pairs_are_invertible(seed in any::<u64>(), n in 1usize..=2, m in 1usize..=2) {
        let pair = secular_pair(&lax(n, m, seed), 8).unwrap();
        prop_assert!(pair.inverse_residual().unwrap() <= 1e-11);
    }

    #[test]
    fn flows_conserve_traces(seed in any::<u64>(), gamma in 0i64..=2, k in 1u32..=3) {
        let (n, m) = (2, 1);
        let flow = FlowIndex::new(gamma, 1);
        let l = lax(n, m, seed);
        let rhs = lax_rhs(&l, flow, flow_depth(flow, n, m) + 2).unwrap();
        let h = 1e-4;
        let moved = |s: f64| {
            let fields = l.fields().iter().zip(&rhs.fields).map(|(u, du)| u.add(&du.scale(&(s * h)))).collect();
            trace_functional(&Lax::from_fields(l.ctx(), n, m, fields).unwrap(), k).unwrap()
        };
        let rate = (moved(1.0) - moved(-1.0)) / (2.0 * h);
        prop_assert!(rate.abs() <= 1e-6 * trace_functional(&l, k).unwrap().abs().max(1.0), "rate {rate}");
    }
}
