//! The verification suites, each a list of independent tasks producing check records.

use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, OnceLock};

use bth::blocksym::{
    antisymmetry_residual, block_bracket_residual, block_bracket_richardson, hierarchy_commutativity_residual,
    required_depth, symbol_flow_check, witt_residual, AddFlowIndex, AddState, SymbolFlow, GENERATORS,
};
use bth::dressing::{root_lower, root_upper, secular_pair, verify_frac};
use bth::hierarchy::{lax_rhs, rhs_oracle_n1m2, rhs_oracle_n2m1, toda_rhs, zs_residual, FlowIndex, TimeConfig};
use bth::oschulman::{
    build_m, build_wave, eigen_decay_ratio, m_flow_residual, numeric_times, os_report_for, verify_gamma_identities,
    wave_half_width, wave_residuals, Side,
};
use bth::{Field, Lax, Op};
use num_complex::Complex64;
use serde_json::{json, Value};

use crate::config::{block_margin, ConfigError, Plan};
use crate::report::{timed, Record};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Suite {
    GammaExact,
    Dressing,
    Roots,
    LaxOracles,
    ZakharovShabat,
    OrlovSchulman,
    Waves,
    BlockChain,
    BlockFd,
    SymbolFlows,
}

const SQUARE2: [(usize, usize); 4] = [(1, 1), (1, 2), (2, 1), (2, 2)];
const SQUARE3: [(usize, usize); 9] = [(1, 1), (1, 2), (1, 3), (2, 1), (2, 2), (2, 3), (3, 1), (3, 2), (3, 3)];
const SQUARE4: [(usize, usize); 16] = [
    (1, 1), (1, 2), (1, 3), (1, 4), (2, 1), (2, 2), (2, 3), (2, 4),
    (3, 1), (3, 2), (3, 3), (3, 4), (4, 1), (4, 2), (4, 3), (4, 4),
];
const SMALL: [(usize, usize); 3] = [(1, 1), (2, 1), (1, 2)];

impl Suite {
    pub const ALL: [Suite; 10] = [
        Suite::GammaExact,
        Suite::Dressing,
        Suite::Roots,
        Suite::LaxOracles,
        Suite::ZakharovShabat,
        Suite::OrlovSchulman,
        Suite::Waves,
        Suite::BlockChain,
        Suite::BlockFd,
        Suite::SymbolFlows,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Suite::GammaExact => "gamma-exact",
            Suite::Dressing => "dressing",
            Suite::Roots => "roots",
            Suite::LaxOracles => "lax-oracles",
            Suite::ZakharovShabat => "zakharov-shabat",
            Suite::OrlovSchulman => "orlov-schulman",
            Suite::Waves => "waves",
            Suite::BlockChain => "block-chain",
            Suite::BlockFd => "block-fd",
            Suite::SymbolFlows => "symbol-flows",
        }
    }

    /// The standard (N, M) sweep.
    pub fn sweep(&self) -> &'static [(usize, usize)] {
        match self {
            Suite::GammaExact => &SQUARE4,
            Suite::Dressing | Suite::OrlovSchulman => &SQUARE2,
            Suite::Roots | Suite::LaxOracles => &SQUARE3,
            Suite::ZakharovShabat | Suite::Waves | Suite::BlockChain | Suite::SymbolFlows => &SMALL,
            Suite::BlockFd => &SMALL[..1],
        }
    }

    /// Whether the suite inverts shift-sums of orders N and M on the lattice.
    pub fn uses_roots(&self) -> bool {
        *self != Suite::GammaExact
    }

    /// Smallest truncation depth the suite's expressions need on (n, m).
    pub fn margin(&self, n: usize, m: usize) -> usize {
        match self {
            Suite::GammaExact => 0,
            Suite::BlockChain => block_margin(n, m),
            Suite::BlockFd => FD_PAIRS.iter().map(|(a, b)| required_depth(*a, *b, n, m)).max().unwrap_or(0),
            Suite::SymbolFlows => SymbolFlow::ALL
                .iter()
                .map(|w| required_depth(w.index(), AddFlowIndex::new(0, 1), n, m))
                .max()
                .unwrap_or(0),
            _ => n + m + 4,
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, ConfigError> {
        Suite::ALL.into_iter().find(|x| x.name() == s.trim()).ok_or_else(|| {
            let names: Vec<&str> = Suite::ALL.iter().map(|x| x.name()).collect();
            ConfigError(format!("unknown suite `{s}`; known suites: {}", names.join(", ")))
        })
    }
}

/// Generator pairs of the flow-composition check.
const FD_PAIRS: [(AddFlowIndex, AddFlowIndex); 2] =
    [(AddFlowIndex::new(1, 0), AddFlowIndex::new(1, 1)), (AddFlowIndex::new(0, 1), AddFlowIndex::new(1, 1))];
/// Step of the flow-composition check; the Richardson partner uses h/2.
pub const FD_STEP: f64 = 1e-3;

/// A unit of work: independent of every other task.
pub struct Task {
    pub suite: Suite,
    run: Box<dyn Fn() -> Vec<Record> + Send + Sync>,
}

impl Task {
    fn new(suite: Suite, f: impl Fn() -> Vec<Record> + Send + Sync + 'static) -> Self {
        Self { suite, run: Box::new(f) }
    }

    pub fn run(&self) -> Vec<Record> {
        (self.run)()
    }
}

fn shape(n: usize, m: usize) -> Value {
    json!({ "N": n, "M": m })
}

fn with(mut base: Value, extra: Value) -> Value {
    if let (Some(b), Value::Object(e)) = (base.as_object_mut(), extra) {
        b.extend(e);
    }
    base
}

/// Record from a fallible residual.
fn record(check: &str, params: Value, tol: f64, f: impl FnOnce() -> bth::Result<f64>) -> Record {
    let (r, s) = timed(f);
    match r {
        Ok(v) => Record::new(check, params, v, tol, s),
        Err(e) => Record::failed(check, params, e, tol, s),
    }
}

fn max_dist(a: &[Field], b: &[Field]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dist(y)).fold(0.0, f64::max)
}

/// ‖R^k − L‖ on the reliable band of R^k, relative to ‖L‖.
fn power_residual(r: &Op, k: usize, l: &Lax) -> bth::Result<f64> {
    let p = r.power(k as u32)?;
    let band = p.reliable().ok_or_else(|| bth::BthError::BandExhausted("root power".into()))?;
    Ok(p.dist_on(l.op(), band)? / l.op().norm().max(1.0))
}

/// Builds every task of the selected suites, in suite order.
pub fn tasks(plan: &Arc<Plan>) -> Vec<Task> {
    let mut out = Vec::new();
    for &s in &plan.suites {
        match s {
            Suite::GammaExact => gamma_exact(plan, &mut out),
            Suite::Dressing => dressing(plan, &mut out),
            Suite::Roots => roots(plan, &mut out),
            Suite::LaxOracles => lax_oracles(plan, &mut out),
            Suite::ZakharovShabat => zakharov_shabat(plan, &mut out),
            Suite::OrlovSchulman => orlov_schulman(plan, &mut out),
            Suite::Waves => waves(plan, &mut out),
            Suite::BlockChain => block_chain(plan, &mut out),
            Suite::BlockFd => block_fd(plan, &mut out),
            Suite::SymbolFlows => symbol_flows(plan, &mut out),
        }
    }
    out
}

fn gamma_exact(plan: &Arc<Plan>, out: &mut Vec<Task>) {
    for (n, m) in plan.shapes(Suite::GammaExact) {
        let p = plan.clone();
        out.push(Task::new(Suite::GammaExact, move || {
            let eps = (p.cfg.epsilon.num, p.cfg.epsilon.den);
            let tol = p.tol.get("gamma-exact");
            let params = with(shape(n, m), json!({ "n_max": 2, "epsilon": p.cfg.epsilon.to_string() }));
            let (r, s) = timed(|| verify_gamma_identities(n, m, 2, eps));
            vec![match r {
                Ok(rep) => {
                    let params = with(params, json!({ "identities": rep.checks, "failures": rep.failures }));
                    Record::new("gamma-exact", params, rep.failures.len() as f64, tol, s)
                }
                Err(e) => Record::failed("gamma-exact", params, e, tol, s),
            }]
        }));
    }
}

fn dressing(plan: &Arc<Plan>, out: &mut Vec<Task>) {
    for (n, m) in plan.shapes(Suite::Dressing) {
        let p = plan.clone();
        out.push(Task::new(Suite::Dressing, move || {
            let depth = p.depth(Suite::Dressing, n, m);
            let params = with(shape(n, m), json!({ "D": depth }));
            let names = ["dressing.consistency", "dressing.frac", "dressing.inverse"];
            let (r, s) = timed(|| -> bth::Result<[f64; 3]> {
                let l = p.lax(n, m)?;
                let pair = secular_pair(&l, depth)?;
                let rep = verify_frac(&l, &pair)?;
                Ok([rep.consistency, rep.left.max(rep.right), pair.inverse_residual()?])
            });
            names
                .iter()
                .enumerate()
                .map(|(i, name)| match &r {
                    Ok(v) => Record::new(name, params.clone(), v[i], p.tol.get(name), s),
                    Err(e) => Record::failed(name, params.clone(), e, p.tol.get(name), s),
                })
                .collect()
        }));
    }
}

fn roots(plan: &Arc<Plan>, out: &mut Vec<Task>) {
    for (n, m) in plan.shapes(Suite::Roots) {
        let p = plan.clone();
        out.push(Task::new(Suite::Roots, move || {
            let depth = p.depth(Suite::Roots, n, m);
            let tol = p.tol.get("roots");
            let base = with(shape(n, m), json!({ "D": depth }));
            let l = match p.lax(n, m) {
                Ok(l) => l,
                Err(e) => return vec![Record::failed("roots", base, e, tol, 0.0)],
            };
            vec![
                record("roots", with(base.clone(), json!({ "root": "upper" })), tol, || {
                    power_residual(&root_upper(&l, depth)?, n, &l)
                }),
                record("roots", with(base, json!({ "root": "lower" })), tol, || power_residual(&root_lower(&l, depth)?, m, &l)),
            ]
        }));
    }
}

fn lax_oracles(plan: &Arc<Plan>, out: &mut Vec<Task>) {
    for (n, m) in plan.shapes(Suite::LaxOracles) {
        let p = plan.clone();
        out.push(Task::new(Suite::LaxOracles, move || {
            let depth = p.depth(Suite::LaxOracles, n, m);
            let base = with(shape(n, m), json!({ "D": depth }));
            let l = match p.lax(n, m) {
                Ok(l) => l,
                Err(e) => return vec![Record::failed("lax-oracles", base, e, 0.0, 0.0)],
            };
            let mut recs = Vec::new();
            let explicit = p.tol.get("lax-oracles.explicit");
            let flows: Vec<FlowIndex> = match (n, m) {
                (1, 2) => vec![FlowIndex::new(1, 0), FlowIndex::new(-1, 0)],
                (2, 1) => vec![FlowIndex::new(2, 0), FlowIndex::new(1, 0)],
                _ => vec![],
            };
            for f in flows {
                let params = with(base.clone(), json!({ "flow": f.to_string() }));
                recs.push(record("lax-oracles.explicit", params, explicit, || {
                    let rhs = lax_rhs(&l, f, depth)?.fields;
                    let o = if n == 1 {
                        rhs_oracle_n1m2(&l.field(0), &l.field(-1), &l.field(-2), f)?
                    } else {
                        rhs_oracle_n2m1(&l.field(1), &l.field(0), &l.field(-1), f)?
                    };
                    Ok(max_dist(&rhs, &o))
                }));
            }
            if (n, m) == (1, 1) {
                recs.push(record("lax-oracles.toda", with(base.clone(), json!({ "flow": "(1,0)" })), p.tol.get("lax-oracles.toda"), || {
                    let rhs = lax_rhs(&l, FlowIndex::new(1, 0), depth)?.fields;
                    Ok(max_dist(&rhs, &toda_rhs(&l.field(0), &l.field(-1))))
                }));
            }
            recs.push(record("lax-oracles.gamma-one-zero", base.clone(), p.tol.get("lax-oracles.gamma-one-zero"), || {
                let a = lax_rhs(&l, FlowIndex::new(1, 0), depth)?.fields;
                let b = lax_rhs(&l, FlowIndex::new(0, 0), depth)?.fields;
                Ok(max_dist(&a, &b))
            }));
            let band_tol = p.tol.get("lax-oracles.band");
            for f in FlowIndex::all(n, m, 2).into_iter().filter(|f| f.root_power(n, m) <= 3) {
                let params = with(base.clone(), json!({ "flow": f.to_string() }));
                recs.push(record("lax-oracles.band", params, band_tol, || Ok(lax_rhs(&l, f, depth)?.leak)));
            }
            recs
        }));
    }
}

fn zakharov_shabat(plan: &Arc<Plan>, out: &mut Vec<Task>) {
    for (n, m) in plan.shapes(Suite::ZakharovShabat) {
        let flows = FlowIndex::all(n, m, 1);
        for (i, &fa) in flows.iter().enumerate() {
            for &fb in &flows[i..] {
                let p = plan.clone();
                out.push(Task::new(Suite::ZakharovShabat, move || {
                    let depth = p.depth(Suite::ZakharovShabat, n, m);
                    let (check, tol) = if fa == fb {
                        ("zakharov-shabat.self", p.tol.get("zakharov-shabat.self"))
                    } else {
                        ("zakharov-shabat", p.tol.get("zakharov-shabat"))
                    };
                    let params = with(shape(n, m), json!({ "D": depth, "flows": [fa.to_string(), fb.to_string()] }));
                    let (r, s) = timed(|| zs_residual(&p.lax(n, m)?, fa, fb, depth));
                    match r {
                        Ok(z) => {
                            let params = with(params, json!({ "full": z.full, "minus": z.minus, "plus": z.plus }));
                            vec![Record::new(check, params, z.full.max(z.minus).max(z.plus), tol, s)]
                        }
                        Err(e) => vec![Record::failed(check, params, e, tol, s)],
                    }
                }));
            }
        }
    }
}

fn orlov_schulman(plan: &Arc<Plan>, out: &mut Vec<Task>) {
    for (n, m) in plan.shapes(Suite::OrlovSchulman) {
        let p = plan.clone();
        out.push(Task::new(Suite::OrlovSchulman, move || {
            let depth = p.depth(Suite::OrlovSchulman, n, m);
            let base = with(shape(n, m), json!({ "D": depth }));
            let tol = p.tol.get("orlov-schulman.brackets");
            let (r, s) = timed(|| -> bth::Result<_> {
                let l = p.lax(n, m)?;
                let pair = secular_pair(&l, depth)?;
                let rep = os_report_for(&l, &pair, &numeric_times(pair.pl.ctx(), &p.tcfg))?;
                Ok((l, pair, rep))
            });
            let (l, pair, rep) = match r {
                Ok(v) => v,
                Err(e) => return vec![Record::failed("orlov-schulman.brackets", base, e, tol, s)],
            };
            let mut recs: Vec<Record> = [("[L,M_L]-1", rep.lm_left), ("[L,M_R]-1", rep.lm_right), ("[M_L-M_R,L]", rep.commute)]
                .into_iter()
                .zip(rep.bands)
                .map(|((what, v), b)| {
                    let params = with(base.clone(), json!({ "identity": what, "band": [b.lo, b.hi] }));
                    Record::new("orlov-schulman.brackets", params, v, tol, s / 3.0)
                })
                .collect();
            let mtol = p.tol.get("orlov-schulman.m-flow");
            for f in FlowIndex::all(n, m, 0) {
                let params = with(base.clone(), json!({ "flow": f.to_string() }));
                recs.push(record("orlov-schulman.m-flow", params, mtol, || {
                    Ok(m_flow_residual(&l, &pair, &p.tcfg, f, depth)?.max())
                }));
            }
            recs
        }));
    }
}

fn waves(plan: &Arc<Plan>, out: &mut Vec<Task>) {
    for (n, m) in plan.shapes(Suite::Waves) {
        for side in [Side::Left, Side::Right] {
            let p = plan.clone();
            out.push(Task::new(Suite::Waves, move || {
                let depth = p.depth(Suite::Waves, n, m);
                let lambda = if side == Side::Left { 2.0 } else { 0.5 };
                let side_name = if side == Side::Left { "L" } else { "R" };
                let base = with(shape(n, m), json!({ "D": depth, "side": side_name, "lambda": lambda }));
                let slack = p.tol.get("waves.tail-slack");
                let (r, s) = timed(|| -> bth::Result<_> {
                    let l = p.lax(n, m)?;
                    let pair = secular_pair(&l, depth)?;
                    let os = build_m(&pair, n, m, &numeric_times(pair.pl.ctx(), &p.tcfg))?;
                    let probe = build_wave(&pair, &p.tcfg, n, m, Complex64::new(lambda, 0.0), side, wave_half_width(depth, n, m))?;
                    wave_residuals(&probe, &pair, &os, &l)
                });
                let mut recs = match r {
                    Ok(rep) => rep
                        .checks
                        .iter()
                        .map(|c| {
                            let params = with(base.clone(), json!({ "equation": c.name, "tail_bound": c.bound }));
                            Record::new("waves.tail", params, c.residual, c.bound * (1.0 + slack) + 1e-12, s / rep.checks.len() as f64)
                        })
                        .collect(),
                    Err(e) => vec![Record::failed("waves.tail", base.clone(), e, 0.0, s)],
                };
                if side == Side::Left {
                    let factor = p.tol.get("waves.decay-factor");
                    let tol = factor * (1.0 / lambda).powf(4.0 / n as f64);
                    let params = with(base, json!({ "depths": [depth, depth + 4] }));
                    recs.push(record("waves.decay", params, tol, || {
                        eigen_decay_ratio(&p.lax(n, m)?, depth, Complex64::new(lambda, 0.0))
                    }));
                }
                recs
            }));
        }
    }
}

type SharedState = Arc<OnceLock<Result<AddState<f64>, String>>>;

fn get_state<'a>(cell: &'a SharedState, plan: &Plan, suite: Suite, n: usize, m: usize) -> Result<&'a AddState<f64>, String> {
    cell.get_or_init(|| {
        let depth = plan.depth(suite, n, m);
        plan.lax(n, m).and_then(|l| AddState::new(&l, &plan.tcfg, depth)).map_err(|e| e.to_string())
    })
    .as_ref()
    .map_err(|e| e.clone())
}

fn block_chain(plan: &Arc<Plan>, out: &mut Vec<Task>) {
    for (n, m) in plan.shapes(Suite::BlockChain) {
        let cell: SharedState = Arc::new(OnceLock::new());
        let add = |out: &mut Vec<Task>, check: &'static str, params: Value, f: Box<dyn Fn(&AddState<f64>) -> bth::Result<f64> + Send + Sync>| {
            let (p, cell) = (plan.clone(), cell.clone());
            out.push(Task::new(Suite::BlockChain, move || {
                let tol = p.tol.get(check);
                let params = with(with(shape(n, m), json!({ "D": p.depth(Suite::BlockChain, n, m) })), params.clone());
                let (r, s) = timed(|| get_state(&cell, &p, Suite::BlockChain, n, m).map(&f));
                vec![match r {
                    Ok(Ok(v)) => Record::new(check, params, v, tol, s),
                    Ok(Err(e)) => Record::failed(check, params, e, tol, s),
                    Err(e) => Record::failed(check, params, e, tol, s),
                }]
            }));
        };
        for a in GENERATORS {
            for b in GENERATORS {
                let (c, target) = a.bracket(&b);
                if target.is_none() && c != 0 {
                    continue;
                }
                let params = json!({
                    "a": a.to_string(), "b": b.to_string(), "structure": c,
                    "target": target.map(|t| t.to_string()),
                });
                add(out, "block-chain", params, Box::new(move |st| block_bracket_residual(st, a, b).map(|r| r.max())));
            }
        }
        for (i, a) in GENERATORS.iter().enumerate() {
            for b in &GENERATORS[i + 1..] {
                let (a, b) = (*a, *b);
                let params = json!({ "a": a.to_string(), "b": b.to_string() });
                add(out, "block-chain.antisymmetry", params, Box::new(move |st| antisymmetry_residual(st, a, b)));
            }
        }
        for a in -1i64..=1 {
            for b in -1i64..=1 {
                if a + b < -1 {
                    continue;
                }
                let params = json!({ "d_a": a, "d_b": b });
                add(out, "block-chain.witt", params, Box::new(move |st| witt_residual(st, a, b)));
            }
        }
        for idx in [AddFlowIndex::new(1, 0), AddFlowIndex::new(1, 1), AddFlowIndex::new(2, 1), AddFlowIndex::new(1, 2)] {
            for f in FlowIndex::all(n, m, 0) {
                let params = json!({ "idx": idx.to_string(), "flow": f.to_string() });
                add(
                    out,
                    "block-chain.commutativity",
                    params,
                    Box::new(move |st| hierarchy_commutativity_residual(st, idx, f).map(|r| r.max())),
                );
            }
        }
    }
}

fn block_fd(plan: &Arc<Plan>, out: &mut Vec<Task>) {
    for (n, m) in plan.shapes(Suite::BlockFd) {
        for (a, b) in FD_PAIRS {
            let p = plan.clone();
            out.push(Task::new(Suite::BlockFd, move || {
                let depth = p.depth(Suite::BlockFd, n, m);
                let params = with(shape(n, m), json!({ "D": depth, "a": a.to_string(), "b": b.to_string(), "h": FD_STEP, "times": "zero" }));
                let (lo, hi) = (p.tol.get("block-fd.ratio-min"), p.tol.get("block-fd.ratio-max"));
                let agree = p.tol.get("block-fd.agreement");
                let (r, s) = timed(|| -> bth::Result<_> {
                    // composed flows erode the band by one exponent per RK4 stage once Γ carries time terms
                    let st = AddState::new(&p.lax(n, m)?, &TimeConfig::new(), depth)?;
                    block_bracket_richardson(&st, a, b, FD_STEP)
                });
                match r {
                    Ok(rr) => {
                        let detail = json!({
                            "coarse": rr.coarse.pl.max(rr.coarse.pr), "fine": rr.fine.pl.max(rr.fine.pr),
                            "l_coarse": rr.coarse.l, "l_fine": rr.fine.l,
                        });
                        vec![
                            Record::within("block-fd.ratio", with(params.clone(), detail), rr.ratio, lo, hi, s),
                            // O(h) agreement with the chain-rule bracket, as a multiple of h
                            Record::new("block-fd.agreement", params, rr.fine.vs_chain / rr.fine.h, agree, 0.0),
                        ]
                    }
                    Err(e) => vec![Record::failed("block-fd.ratio", params, e, hi, s)],
                }
            }));
        }
    }
}

fn symbol_flows(plan: &Arc<Plan>, out: &mut Vec<Task>) {
    for (n, m) in plan.shapes(Suite::SymbolFlows) {
        let cell: SharedState = Arc::new(OnceLock::new());
        for w in SymbolFlow::ALL {
            let (p, cell) = (plan.clone(), cell.clone());
            out.push(Task::new(Suite::SymbolFlows, move || {
                let tol = p.tol.get("symbol-flows");
                let params = with(shape(n, m), json!({ "D": p.depth(Suite::SymbolFlows, n, m), "flow": w.to_string() }));
                let (r, s) = timed(|| get_state(&cell, &p, Suite::SymbolFlows, n, m).map(|st| symbol_flow_check(st, w)));
                vec![match r {
                    Ok(Ok(v)) => Record::new("symbol-flows", params, v, tol, s),
                    Ok(Err(e)) => Record::failed("symbol-flows", params, e, tol, s),
                    Err(e) => Record::failed("symbol-flows", params, e, tol, s),
                }]
            }));
        }
    }
}
