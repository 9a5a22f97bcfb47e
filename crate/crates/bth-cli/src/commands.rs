//! The `verify`, `evolve` and `roots` commands.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;
use std::sync::Arc;

use bth::dressing::{root_lower, root_upper};
use bth::hierarchy::{flow_depth, integrate, trace_functional, FlowIndex, Trajectory};
use bth::{BthError, Field, Lax};
use rayon::prelude::*;
use serde_json::json;

use crate::config::{ConfigError, Plan};
use crate::report::{summary, timed, to_jsonl, Record};
use crate::suites::tasks;

/// Exit status of a command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Pass = 0,
    Fail = 1,
    Config = 2,
}

/// What `verify` produced.
#[derive(Debug, Clone)]
pub struct VerifyOutcome {
    pub records: Vec<Record>,
    pub summary: String,
    pub exit: Exit,
}

fn write_file(path: &Path, text: &str) -> Result<(), ConfigError> {
    std::fs::write(path, text).map_err(|e| ConfigError(format!("cannot write {}: {e}", path.display())))
}

/// Runs the selected suites on a pool of `jobs` threads (0: one per core).
/// Record order is the task order, independent of scheduling.
pub fn verify_records(plan: &Plan) -> Vec<Record> {
    let plan = Arc::new(plan.clone());
    let work = tasks(&plan);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(plan.cfg.jobs).build().expect("thread pool");
    let mut records: Vec<Record> = pool.install(|| work.par_iter().map(|t| t.run()).collect::<Vec<_>>()).concat();
    if !plan.cfg.timings {
        for r in &mut records {
            r.seconds = 0.0;
        }
    }
    records
}

/// Runs, writes the report and summary where configured, and returns the outcome.
pub fn run_verify(plan: &Plan) -> Result<VerifyOutcome, ConfigError> {
    let records = verify_records(plan);
    let text = summary(&records);
    let lines = to_jsonl(&records);
    match &plan.cfg.report {
        Some(p) => write_file(p, &lines)?,
        None => print!("{lines}"),
    }
    if let Some(p) = &plan.cfg.summary {
        write_file(p, &text)?;
    }
    let exit = if records.iter().all(|r| r.pass) { Exit::Pass } else { Exit::Fail };
    Ok(VerifyOutcome { records, summary: text, exit })
}

/// `t,site,u_{-M},…,u_{N-1}` with one row per (sample time, site).
pub fn trajectory_csv(traj: &Trajectory<f64>, n: usize, m: usize) -> String {
    let mut s = String::from("t,site");
    for j in -(m as i64)..n as i64 {
        let _ = write!(s, ",u_{{{j}}}");
    }
    s.push('\n');
    for (t, fields) in traj.times.iter().zip(&traj.states) {
        let sites = fields.first().map(|f| f.values().len()).unwrap_or(0);
        for site in 0..sites {
            let _ = write!(s, "{t},{site}");
            for f in fields {
                let _ = write!(s, ",{}", f.values()[site]);
            }
            s.push('\n');
        }
    }
    s
}

/// Trace functionals Σ_x [L^k]₀ at both ends of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Conservation {
    pub k: u32,
    pub start: f64,
    pub end: f64,
    /// |end − start| / duration
    pub drift_per_time: f64,
}

#[derive(Debug, Clone)]
pub struct EvolveOutcome {
    pub trajectory: Trajectory<f64>,
    pub conservation: Vec<Conservation>,
    pub records: Vec<Record>,
    pub exit: Exit,
}

/// Highest power of L in the conservation report.
pub const TRACE_POWERS: u32 = 3;

/// Integrates each flow over `duration` in turn from the seeded random fields.
pub fn evolve(plan: &Plan, flows: &[FlowIndex], duration: f64, dt: f64) -> bth::Result<EvolveOutcome> {
    let (n, m) = (plan.cfg.n, plan.cfg.m);
    let l0 = plan.lax(n, m)?;
    for f in flows {
        f.validate(n, m)?;
    }
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(BthError::Invalid(format!("duration T = {duration} must be positive")));
    }
    let depth = flows.iter().map(|f| flow_depth(*f, n, m)).max().unwrap_or(1);
    let steps = (duration / dt).ceil().max(1.0) as usize;
    let every = if plan.cfg.sample_every > 0 { plan.cfg.sample_every } else { steps.div_ceil(100) };
    let legs: Vec<(FlowIndex, f64)> = flows.iter().map(|f| (*f, duration)).collect();
    let (traj, secs) = timed(|| integrate(&l0, &legs, dt, depth, every));
    let traj = traj?;
    let last = Lax::from_fields(l0.ctx(), n, m, traj.states.last().cloned().unwrap_or_else(|| l0.fields()))?;
    let total = duration * flows.len() as f64;
    let tol = plan.tol.get("evolve.trace-drift");
    let mut conservation = Vec::new();
    let mut records = Vec::new();
    for k in 1..=TRACE_POWERS {
        let (start, end) = (trace_functional(&l0, k)?, trace_functional(&last, k)?);
        let drift = (end - start).abs() / total;
        conservation.push(Conservation { k, start, end, drift_per_time: drift });
        let params = json!({
            "N": n, "M": m, "k": k, "T": duration, "dt": dt,
            "flows": flows.iter().map(|f| f.to_string()).collect::<Vec<_>>(),
            "start": start, "end": end,
        });
        let s = if plan.cfg.timings { secs } else { 0.0 };
        records.push(Record::new("evolve.trace", params, drift, tol, s));
    }
    let exit = if records.iter().all(|r| r.pass) { Exit::Pass } else { Exit::Fail };
    Ok(EvolveOutcome { trajectory: traj, conservation, records, exit })
}

/// `evolve` with output: CSV to `out`, conservation report to stdout (and the report file).
pub fn run_evolve(plan: &Plan, flows: &[FlowIndex], duration: f64, dt: f64, out: &Path) -> Result<Exit, ConfigError> {
    match evolve(plan, flows, duration, dt) {
        Ok(o) => {
            write_file(out, &trajectory_csv(&o.trajectory, plan.cfg.n, plan.cfg.m))?;
            println!("{:>3} {:>22} {:>22} {:>12}", "k", "trace start", "trace end", "drift/time");
            for c in &o.conservation {
                println!("{:>3} {:>22.15e} {:>22.15e} {:>12.3e}", c.k, c.start, c.end, c.drift_per_time);
            }
            if let Some(p) = &plan.cfg.report {
                write_file(p, &to_jsonl(&o.records))?;
            }
            Ok(o.exit)
        }
        Err(BthError::Diverged { step }) => {
            eprintln!("error: integration diverged at step {step}");
            Ok(Exit::Fail)
        }
        Err(e @ (BthError::Gcd { .. } | BthError::OutOfRange(_) | BthError::Invalid(_))) => Err(ConfigError(e.to_string())),
        Err(e) => {
            eprintln!("error: {e}");
            Ok(Exit::Fail)
        }
    }
}

fn field_lines(f: &Field) -> Vec<String> {
    f.values().iter().enumerate().map(|(s, v)| format!("{s} {v:.17e}")).collect()
}

/// Roots of the configured L: residual records and a plain-text dump of L and both roots.
pub fn roots_report(plan: &Plan) -> bth::Result<(Vec<Record>, String)> {
    let (n, m, d) = (plan.cfg.n, plan.cfg.m, plan.cfg.d);
    let l = plan.lax(n, m)?;
    let tol = plan.tol.get("roots");
    let mut dump = String::new();
    let _ = writeln!(dump, "# L  (N = {n}, M = {m}, P = {}, epsilon = {}, seed = {})", plan.cfg.p, plan.cfg.epsilon, plan.cfg.seed);
    dump.push_str(&l.op().dump(field_lines));
    let mut records = Vec::new();
    for (name, order) in [("upper", n), ("lower", m)] {
        let (r, secs) = timed(|| if name == "upper" { root_upper(&l, d) } else { root_lower(&l, d) });
        let r = r?;
        let p = r.power(order as u32)?;
        let band = p.reliable().ok_or_else(|| BthError::BandExhausted("root power".into()))?;
        let res = p.dist_on(l.op(), band)? / l.op().norm().max(1.0);
        let params = json!({ "N": n, "M": m, "D": d, "root": name, "band": [band.lo, band.hi] });
        records.push(Record::new("roots", params, res, tol, if plan.cfg.timings { secs } else { 0.0 }));
        let _ = writeln!(dump, "# L^(1/{order}) {name}");
        dump.push_str(&r.dump(field_lines));
    }
    Ok((records, dump))
}

pub fn run_roots(plan: &Plan, dump_op: Option<&Path>) -> Result<Exit, ConfigError> {
    match roots_report(plan) {
        Ok((records, dump)) => {
            if let Some(p) = dump_op {
                write_file(p, &dump)?;
            }
            let lines = to_jsonl(&records);
            match &plan.cfg.report {
                Some(p) => write_file(p, &lines)?,
                None => print!("{lines}"),
            }
            let _ = std::io::stdout().flush();
            Ok(if records.iter().all(|r| r.pass) { Exit::Pass } else { Exit::Fail })
        }
        Err(e @ BthError::Gcd { .. }) => Err(ConfigError(e.to_string())),
        Err(e) => {
            eprintln!("error: {e}");
            Ok(Exit::Fail)
        }
    }
}
