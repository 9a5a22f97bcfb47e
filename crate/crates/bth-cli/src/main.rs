use std::path::PathBuf;
use std::process::ExitCode;

use bth::hierarchy::FlowIndex;
use bth_cli::config::is_config_key;
use bth_cli::{run_evolve, run_roots, run_verify, ConfigError, Exit, Plan, RunConfig};
use clap::{Parser, Subcommand};

/// Verification harness for the bigraded Toda hierarchy.
///
/// Any configuration key can also be given as `--key value`
/// (nested keys dotted, e.g. `--field_spec.amplitude 0` or `--times.1,0 0.3`).
#[derive(Parser)]
#[command(name = "bth", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run verification suites and write a JSON-lines report.
    Verify {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Suite to run (repeatable); default all.
        #[arg(long = "suite")]
        suites: Vec<String>,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Integrate hierarchy flows and write the trajectory CSV.
    Evolve {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Flow γ,n (repeatable; each runs for T in turn).
        #[arg(long = "flow", required = true, allow_hyphen_values = true)]
        flows: Vec<String>,
        #[arg(long = "T")]
        duration: f64,
        #[arg(long)]
        dt: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute both fractional roots of L and dump the operators.
    Roots {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "dump-op")]
        dump_op: Option<PathBuf>,
    },
}

const CLI_FLAGS: [&str; 9] = ["config", "suite", "jobs", "flow", "T", "dt", "out", "dump-op", "help"];

/// Splits `--key value` configuration overrides from the arguments clap parses.
fn split_overrides(args: Vec<String>) -> Result<(Vec<String>, Vec<(String, String)>), ConfigError> {
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        let Some(body) = a.strip_prefix("--") else {
            rest.push(a);
            continue;
        };
        let (key, inline) = match body.split_once('=') {
            Some((k, v)) => (k.to_string(), Some(v.to_string())),
            None => (body.to_string(), None),
        };
        if CLI_FLAGS.contains(&key.as_str()) || !is_config_key(&key) {
            rest.push(a);
            continue;
        }
        let value = match inline {
            Some(v) => v,
            None => it.next().ok_or_else(|| ConfigError(format!("--{key} needs a value")))?,
        };
        overrides.push((key, value));
    }
    Ok((rest, overrides))
}

fn run() -> Result<Exit, ConfigError> {
    let (args, overrides) = split_overrides(std::env::args().collect())?;
    let cli = Cli::parse_from(args);
    match cli.command {
        Command::Verify { config, suites, jobs } => {
            let mut cfg = RunConfig::load(config.as_deref(), &overrides)?;
            if let Some(j) = jobs {
                cfg.jobs = j;
            }
            let plan = Plan::new(cfg, &suites)?;
            let out = run_verify(&plan)?;
            // JSON lines own stdout when no report file is configured
            if plan.cfg.report.is_some() {
                print!("{}", out.summary);
            } else {
                eprint!("{}", out.summary);
            }
            Ok(out.exit)
        }
        Command::Evolve { config, flows, duration, dt, out } => {
            let cfg = RunConfig::load(config.as_deref(), &overrides)?;
            let flows = flows
                .iter()
                .map(|f| f.parse::<FlowIndex>().map_err(|e| ConfigError(e.to_string())))
                .collect::<Result<Vec<_>, _>>()?;
            let plan = Plan::single(cfg)?;
            run_evolve(&plan, &flows, duration, dt, &out)
        }
        Command::Roots { config, dump_op } => {
            let cfg = RunConfig::load(config.as_deref(), &overrides)?;
            let plan = Plan::single(cfg)?;
            run_roots(&plan, dump_op.as_deref())
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(e) => ExitCode::from(e as u8),
        Err(e) => {
            eprintln!("configuration error: {e}");
            ExitCode::from(Exit::Config as u8)
        }
    }
}
