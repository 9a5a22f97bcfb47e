//! Run configuration: JSON schema, `--key value` overrides and validation.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use bth::blocksym::{required_depth, GENERATORS};
use bth::hierarchy::{FlowIndex, TimeConfig};
use bth::random::FieldSpec;
use num_integer::gcd;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;

use crate::suites::Suite;

/// A configuration violation; the driver exits with status 2.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn err<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

/// Lattice spacing p/q, written as `"p/q"` or a plain integer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Epsilon {
    pub num: i64,
    pub den: i64,
}

impl Default for Epsilon {
    fn default() -> Self {
        Self { num: 1, den: 1 }
    }
}

impl fmt::Display for Epsilon {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 { write!(f, "{}", self.num) } else { write!(f, "{}/{}", self.num, self.den) }
    }
}

impl FromStr for Epsilon {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, ConfigError> {
        let bad = || ConfigError(format!("epsilon `{s}` is not an integer or a fraction p/q"));
        let (num, den) = match s.split_once('/') {
            Some((p, q)) => (p.trim().parse().map_err(|_| bad())?, q.trim().parse().map_err(|_| bad())?),
            None => (s.trim().parse().map_err(|_| bad())?, 1),
        };
        Ok(Self { num, den })
    }
}

impl Serialize for Epsilon {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Epsilon {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Int(i64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Int(num) => Ok(Self { num, den: 1 }),
            Repr::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FieldSpecConfig {
    pub modes: usize,
    pub amplitude: f64,
}

impl Default for FieldSpecConfig {
    fn default() -> Self {
        let s = FieldSpec::default();
        Self { modes: s.modes, amplitude: s.amplitude }
    }
}

/// The JSON configuration file. Every key is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "P")]
    pub p: usize,
    pub epsilon: Epsilon,
    #[serde(rename = "D")]
    pub d: usize,
    pub seed: u64,
    pub field_spec: FieldSpecConfig,
    /// t_{γ,n} keyed by `"γ,n"`.
    pub times: BTreeMap<String, f64>,
    /// Overrides of the per-check tolerances.
    pub tolerances: BTreeMap<String, f64>,
    /// Empty means all suites.
    pub suites: Vec<String>,
    /// Run each suite over its standard (N, M) sweep in addition to (N, M).
    pub sweep: bool,
    /// Raise D to the computed margin of a suite instead of rejecting the config.
    pub auto_raise: bool,
    /// Record wall-clock seconds; off gives bitwise-reproducible reports.
    pub timings: bool,
    /// Worker threads, 0 for one per core.
    pub jobs: usize,
    pub report: Option<PathBuf>,
    pub summary: Option<PathBuf>,
    /// Trajectory sampling stride in steps, 0 for about 100 samples per flow.
    pub sample_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let times = [("1,0".to_string(), 0.2), ("0,1".to_string(), -0.1)].into_iter().collect();
        Self {
            n: 1,
            m: 1,
            p: 31,
            epsilon: Epsilon::default(),
            d: 12,
            seed: 20_240_531,
            field_spec: FieldSpecConfig::default(),
            times,
            tolerances: BTreeMap::new(),
            suites: Vec::new(),
            sweep: true,
            auto_raise: true,
            timings: true,
            jobs: 0,
            report: None,
            summary: None,
            sample_every: 0,
        }
    }
}

/// Keys whose value is a map that overrides may extend.
const MAP_KEYS: [&str; 2] = ["times", "tolerances"];

fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// True when `key` (dotted for nested entries) names a configuration entry.
pub fn is_config_key(key: &str) -> bool {
    let defaults = serde_json::to_value(RunConfig::default()).expect("default config serializes");
    let mut parts = key.split('.');
    let head = parts.next().unwrap_or_default();
    let Some(mut node) = defaults.get(head) else { return false };
    if MAP_KEYS.contains(&head) {
        return true;
    }
    for p in parts {
        match node.get(p) {
            Some(n) => node = n,
            None => return false,
        }
    }
    true
}

/// Sets `key = raw` in a (possibly partial) configuration object.
pub fn apply_override(doc: &mut Value, key: &str, raw: &str) -> Result<(), ConfigError> {
    if !is_config_key(key) {
        return err(format!("unknown configuration key `{key}`"));
    }
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, p) in parts.iter().enumerate() {
        let obj = match node {
            Value::Object(o) => o,
            other => {
                *other = Value::Object(Default::default());
                other.as_object_mut().expect("just set")
            }
        };
        if i + 1 == parts.len() {
            let value = match *p {
                "report" | "summary" => Value::String(raw.to_string()),
                "suites" => match parse_value(raw) {
                    Value::String(s) => Value::Array(s.split(',').map(|x| Value::String(x.trim().into())).collect()),
                    v => v,
                },
                _ => parse_value(raw),
            };
            obj.insert(p.to_string(), value);
            return Ok(());
        }
        node = obj.entry(p.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(())
}

impl RunConfig {
    /// Reads the JSON file (or defaults) and applies the overrides in order.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self, ConfigError> {
        let mut doc = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| ConfigError(format!("cannot read config {}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| ConfigError(format!("config {}: {e}", p.display())))?
            }
            None => Value::Object(Default::default()),
        };
        for (k, v) in overrides {
            apply_override(&mut doc, k, v)?;
        }
        serde_json::from_value(doc).map_err(|e| ConfigError(format!("config: {e}")))
    }
}

/// Default tolerances per check name.
pub const DEFAULT_TOLERANCES: [(&str, f64); 27] = [
    ("gamma-exact", 0.0),
    ("dressing.consistency", 1e-10),
    ("dressing.frac", 1e-10),
    ("dressing.inverse", 1e-11),
    ("roots", 1e-10),
    ("lax-oracles.explicit", 1e-9),
    ("lax-oracles.toda", 1e-12),
    ("lax-oracles.gamma-one-zero", 1e-11),
    ("lax-oracles.band", 1e-11),
    ("zakharov-shabat", 1e-6),
    ("zakharov-shabat.self", 0.0),
    ("orlov-schulman.brackets", 1e-9),
    ("orlov-schulman.m-flow", 1e-6),
    ("waves.tail-slack", 1e-6),
    ("waves.decay-factor", 3.0),
    ("block-chain", 1e-7),
    ("block-chain.antisymmetry", 1e-9),
    ("block-chain.witt", 1e-7),
    ("block-chain.commutativity", 1e-7),
    ("block-fd.ratio-min", 1.6),
    ("block-fd.ratio-max", 2.6),
    ("block-fd.agreement", 20.0),
    ("symbol-flows", 1e-7),
    ("evolve.trace-drift", 1e-8),
    ("evolve.richardson-min", 12.0),
    ("evolve.richardson-max", 20.0),
    ("verify.seconds", 300.0),
];

/// Tolerances after overrides.
#[derive(Debug, Clone, PartialEq)]
pub struct Tolerances(BTreeMap<String, f64>);

impl Tolerances {
    pub fn new(overrides: &BTreeMap<String, f64>) -> Result<Self, ConfigError> {
        let mut map: BTreeMap<String, f64> = DEFAULT_TOLERANCES.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        for (k, v) in overrides {
            if !map.contains_key(k) {
                return err(format!("unknown tolerance `{k}`"));
            }
            if !(v.is_finite() && *v >= 0.0) {
                return err(format!("tolerance `{k}` = {v} is not a finite nonnegative number"));
            }
            map.insert(k.clone(), *v);
        }
        Ok(Self(map))
    }

    pub fn get(&self, name: &str) -> f64 {
        *self.0.get(name).unwrap_or_else(|| panic!("no tolerance named `{name}`"))
    }
}

/// A validated configuration, ready to run.
#[derive(Debug, Clone)]
pub struct Plan {
    pub cfg: RunConfig,
    pub spec: FieldSpec,
    pub tcfg: TimeConfig,
    pub tol: Tolerances,
    pub suites: Vec<Suite>,
}

/// Root orders and shapes a suite touches, for the gcd check and time validation.
fn suite_shapes(suite: Suite, cfg: &RunConfig) -> Vec<(usize, usize)> {
    let own = (cfg.n, cfg.m);
    let mut v = if cfg.sweep { suite.sweep().to_vec() } else { Vec::new() };
    if !v.contains(&own) {
        v.push(own);
    }
    v
}

fn check_lattice(p: usize, orders: &[(usize, &str)]) -> Result<(), ConfigError> {
    if p < 3 {
        return err(format!("P = {p}: the lattice needs at least 3 sites"));
    }
    if p.is_multiple_of(2) {
        return err(format!(
            "P = {p} violates the parity condition: P must be odd (gcd(P, 2) = 2); the shift-sum inversions need P odd and coprime to N and M"
        ));
    }
    for &(k, what) in orders {
        let g = gcd(p, k);
        if g != 1 {
            return err(format!(
                "P = {p} violates the gcd condition: gcd(P, {what} = {k}) = {g}; the root recursion needs gcd(P, N) = gcd(P, M) = 1"
            ));
        }
    }
    Ok(())
}

impl Plan {
    /// Validates `cfg`; `suites` (from the command line) replaces the configured list when non-empty.
    pub fn new(mut cfg: RunConfig, suites: &[String]) -> Result<Self, ConfigError> {
        if !suites.is_empty() {
            cfg.suites = suites.to_vec();
        }
        if cfg.n == 0 || cfg.m == 0 || cfg.n > 4 || cfg.m > 4 {
            return err(format!("N = {} and M = {} must lie in 1..=4", cfg.n, cfg.m));
        }
        if cfg.epsilon.den <= 0 || cfg.epsilon.num <= 0 {
            return err(format!("epsilon = {} must be a positive fraction", cfg.epsilon));
        }
        if cfg.d == 0 {
            return err("D must be at least 1");
        }
        let suites: Vec<Suite> = if cfg.suites.is_empty() {
            Suite::ALL.to_vec()
        } else {
            cfg.suites.iter().map(|s| s.parse()).collect::<Result<_, _>>()?
        };
        let mut orders = vec![(cfg.n, "N"), (cfg.m, "M")];
        let mut shapes = vec![(cfg.n, cfg.m)];
        for s in &suites {
            for sh in suite_shapes(*s, &cfg) {
                if !shapes.contains(&sh) {
                    shapes.push(sh);
                }
                if s.uses_roots() {
                    orders.push((sh.0, "N"));
                    orders.push((sh.1, "M"));
                }
            }
        }
        orders.sort();
        orders.dedup();
        check_lattice(cfg.p, &orders)?;
        let spec = FieldSpec { modes: cfg.field_spec.modes, amplitude: cfg.field_spec.amplitude };
        spec.validate(cfg.p).map_err(|e| ConfigError(format!("field_spec: {e}")))?;
        let mut tcfg = TimeConfig::new();
        for (k, t) in &cfg.times {
            let idx: FlowIndex = k.parse().map_err(|e| ConfigError(format!("times: {e}")))?;
            tcfg.set(idx, *t).map_err(|e| ConfigError(format!("times: {e}")))?;
        }
        for &(n, m) in &shapes {
            tcfg.validate(n, m).map_err(|e| ConfigError(format!("times (for N = {n}, M = {m}): {e}")))?;
        }
        if !cfg.auto_raise {
            for s in &suites {
                for (n, m) in suite_shapes(*s, &cfg) {
                    let need = s.margin(n, m);
                    if cfg.d < need {
                        return err(format!(
                            "D = {} is below the margin {need} that suite {s} needs for (N, M) = ({n}, {m}); raise D or set auto_raise"
                        , cfg.d));
                    }
                }
            }
        }
        let tol = Tolerances::new(&cfg.tolerances)?;
        Ok(Self { cfg, spec, tcfg, tol, suites })
    }

    /// Validation for commands that work on (N, M) alone.
    pub fn single(cfg: RunConfig) -> Result<Self, ConfigError> {
        Self::new(RunConfig { sweep: false, ..cfg }, &["roots".to_string()])
    }

    /// Shapes a suite runs on.
    pub fn shapes(&self, suite: Suite) -> Vec<(usize, usize)> {
        suite_shapes(suite, &self.cfg)
    }

    /// Working depth of a suite on a shape.
    pub fn depth(&self, suite: Suite, n: usize, m: usize) -> usize {
        self.cfg.d.max(suite.margin(n, m))
    }

    pub fn grid(&self) -> bth::Result<std::sync::Arc<bth::coeff::LatticeGrid>> {
        bth::coeff::LatticeGrid::periodic(self.cfg.p, self.cfg.epsilon.num, self.cfg.epsilon.den)
    }

    /// The seeded random Lax operator of shape (n, m).
    pub fn lax(&self, n: usize, m: usize) -> bth::Result<bth::Lax> {
        bth::random::random_lax(&self.grid()?, n, m, self.spec, self.cfg.seed)
    }
}

/// Depth margin of the Block-algebra checks: the largest over generator pairs.
pub fn block_margin(n: usize, m: usize) -> usize {
    let mut d = 0;
    for a in GENERATORS {
        for b in GENERATORS {
            d = d.max(required_depth(a, b, n, m));
        }
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_reach_nested_keys() {
        let cfg = RunConfig::load(
            None,
            &[
                ("P".into(), "33".into()),
                ("epsilon".into(), "1/2".into()),
                ("field_spec.amplitude".into(), "0".into()),
                ("times.1,1".into(), "0.5".into()),
                ("suites".into(), "roots,waves".into()),
            ],
        )
        .unwrap();
        assert_eq!(cfg.p, 33);
        assert_eq!(cfg.epsilon, Epsilon { num: 1, den: 2 });
        assert_eq!(cfg.field_spec.amplitude, 0.0);
        assert_eq!(cfg.times["1,1"], 0.5);
        assert_eq!(cfg.suites, vec!["roots", "waves"]);
        assert!(RunConfig::load(None, &[("bogus".into(), "1".into())]).is_err());
    }

    #[test]
    fn lattice_conditions_are_named() {
        let e = Plan::new(RunConfig { p: 30, ..Default::default() }, &[]).unwrap_err();
        assert!(e.0.contains("parity") && e.0.contains("gcd(P, 2) = 2"), "{e}");
        let e = Plan::new(RunConfig { p: 33, ..Default::default() }, &["roots".into()]).unwrap_err();
        assert!(e.0.contains("gcd condition") && e.0.contains(" = 3) = 3"), "{e}");
        assert!(Plan::new(RunConfig { p: 33, sweep: false, ..Default::default() }, &["roots".into()]).is_ok());
    }

    #[test]
    fn margins_are_enforced_without_auto_raise() {
        let cfg = RunConfig { auto_raise: false, ..Default::default() };
        let e = Plan::new(cfg.clone(), &["block-chain".into()]).unwrap_err();
        assert!(e.0.contains("margin"), "{e}");
        assert!(Plan::new(RunConfig { d: 40, ..cfg }, &["block-chain".into()]).is_ok());
    }

    #[test]
    fn epsilon_forms() {
        let c: RunConfig = serde_json::from_str(r#"{"epsilon": 2}"#).unwrap();
        assert_eq!(c.epsilon, Epsilon { num: 2, den: 1 });
        let c: RunConfig = serde_json::from_str(r#"{"epsilon": "3/4"}"#).unwrap();
        assert_eq!(c.epsilon.to_string(), "3/4");
        assert!(serde_json::from_str::<RunConfig>(r#"{"Q": 1}"#).is_err());
    }
}
