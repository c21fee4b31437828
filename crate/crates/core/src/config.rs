//! Flat `key=value` run manifests.
//!
//! ```text
//! # uniform progressive failure
//! topology=uniform
//! N=200
//! degree=5
//! scenario=progressive
//! seed=42
//! runs=20
//! mode=both
//! ```

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::PathBuf;
use std::str::FromStr;

use thiserror::Error;

use crate::sim::{Scenario, ScenarioConfig, SimError, DEFAULT_EVENT_CAP, DEFAULT_LATENCY, DEFAULT_STEPS};
use crate::topology::{TopologyParams, TopologyRegistry, TopologySpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    On,
    Off,
    Both,
}

impl Mode {
    /// Protocol settings of the legs this mode runs, ON first.
    pub fn legs(self) -> &'static [bool] {
        match self {
            Mode::On => &[true],
            Mode::Off => &[false],
            Mode::Both => &[true, false],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::On => "on",
            Mode::Off => "off",
            Mode::Both => "both",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "on" => Ok(Mode::On),
            "off" => Ok(Mode::Off),
            "both" => Ok(Mode::Both),
            _ => Err(format!("expected on, off or both, got {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub config: ScenarioConfig,
    pub mode: Mode,
    pub output_dir: PathBuf,
    pub snapshot_every: Option<u64>,
    pub trace: bool,
}

pub const DEFAULT_RUNS: usize = 20;
pub const DEFAULT_OUTPUT_DIR: &str = "out";

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected key=value, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: {key} already set on line {first}")]
    Duplicate { line: usize, key: String, first: usize },
    #[error("line {line}: {key}: {msg}")]
    Value { line: usize, key: String, msg: String },
    #[error("line {line}: {key} does not apply to {context}")]
    NotApplicable { line: usize, key: String, context: String },
    #[error("missing required keys: {}", .0.join(", "))]
    Missing(Vec<String>),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

const KEYS: &[&str] = &[
    "topology",
    "N",
    "degree",
    "clusters",
    "gamma",
    "omega",
    "p",
    "scenario",
    "steps",
    "seed",
    "runs",
    "transient",
    "forced_failures",
    "mode",
    "threshold",
    "wait_min",
    "wait_max",
    "latency",
    "event_cap",
    "snapshot_every",
    "trace",
    "output_dir",
];

struct Entries {
    map: BTreeMap<&'static str, (usize, String)>,
}

impl Entries {
    fn raw(&self, key: &str) -> Option<(usize, &str)> {
        self.map.get(key).map(|(l, v)| (*l, v.as_str()))
    }

    fn get<T: FromStr>(&self, key: &'static str) -> Result<Option<(usize, T)>, ConfigError>
    where
        T::Err: fmt::Display,
    {
        match self.raw(key) {
            None => Ok(None),
            Some((line, v)) => v.parse::<T>().map(|x| Some((line, x))).map_err(|e| ConfigError::Value {
                line,
                key: key.into(),
                msg: format!("{e} ({v:?})"),
            }),
        }
    }

    fn checked<T: FromStr + Copy>(
        &self,
        key: &'static str,
        ok: impl Fn(T) -> bool,
        expect: &str,
    ) -> Result<Option<T>, ConfigError>
    where
        T::Err: fmt::Display,
    {
        match self.get::<T>(key)? {
            None => Ok(None),
            Some((_, v)) if ok(v) => Ok(Some(v)),
            Some((line, _)) => Err(ConfigError::Value {
                line,
                key: key.into(),
                msg: format!("must be {expect}"),
            }),
        }
    }

    fn reject(&self, key: &'static str, context: &str) -> Result<(), ConfigError> {
        match self.raw(key) {
            Some((line, _)) => Err(ConfigError::NotApplicable {
                line,
                key: key.into(),
                context: context.into(),
            }),
            None => Ok(()),
        }
    }
}

fn lex(text: &str) -> Result<Entries, ConfigError> {
    let mut map: BTreeMap<&'static str, (usize, String)> = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let Some((k, v)) = body.split_once('=') else {
            return Err(ConfigError::Syntax {
                line,
                text: raw.to_string(),
            });
        };
        let (k, v) = (k.trim(), v.trim());
        let Some(&key) = KEYS.iter().find(|&&known| known == k) else {
            return Err(ConfigError::UnknownKey { line, key: k.into() });
        };
        if let Some((first, _)) = map.get(key) {
            return Err(ConfigError::Duplicate {
                line,
                key: key.into(),
                first: *first,
            });
        }
        map.insert(key, (line, v.to_string()));
    }
    Ok(Entries { map })
}

fn prob(x: f64) -> bool {
    (0.0..=1.0).contains(&x)
}

/// Parses and fully validates a manifest against the built-in topologies.
pub fn parse_config(text: &str) -> Result<RunManifest, ConfigError> {
    parse_config_with(text, &TopologyRegistry::builtin())
}

pub fn parse_config_with(text: &str, registry: &TopologyRegistry) -> Result<RunManifest, ConfigError> {
    let e = lex(text)?;

    let mut missing: Vec<String> = ["topology", "N", "scenario", "seed"]
        .iter()
        .filter(|k| e.raw(k).is_none())
        .map(|k| k.to_string())
        .collect();
    let topology = e.raw("topology").map(|(l, v)| (l, v.to_string()));
    if let Some((line, name)) = &topology {
        match registry.get(name) {
            Some(entry) => missing.extend(entry.required.iter().filter(|k| e.raw(k).is_none()).map(|k| k.to_string())),
            None => {
                return Err(ConfigError::Value {
                    line: *line,
                    key: "topology".into(),
                    msg: format!("unknown topology {name:?}; known: {}", registry.names().collect::<Vec<_>>().join(", ")),
                })
            }
        }
        for k in ["degree", "clusters", "gamma", "omega", "p"] {
            let entry = registry.get(name).expect("checked above");
            if !entry.required.contains(&k) {
                e.reject(k, &format!("topology {name}"))?;
            }
        }
    }
    if !missing.is_empty() {
        return Err(ConfigError::Missing(missing));
    }
    let (_, topology) = topology.expect("required");

    let params = TopologyParams {
        degree: e.checked::<usize>("degree", |d| d >= 1, "at least 1")?,
        clusters: e.checked::<usize>("clusters", |c| c >= 2, "at least 2")?,
        gamma: e.checked::<f64>("gamma", prob, "a probability in [0, 1]")?,
        omega: e.checked::<f64>("omega", prob, "a probability in [0, 1]")?,
        edge_prob: e.checked::<f64>("p", prob, "a probability in [0, 1]")?,
    };
    let n = e.checked::<usize>("N", |n| n >= 1, "at least 1")?.expect("required");

    let (scenario_line, scenario_name) = e.raw("scenario").expect("required");
    let scenario = match scenario_name {
        "stable" => Scenario::StableChurn {
            steps: e.checked::<u64>("steps", |s| s >= 1, "at least 1")?.unwrap_or(DEFAULT_STEPS),
        },
        "progressive" => {
            e.reject("steps", "scenario progressive")?;
            Scenario::ProgressiveFailure
        }
        other => {
            return Err(ConfigError::Value {
                line: scenario_line,
                key: "scenario".into(),
                msg: format!("expected stable or progressive, got {other:?}"),
            })
        }
    };

    let mut config = ScenarioConfig::new(TopologySpec::new(topology, params), n, scenario);
    config.seed = e.get::<u64>("seed")?.expect("required").1;
    config.runs = e.checked::<usize>("runs", |r| r >= 1, "at least 1")?.unwrap_or(DEFAULT_RUNS);
    if let Some(t) = e.get::<usize>("transient")? {
        config.transient_steps = t.1;
    }
    if let Some(f) = e.get::<usize>("forced_failures")? {
        config.initial_forced_failures = f.1;
    }
    config.protocol.threshold_degree = e.get::<usize>("threshold")?.map(|t| t.1);
    if let Some(w) = e.checked::<f64>("wait_min", |w| w >= 0.0 && w.is_finite(), "finite and non-negative")? {
        config.protocol.wait_min = w;
    }
    if let Some(w) = e.checked::<f64>("wait_max", |w| w > 0.0 && w.is_finite(), "finite and positive")? {
        config.protocol.wait_max = w;
    }
    config.latency = e
        .checked::<f64>("latency", |l| l > 0.0 && l.is_finite(), "finite and positive")?
        .unwrap_or(DEFAULT_LATENCY);
    config.event_cap = e
        .checked::<usize>("event_cap", |c| c >= 1, "at least 1")?
        .unwrap_or(DEFAULT_EVENT_CAP);

    let mode = e.get::<Mode>("mode")?.map(|m| m.1).unwrap_or(Mode::Both);
    config.protocol.enabled = mode != Mode::Off;
    let snapshot_every = e.checked::<u64>("snapshot_every", |s| s >= 1, "at least 1")?;
    let trace = e.get::<bool>("trace")?.map(|t| t.1).unwrap_or(false);
    let output_dir = e
        .raw("output_dir")
        .map(|(_, v)| PathBuf::from(v))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR));

    config.validate(registry).map_err(|err| match err {
        SimError::Topology(t) => ConfigError::Invalid(t.to_string()),
        other => ConfigError::Invalid(other.to_string()),
    })?;

    Ok(RunManifest {
        config,
        mode,
        output_dir,
        snapshot_every,
        trace,
    })
}

/// Canonical text of a manifest; [`parse_config`] reads it back unchanged.
pub fn render(m: &RunManifest) -> String {
    let c = &m.config;
    let mut s = String::new();
    let mut kv = |k: &str, v: &dyn fmt::Display| {
        let _ = writeln!(s, "{k}={v}");
    };
    kv("topology", &c.topology.name);
    kv("N", &c.num_nodes);
    let p = &c.topology.params;
    if let Some(d) = p.degree {
        kv("degree", &d);
    }
    if let Some(x) = p.clusters {
        kv("clusters", &x);
    }
    if let Some(x) = p.gamma {
        kv("gamma", &x);
    }
    if let Some(x) = p.omega {
        kv("omega", &x);
    }
    if let Some(x) = p.edge_prob {
        kv("p", &x);
    }
    match c.scenario {
        Scenario::StableChurn { steps } => {
            kv("scenario", &"stable");
            kv("steps", &steps);
        }
        Scenario::ProgressiveFailure => kv("scenario", &"progressive"),
    }
    kv("seed", &c.seed);
    kv("runs", &c.runs);
    kv("transient", &c.transient_steps);
    kv("forced_failures", &c.initial_forced_failures);
    kv("mode", &m.mode);
    if let Some(t) = c.protocol.threshold_degree {
        kv("threshold", &t);
    }
    kv("wait_min", &c.protocol.wait_min);
    kv("wait_max", &c.protocol.wait_max);
    kv("latency", &c.latency);
    kv("event_cap", &c.event_cap);
    if let Some(x) = m.snapshot_every {
        kv("snapshot_every", &x);
    }
    kv("trace", &m.trace);
    kv("output_dir", &m.output_dir.display());
    s
}
