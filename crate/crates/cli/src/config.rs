//! Run configuration and its line-oriented text format.
//!
//! ```text
//! # comment
//! scenario = davies          # keys before any header belong to [run]
//! tasks = classify, semigroup-probe
//! seed = 7
//!
//! [semigroup-probe]
//! radii = 8, 16, 32
//! ```
//!
//! Lists are comma-separated. Every key not listed in [`KEYS`] is rejected.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use divlab::mc::{Start, Window};
use divlab::pde::{GreenProbeSpec, MassProbeSpec};
use divlab::scenarios::{build, Params, Scenario, ScenarioError};
use serde::Serialize;
use thiserror::Error;

use crate::presets;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {detail}")]
    Parse { line: usize, detail: String },
    #[error("{key}: {detail}")]
    Schema { key: String, detail: String },
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
}

fn schema(key: &str, detail: impl Into<String>) -> ConfigError {
    ConfigError::Schema { key: key.to_string(), detail: detail.into() }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Classify,
    SemigroupProbe,
    GreenProbe,
    Simulate,
    Occupation,
}

impl Task {
    pub const ALL: [Task; 5] = [Task::Classify, Task::SemigroupProbe, Task::GreenProbe, Task::Simulate, Task::Occupation];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Classify => "classify",
            Task::SemigroupProbe => "semigroup-probe",
            Task::GreenProbe => "green-probe",
            Task::Simulate => "simulate",
            Task::Occupation => "occupation",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.as_str() == s)
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassifyConfig {
    /// Largest shell radius; defaults to the scenario's floating-point range.
    pub r_max: f64,
    pub directions: usize,
    pub sampling_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimulateConfig {
    pub n_paths: usize,
    pub dt: f64,
    pub horizon: f64,
    pub ladder: Vec<f64>,
    pub x0: Vec<f64>,
    pub taming: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OccupationConfig {
    pub n_paths: usize,
    pub dt: f64,
    pub horizon: f64,
    pub burn_in: usize,
    pub record_every: usize,
    pub window: Window,
    pub bins: usize,
    pub start: Start,
    pub taming: bool,
    /// Largest L1 distance to the reference counted as agreement.
    pub tolerance: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunConfig {
    pub scenario: String,
    pub params: Params,
    pub tasks: Vec<Task>,
    pub seed: u64,
    #[serde(skip)]
    pub out: Option<PathBuf>,
    pub classify: ClassifyConfig,
    pub semigroup_probe: MassProbeSpec,
    pub green_probe: GreenProbeSpec,
    pub simulate: SimulateConfig,
    /// Absent when the scenario has no reference density to compare with.
    pub occupation: Option<OccupationConfig>,
}

/// Accepted keys per section.
pub const KEYS: [(&str, &[&str]); 6] = [
    ("run", &["scenario", "dim", "p", "beta", "preset", "tasks", "seed", "out"]),
    ("classify", &["r_max", "directions", "sampling_seed"]),
    ("semigroup-probe", &["radii", "t", "dt", "h", "x0"]),
    ("green-probe", &["alphas", "h", "max_cells", "x0"]),
    ("simulate", &["n_paths", "dt", "horizon", "ladder", "x0", "taming"]),
    (
        "occupation",
        &[
            "n_paths",
            "dt",
            "horizon",
            "burn_in",
            "record_every",
            "window_lo",
            "window_hi",
            "bins",
            "start",
            "start_lo",
            "start_hi",
            "taming",
            "tolerance",
        ],
    ),
];

/// Raw `section.key -> (value, line)` entries.
#[derive(Debug, Default)]
struct Entries(BTreeMap<String, (String, usize)>);

impl Entries {
    fn take(&mut self, key: &str) -> Option<(String, usize)> {
        self.0.remove(key)
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>, ConfigError> {
        match self.take(key) {
            None => Ok(None),
            Some((v, _)) => v.parse().map(Some).map_err(|_| schema(key, format!("cannot parse '{v}'"))),
        }
    }

    fn list<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>, ConfigError> {
        match self.take(key) {
            None => Ok(None),
            Some((v, _)) => v
                .split(',')
                .map(|s| s.trim().parse().map_err(|_| schema(key, format!("cannot parse list item '{}'", s.trim()))))
                .collect::<Result<Vec<T>, _>>()
                .map(Some),
        }
    }
}

fn tokenize(text: &str) -> Result<Entries, ConfigError> {
    let mut entries = Entries::default();
    let mut section = "run".to_string();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| ConfigError::Parse { line: line_no, detail: format!("unterminated header '{line}'") })?
                .trim();
            if !KEYS.iter().any(|(s, _)| *s == name) {
                let known: Vec<&str> = KEYS.iter().map(|(s, _)| *s).collect();
                return Err(ConfigError::Parse {
                    line: line_no,
                    detail: format!("unknown section [{name}]; known: {}", known.join(", ")),
                });
            }
            section = name.to_string();
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| ConfigError::Parse { line: line_no, detail: format!("expected 'key = value', got '{line}'") })?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() || v.is_empty() {
            return Err(ConfigError::Parse { line: line_no, detail: "empty key or value".into() });
        }
        let allowed = KEYS.iter().find(|(s, _)| *s == section).map(|(_, keys)| *keys).unwrap_or(&[]);
        let path = format!("{section}.{k}");
        if !allowed.contains(&k) {
            return Err(schema(&path, format!("unknown key (line {line_no}); allowed: {}", allowed.join(", "))));
        }
        if entries.0.insert(path.clone(), (v.to_string(), line_no)).is_some() {
            return Err(ConfigError::Parse { line: line_no, detail: format!("duplicate key {path}") });
        }
    }
    Ok(entries)
}

fn check_dim(key: &str, v: &[f64], d: usize) -> Result<(), ConfigError> {
    if v.len() != d {
        return Err(schema(key, format!("expected {d} coordinates, got {}", v.len())));
    }
    Ok(())
}

fn positive(key: &str, v: f64) -> Result<(), ConfigError> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(schema(key, format!("must be positive, got {v}")));
    }
    Ok(())
}

/// Parses and validates a configuration; missing numerics come from the scenario presets.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    parse_config_with(text, &[])
}

/// As [`parse_config`], with `section.key` entries replacing those of the text.
pub fn parse_config_with(text: &str, overrides: &[(&str, String)]) -> Result<RunConfig, ConfigError> {
    let mut e = tokenize(text)?;
    for (k, v) in overrides {
        e.0.insert(k.to_string(), (v.clone(), 0));
    }
    let scenario = e.take("run.scenario").map(|v| v.0).ok_or_else(|| schema("run.scenario", "missing"))?;
    let seed: u64 = e.parse("run.seed")?.ok_or_else(|| schema("run.seed", "missing; runs need an explicit seed"))?;
    let mut params = Params::dim(e.parse("run.dim")?.unwrap_or(2));
    params.p = e.parse("run.p")?;
    params.beta = e.parse("run.beta")?;
    params.preset = e.take("run.preset").map(|v| v.0);
    let sc = build(&scenario, &params)?;
    let mut cfg = presets::defaults(&sc, seed);
    if let Some(list) = e.list::<String>("run.tasks")? {
        let mut tasks = list
            .iter()
            .map(|t| {
                Task::parse(t).ok_or_else(|| {
                    let known: Vec<&str> = Task::ALL.iter().map(|t| t.as_str()).collect();
                    schema("run.tasks", format!("unknown task '{t}'; known: {}", known.join(", ")))
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        tasks.sort();
        tasks.dedup();
        cfg.tasks = tasks;
    }
    cfg.out = e.take("run.out").map(|v| PathBuf::from(v.0));
    apply_overrides(&mut cfg, &mut e, &sc)?;
    validate(&cfg, &sc)?;
    Ok(cfg)
}

fn apply_overrides(cfg: &mut RunConfig, e: &mut Entries, sc: &Scenario) -> Result<(), ConfigError> {
    let d = sc.params.dim;
    if let Some(v) = e.parse("classify.r_max")? {
        cfg.classify.r_max = v;
    }
    if let Some(v) = e.parse("classify.directions")? {
        cfg.classify.directions = v;
    }
    if let Some(v) = e.parse("classify.sampling_seed")? {
        cfg.classify.sampling_seed = v;
    }

    let m = &mut cfg.semigroup_probe;
    if let Some(v) = e.list("semigroup-probe.radii")? {
        m.radii = v;
    }
    if let Some(v) = e.parse("semigroup-probe.t")? {
        m.t = v;
    }
    if let Some(v) = e.parse("semigroup-probe.dt")? {
        m.dt = v;
    }
    if let Some(v) = e.parse("semigroup-probe.h")? {
        m.h = v;
    }
    if let Some(v) = e.list("semigroup-probe.x0")? {
        m.x0 = v;
    }

    let g = &mut cfg.green_probe;
    if let Some(v) = e.list("green-probe.alphas")? {
        g.alphas = v;
    }
    if let Some(v) = e.parse("green-probe.h")? {
        g.h = v;
    }
    if let Some(v) = e.parse("green-probe.max_cells")? {
        g.max_cells = v;
    }
    if let Some(v) = e.list("green-probe.x0")? {
        g.x0 = v;
    }

    let s = &mut cfg.simulate;
    if let Some(v) = e.parse("simulate.n_paths")? {
        s.n_paths = v;
    }
    if let Some(v) = e.parse("simulate.dt")? {
        s.dt = v;
    }
    if let Some(v) = e.parse("simulate.horizon")? {
        s.horizon = v;
    }
    if let Some(v) = e.list("simulate.ladder")? {
        s.ladder = v;
    }
    if let Some(v) = e.list("simulate.x0")? {
        s.x0 = v;
    }
    if let Some(v) = e.parse("simulate.taming")? {
        s.taming = v;
    }

    let occ_keys: Vec<String> = e.0.keys().filter(|k| k.starts_with("occupation.")).cloned().collect();
    if occ_keys.is_empty() {
        return Ok(());
    }
    let o = match cfg.occupation.as_mut() {
        Some(o) => o,
        None => {
            // without a preset the window and start law must be given explicitly
            for k in ["occupation.window_lo", "occupation.window_hi", "occupation.start"] {
                if !e.0.contains_key(k) {
                    return Err(schema(k, format!("required: scenario '{}' has no occupation preset", sc.id)));
                }
            }
            cfg.occupation = Some(presets::occupation_template(sc));
            cfg.occupation.as_mut().unwrap()
        }
    };
    if let Some(v) = e.parse("occupation.n_paths")? {
        o.n_paths = v;
    }
    if let Some(v) = e.parse("occupation.dt")? {
        o.dt = v;
    }
    if let Some(v) = e.parse("occupation.horizon")? {
        o.horizon = v;
    }
    if let Some(v) = e.parse("occupation.burn_in")? {
        o.burn_in = v;
    }
    if let Some(v) = e.parse("occupation.record_every")? {
        o.record_every = v;
    }
    if let Some(v) = e.parse("occupation.bins")? {
        o.bins = v;
    }
    if let Some(v) = e.parse("occupation.taming")? {
        o.taming = v;
    }
    if let Some(v) = e.parse("occupation.tolerance")? {
        o.tolerance = v;
    }
    let lo: Option<Vec<f64>> = e.list("occupation.window_lo")?;
    let hi: Option<Vec<f64>> = e.list("occupation.window_hi")?;
    if lo.is_some() || hi.is_some() {
        let lo = lo.unwrap_or_else(|| o.window.lo.clone());
        let hi = hi.unwrap_or_else(|| o.window.hi.clone());
        check_dim("occupation.window_lo", &lo, d)?;
        check_dim("occupation.window_hi", &hi, d)?;
        o.window = Window::new(lo, hi).map_err(|err| schema("occupation.window_lo", err.to_string()))?;
    }
    let start_lo: Option<Vec<f64>> = e.list("occupation.start_lo")?;
    let start_hi: Option<Vec<f64>> = e.list("occupation.start_hi")?;
    if let Some((kind, _)) = e.take("occupation.start") {
        o.start = match kind.as_str() {
            "point" => Start::Point(start_lo.clone().unwrap_or_else(|| vec![0.0; d])),
            "uniform" => {
                let lo = start_lo.clone().ok_or_else(|| schema("occupation.start_lo", "required for a uniform start"))?;
                let hi = start_hi.clone().ok_or_else(|| schema("occupation.start_hi", "required for a uniform start"))?;
                Start::Uniform { lo, hi }
            }
            other => return Err(schema("occupation.start", format!("expected 'point' or 'uniform', got '{other}'"))),
        };
    } else if start_lo.is_some() || start_hi.is_some() {
        return Err(schema("occupation.start", "required when start_lo or start_hi is set"));
    }
    Ok(())
}

fn increasing(key: &str, v: &[f64]) -> Result<(), ConfigError> {
    if v.is_empty() || v.iter().any(|r| !(*r > 0.0 && r.is_finite())) || v.windows(2).any(|w| w[1] <= w[0]) {
        return Err(schema(key, "needs positive, strictly increasing values"));
    }
    Ok(())
}

fn validate(cfg: &RunConfig, sc: &Scenario) -> Result<(), ConfigError> {
    let d = sc.params.dim;
    positive("classify.r_max", cfg.classify.r_max)?;
    if cfg.classify.directions == 0 {
        return Err(schema("classify.directions", "must be positive"));
    }
    let m = &cfg.semigroup_probe;
    check_dim("semigroup-probe.x0", &m.x0, d)?;
    positive("semigroup-probe.h", m.h)?;
    positive("semigroup-probe.dt", m.dt)?;
    positive("semigroup-probe.t", m.t)?;
    increasing("semigroup-probe.radii", &m.radii)?;
    let g = &cfg.green_probe;
    check_dim("green-probe.x0", &g.x0, d)?;
    positive("green-probe.h", g.h)?;
    let s = &cfg.simulate;
    check_dim("simulate.x0", &s.x0, d)?;
    positive("simulate.dt", s.dt)?;
    positive("simulate.horizon", s.horizon)?;
    increasing("simulate.ladder", &s.ladder)?;
    if s.n_paths == 0 {
        return Err(schema("simulate.n_paths", "must be positive"));
    }
    if let Some(o) = &cfg.occupation {
        positive("occupation.dt", o.dt)?;
        positive("occupation.horizon", o.horizon)?;
        positive("occupation.tolerance", o.tolerance)?;
        if o.record_every == 0 || o.bins == 0 || o.n_paths == 0 {
            return Err(schema("occupation", "n_paths, record_every and bins must be positive"));
        }
        let lo = match &o.start {
            Start::Point(x) => x,
            Start::Uniform { lo, .. } => lo,
        };
        check_dim("occupation.start_lo", lo, d)?;
    }
    if cfg.tasks.contains(&Task::Occupation) && cfg.occupation.is_none() {
        return Err(schema(
            "occupation",
            format!("scenario '{}' has no occupation preset; give window_lo, window_hi and start", sc.id),
        ));
    }
    Ok(())
}
