//! Task orchestration, agreement matrix and report assembly.

use std::collections::BTreeMap;
use std::time::Instant;

use divlab::coeff::CoefficientField;
use divlab::criteria::{classify, evaluate_all, Classification, CriteriaReport, SamplingSpec};
use divlab::mc::{
    density_compare, explosion_probe, occupation, simulate_ensemble, ExitStats, ExplosionReport, ExplosionVerdict,
    OccupationHistogram, SdeSpec,
};
use divlab::pde::{conservativeness_probe, green_probe, GreenCurve, GreenVerdict, MassCurve, MassVerdict};
use divlab::scenarios::{build, Conclusion, Scenario};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{RunConfig, Task};

/// Points sampled for the structural check of the coefficients.
pub const STRUCTURE_POINTS: usize = 1000;

#[derive(Clone, Debug, Serialize)]
pub struct StructureSummary {
    pub points: usize,
    pub radius: f64,
    pub violations: usize,
    pub first_violation: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ClassifyResult {
    pub criteria: CriteriaReport,
    pub classification: Classification,
}

#[derive(Clone, Debug, Serialize)]
pub struct SimulateResult {
    pub n_paths: usize,
    pub exit_times: Vec<ExitStats>,
    pub explosion: ExplosionReport,
}

#[derive(Clone, Debug, Serialize)]
pub struct OccupationResult {
    pub samples: usize,
    pub bins: usize,
    /// L1 distance to the window-normalized density `rho`.
    pub distance_to_rho: f64,
    /// L1 distance to the uniform density, as a discrimination baseline.
    pub distance_to_uniform: f64,
    pub tolerance: f64,
    pub matches: bool,
    #[serde(skip)]
    pub histogram: OccupationHistogram,
}

/// Either a result or the error that prevented it.
#[derive(Clone, Debug, Serialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum TaskBlock<T> {
    Ok { result: T },
    Error { error: String },
}

impl<T> TaskBlock<T> {
    fn from(r: Result<T, String>) -> Self {
        match r {
            Ok(result) => TaskBlock::Ok { result },
            Err(error) => TaskBlock::Error { error },
        }
    }

    pub fn ok(&self) -> Option<&T> {
        match self {
            TaskBlock::Ok { result } => Some(result),
            TaskBlock::Error { .. } => None,
        }
    }

    pub fn is_error(&self) -> bool {
        matches!(self, TaskBlock::Error { .. })
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct TaskResults {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classify: Option<TaskBlock<ClassifyResult>>,
    #[serde(rename = "semigroup-probe", skip_serializing_if = "Option::is_none")]
    pub semigroup_probe: Option<TaskBlock<MassCurve>>,
    #[serde(rename = "green-probe", skip_serializing_if = "Option::is_none")]
    pub green_probe: Option<TaskBlock<GreenCurve>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub simulate: Option<TaskBlock<SimulateResult>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub occupation: Option<TaskBlock<OccupationResult>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Agreement {
    Agree,
    Contradiction,
    Inconclusive,
    /// No requested task speaks to this conclusion.
    NotObserved,
}

impl Agreement {
    pub fn as_str(self) -> &'static str {
        match self {
            Agreement::Agree => "agree",
            Agreement::Contradiction => "contradiction",
            Agreement::Inconclusive => "inconclusive",
            Agreement::NotObserved => "not-observed",
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Observation {
    pub source: &'static str,
    pub value: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct AgreementRow {
    pub conclusion: Conclusion,
    pub expected: &'static str,
    pub anchor: &'static str,
    pub observations: Vec<Observation>,
    pub status: Agreement,
}

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub tool: BTreeMap<&'static str, &'static str>,
    pub config: RunConfig,
    pub structure: StructureSummary,
    pub tasks: TaskResults,
    pub agreement: Vec<AgreementRow>,
    pub exit_status: i32,
}

/// A report plus wall-clock timings, which are kept out of the report so
/// that equal configurations give byte-identical reports.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub report: Report,
    pub timings: BTreeMap<String, f64>,
}

/// Labels that carry no evidence either way.
fn is_silent(v: &str) -> bool {
    matches!(v, "unknown" | "inconclusive" | "error")
}

pub fn structure_summary(field: &CoefficientField, radius: f64, seed: u64) -> StructureSummary {
    let d = field.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = 0;
    let mut first = None;
    for _ in 0..STRUCTURE_POINTS {
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-radius..radius)).collect();
        if let Err(e) = field.check_structure(&x) {
            violations += 1;
            first.get_or_insert_with(|| e.to_string());
        }
    }
    StructureSummary { points: STRUCTURE_POINTS, radius, violations, first_violation: first }
}

fn run_classify(sc: &Scenario, cfg: &RunConfig) -> Result<ClassifyResult, String> {
    let mut spec = SamplingSpec::default().with_r_max(cfg.classify.r_max);
    spec.directions = cfg.classify.directions;
    spec.seed = cfg.classify.sampling_seed;
    let criteria = evaluate_all(&sc.field, &spec);
    let classification = classify(sc.params.dim, &criteria.verdicts, &criteria.mu_finite).map_err(|e| e.to_string())?;
    Ok(ClassifyResult { criteria, classification })
}

fn run_simulate(sc: &Scenario, cfg: &RunConfig) -> Result<SimulateResult, String> {
    let s = &cfg.simulate;
    let spec = SdeSpec::new(sc.field.clone(), s.x0.clone(), s.dt, s.horizon, cfg.seed).with_taming(s.taming);
    let ens = simulate_ensemble(&spec, s.n_paths, &s.ladder).map_err(|e| e.to_string())?;
    let explosion = explosion_probe(&ens, s.horizon).map_err(|e| e.to_string())?;
    let exit_times = (0..s.ladder.len()).map(|k| ens.exit_stats(k)).collect();
    Ok(SimulateResult { n_paths: s.n_paths, exit_times, explosion })
}

fn run_occupation(sc: &Scenario, cfg: &RunConfig) -> Result<OccupationResult, String> {
    let o = cfg.occupation.as_ref().ok_or("no occupation settings for this scenario")?;
    let spec = SdeSpec::new(sc.field.clone(), vec![0.0; sc.params.dim], o.dt, o.horizon, cfg.seed)
        .with_taming(o.taming)
        .with_start(o.start.clone())
        .with_recording(o.record_every);
    let ens = simulate_ensemble(&spec, o.n_paths, &[]).map_err(|e| e.to_string())?;
    let aborted = ens.aborted();
    if aborted * 20 > o.n_paths {
        return Err(format!("{aborted} of {} paths aborted", o.n_paths));
    }
    let histogram = occupation(&ens, &o.window, o.bins, o.burn_in).map_err(|e| e.to_string())?;
    let field = &sc.field;
    let distance_to_rho = density_compare(&histogram, |x| field.rho_raw(x)).map_err(|e| e.to_string())?;
    let distance_to_uniform = density_compare(&histogram, |_| 1.0).map_err(|e| e.to_string())?;
    Ok(OccupationResult {
        samples: histogram.samples,
        bins: o.bins,
        distance_to_rho,
        distance_to_uniform,
        tolerance: o.tolerance,
        matches: distance_to_rho <= o.tolerance,
        histogram,
    })
}

fn observations(c: Conclusion, tasks: &TaskResults) -> Vec<Observation> {
    let mut obs = vec![];
    let mut push = |source: &'static str, value: &str| obs.push(Observation { source, value: value.to_string() });
    if let Some(b) = &tasks.classify {
        push("classifier", b.ok().map_or("error", |r| c.observed(&r.classification)));
    }
    match c {
        Conclusion::Conservative => {
            if let Some(b) = &tasks.semigroup_probe {
                push(
                    "semigroup-probe",
                    b.ok().map_or("error", |m| match m.verdict {
                        MassVerdict::Conservative => "yes",
                        MassVerdict::NonConservative => "no",
                        MassVerdict::Inconclusive => "inconclusive",
                    }),
                );
            }
            if let Some(b) = &tasks.simulate {
                push(
                    "simulate",
                    b.ok().map_or("error", |s| match s.explosion.verdict {
                        ExplosionVerdict::ConservativeSignature => "yes",
                        ExplosionVerdict::ExplosionSignature => "no",
                        ExplosionVerdict::Inconclusive => "inconclusive",
                    }),
                );
            }
        }
        Conclusion::Dichotomy => {
            if let Some(b) = &tasks.green_probe {
                push(
                    "green-probe",
                    b.ok().map_or("error", |g| match g.verdict {
                        GreenVerdict::RecurrentSignature => "recurrent",
                        GreenVerdict::TransientSignature => "transient",
                        GreenVerdict::Inconclusive => "inconclusive",
                    }),
                );
            }
        }
        Conclusion::MuInvariant | Conclusion::MuUniqueInvariant => {
            // a mismatch may only mean slow mixing, so it is not counted against
            if let Some(b) = &tasks.occupation {
                push("occupation", b.ok().map_or("error", |o| if o.matches { "yes" } else { "inconclusive" }));
            }
        }
        Conclusion::MuUniqueInfinitesimal => {}
    }
    obs
}

/// One row per expected conclusion of the scenario.
pub fn agreement_matrix(sc: &Scenario, tasks: &TaskResults) -> Vec<AgreementRow> {
    sc.expected
        .iter()
        .map(|e| {
            let observations = observations(e.conclusion, tasks);
            let contradicts = observations.iter().any(|o| !is_silent(&o.value) && o.value != e.value);
            let agrees = observations.iter().any(|o| o.value == e.value);
            let status = if observations.is_empty() {
                Agreement::NotObserved
            } else if contradicts {
                Agreement::Contradiction
            } else if agrees {
                Agreement::Agree
            } else {
                Agreement::Inconclusive
            };
            AgreementRow { conclusion: e.conclusion, expected: e.value, anchor: e.anchor, observations, status }
        })
        .collect()
}

/// 1 on a task error, else 2 on a contradiction, else 3 if some expectation
/// is neither confirmed nor refuted, else 0.
pub fn exit_status(tasks: &TaskResults, rows: &[AgreementRow]) -> i32 {
    let errored = tasks.classify.as_ref().is_some_and(|b| b.is_error())
        || tasks.semigroup_probe.as_ref().is_some_and(|b| b.is_error())
        || tasks.green_probe.as_ref().is_some_and(|b| b.is_error())
        || tasks.simulate.as_ref().is_some_and(|b| b.is_error())
        || tasks.occupation.as_ref().is_some_and(|b| b.is_error());
    if errored {
        1
    } else if rows.iter().any(|r| r.status == Agreement::Contradiction) {
        2
    } else if rows.iter().any(|r| r.status == Agreement::Inconclusive) {
        3
    } else {
        0
    }
}

/// Runs the configured tasks in the fixed order classify, PDE probes, Monte Carlo.
pub fn run(cfg: &RunConfig) -> Result<RunOutcome, String> {
    let sc = build(&cfg.scenario, &cfg.params).map_err(|e| e.to_string())?;
    let mut timings = BTreeMap::new();
    let mut timed = |name: &str, f: &mut dyn FnMut()| {
        let t0 = Instant::now();
        f();
        timings.insert(name.to_string(), t0.elapsed().as_secs_f64());
    };
    let mut structure = None;
    timed("structure", &mut || structure = Some(structure_summary(&sc.field, sc.r_max.min(8.0), cfg.seed)));
    let mut tasks = TaskResults::default();
    for task in Task::ALL {
        if !cfg.tasks.contains(&task) {
            continue;
        }
        timed(task.as_str(), &mut || match task {
            Task::Classify => tasks.classify = Some(TaskBlock::from(run_classify(&sc, cfg))),
            Task::SemigroupProbe => {
                tasks.semigroup_probe = Some(TaskBlock::from(
                    conservativeness_probe(&sc.field, &cfg.semigroup_probe).map_err(|e| e.to_string()),
                ))
            }
            Task::GreenProbe => {
                tasks.green_probe =
                    Some(TaskBlock::from(green_probe(&sc.field, &cfg.green_probe).map_err(|e| e.to_string())))
            }
            Task::Simulate => tasks.simulate = Some(TaskBlock::from(run_simulate(&sc, cfg))),
            Task::Occupation => tasks.occupation = Some(TaskBlock::from(run_occupation(&sc, cfg))),
        });
    }
    let agreement = agreement_matrix(&sc, &tasks);
    let exit_status = exit_status(&tasks, &agreement);
    let tool = BTreeMap::from([("name", "divlab"), ("version", env!("CARGO_PKG_VERSION"))]);
    let report = Report { tool, config: cfg.clone(), structure: structure.unwrap(), tasks, agreement, exit_status };
    Ok(RunOutcome { report, timings })
}
