//! Default numerics per scenario.

use divlab::mc::{Start, Window};
use divlab::pde::{GreenProbeSpec, MassProbeSpec};
use divlab::scenarios::{Conclusion, Scenario};

use crate::config::{ClassifyConfig, OccupationConfig, RunConfig, SimulateConfig, Task};

/// Seed of the criterion sampling directions unless overridden.
pub const SAMPLING_SEED: u64 = 0x5eed;

fn unit(d: usize) -> Vec<f64> {
    let mut x = vec![0.0; d];
    x[0] = 1.0;
    x
}

/// Tasks that can confirm or refute the scenario's expected conclusions.
pub fn relevant_tasks(sc: &Scenario, has_occupation: bool) -> Vec<Task> {
    let mut tasks = vec![Task::Classify];
    let expects = |c: Conclusion| sc.expected.iter().any(|e| e.conclusion == c);
    let expects_yes = |c: Conclusion| sc.expected.iter().any(|e| e.conclusion == c && e.value == "yes");
    if expects(Conclusion::Conservative) {
        tasks.extend([Task::SemigroupProbe, Task::Simulate]);
    }
    if expects(Conclusion::Dichotomy) {
        tasks.push(Task::GreenProbe);
    }
    if has_occupation && (expects_yes(Conclusion::MuInvariant) || expects_yes(Conclusion::MuUniqueInvariant)) {
        tasks.push(Task::Occupation);
    }
    tasks.sort();
    tasks
}

pub fn mass_probe(sc: &Scenario) -> MassProbeSpec {
    let d = sc.params.dim;
    let mut spec = MassProbeSpec::new(d);
    spec.h = if d == 2 { 0.25 } else { 0.5 };
    match sc.id {
        // the diffusion vanishes at the origin, so probe one unit away
        "davies" => {
            spec.radii = if d == 2 { vec![8.0, 16.0, 32.0] } else { vec![8.0, 16.0, 24.0] };
            spec.h = if d == 2 { 0.5 } else { 1.0 };
            spec.x0 = unit(d);
        }
        "example-4.3" => spec.radii = vec![2.0, 3.0, 4.0, 5.0],
        _ => {}
    }
    spec.radii.retain(|r| *r <= sc.r_max);
    spec
}

pub fn green_probe(sc: &Scenario) -> GreenProbeSpec {
    let d = sc.params.dim;
    let mut spec = GreenProbeSpec::new(d);
    if d == 3 {
        spec.max_cells = 64;
    }
    // box corners must stay inside the scenario's floating-point range
    let limit = (2.0 * sc.r_max / ((d as f64).sqrt() * spec.h)).floor() as usize;
    spec.max_cells = spec.max_cells.min(limit - limit % 2);
    spec
}

pub fn simulate(sc: &Scenario) -> SimulateConfig {
    let d = sc.params.dim;
    let mut cfg =
        SimulateConfig { n_paths: 2000, dt: 1e-3, horizon: 1.0, ladder: vec![4.0, 6.0, 8.0], x0: vec![0.0; d], taming: sc.taming };
    match sc.id {
        "davies" => {
            cfg.ladder = vec![8.0, 16.0, 32.0];
            cfg.x0 = unit(d);
        }
        "example-4.3" => cfg.ladder = vec![4.0, 8.0, 16.0],
        // the bump centres sit on the first axis; start outside every bump
        "bump-chain-gradient" | "bump-chain-antisymmetric" => cfg.x0[1] = 0.75,
        _ => {}
    }
    cfg.ladder.retain(|r| *r <= sc.r_max);
    cfg
}

/// Generic occupation settings; window and start law need scenario knowledge.
pub fn occupation_template(sc: &Scenario) -> OccupationConfig {
    let d = sc.params.dim;
    OccupationConfig {
        n_paths: 1000,
        dt: 0.01,
        horizon: 10.0,
        burn_in: 100,
        record_every: 10,
        window: Window::cube(d, 2.0),
        bins: 8,
        start: Start::Point(vec![0.0; d]),
        taming: sc.taming,
        tolerance: 0.1,
    }
}

/// Occupation settings for scenarios whose reference density is known to be reachable.
pub fn occupation(sc: &Scenario) -> Option<OccupationConfig> {
    let d = sc.params.dim;
    let base = occupation_template(sc);
    let uniform = |half: f64| Start::Uniform { lo: vec![-half; d], hi: vec![half; d] };
    let cfg = match sc.id {
        "gaussian-ou" => OccupationConfig {
            n_paths: if d == 2 { 200 } else { 400 },
            horizon: 125.0,
            burn_in: 500,
            record_every: 20,
            window: Window::cube(d, 3.0),
            bins: if d == 2 { 12 } else { 6 },
            tolerance: 0.05,
            ..base
        },
        // Lebesgue measure: a uniform start far beyond the window stays locally stationary
        "flat-bm" | "bump-chain-antisymmetric" => OccupationConfig {
            n_paths: if d == 2 { 20_000 } else { 40_000 },
            dt: if sc.taming { 1e-3 } else { 0.01 },
            horizon: 1.0,
            burn_in: if sc.taming { 500 } else { 50 },
            record_every: if sc.taming { 50 } else { 5 },
            window: Window::cube(d, 1.5),
            bins: if d == 2 { 6 } else { 3 },
            start: uniform(5.0),
            ..base
        },
        "bump-chain-gradient" => {
            // three bumps inside the window, uniform start well beyond it
            let mut lo = vec![-1.5; d];
            let mut hi = vec![1.5; d];
            lo[0] = 0.5;
            hi[0] = 3.5;
            let mut slo = vec![-5.5; d];
            let mut shi = vec![5.5; d];
            slo[0] = -3.5;
            shi[0] = 7.5;
            OccupationConfig {
                n_paths: if d == 2 { 20_000 } else { 40_000 },
                dt: 1e-3,
                horizon: 4.0,
                burn_in: 1000,
                record_every: 100,
                window: Window { lo, hi },
                bins: if d == 2 { 12 } else { 6 },
                start: Start::Uniform { lo: slo, hi: shi },
                ..base
            }
        }
        "gradient-drift" if sc.params.preset.as_deref().unwrap_or("bounded") == "bounded" => {
            // one period of the potential, with a start box four periods wide
            let pi = std::f64::consts::PI;
            OccupationConfig {
                n_paths: if d == 2 { 20_000 } else { 120_000 },
                dt: 0.01,
                horizon: if d == 2 { 10.0 } else { 6.0 },
                burn_in: if d == 2 { 500 } else { 300 },
                record_every: 10,
                window: Window::cube(d, pi),
                bins: if d == 2 { 8 } else { 4 },
                start: uniform(4.0 * pi),
                ..base
            }
        }
        "gradient-drift" => OccupationConfig {
            n_paths: if d == 2 { 200 } else { 400 },
            horizon: 125.0,
            burn_in: 500,
            record_every: 20,
            window: Window::cube(d, 3.0),
            bins: if d == 2 { 12 } else { 6 },
            tolerance: 0.05,
            ..base
        },
        _ => return None,
    };
    Some(cfg)
}

pub fn defaults(sc: &Scenario, seed: u64) -> RunConfig {
    let occupation = occupation(sc);
    RunConfig {
        scenario: sc.id.to_string(),
        params: sc.params.clone(),
        tasks: relevant_tasks(sc, occupation.is_some()),
        seed,
        out: None,
        classify: ClassifyConfig { r_max: sc.r_max, directions: 512, sampling_seed: SAMPLING_SEED },
        semigroup_probe: mass_probe(sc),
        green_probe: green_probe(sc),
        simulate: simulate(sc),
        occupation,
    }
}
