use std::fs;
use std::path::PathBuf;
use std::process::Command;

use divlab::pde::{MassCurve, MassVerdict};
use divlab::scenarios::{build, Conclusion, Params};
use divlab_cli::config::parse_config_with;
use divlab_cli::run::{agreement_matrix, exit_status, TaskBlock, TaskResults};
use divlab_cli::{parse_config, run, Agreement, ConfigError, Task};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_divlab"))
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("divlab-cli-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    dir
}

#[test]
fn minimal_config_takes_presets() {
    let cfg = parse_config("scenario = flat-bm\nseed = 4\n").unwrap();
    assert_eq!(cfg.scenario, "flat-bm");
    assert_eq!(cfg.params.dim, 2);
    assert_eq!(cfg.seed, 4);
    assert_eq!(cfg.tasks[0], Task::Classify);
    assert!(cfg.tasks.windows(2).all(|w| w[0] < w[1]));
    assert!(cfg.occupation.is_some());
}

#[test]
fn sections_override_presets() {
    let text = "# probe only\nscenario = davies\nseed = 1\ntasks = semigroup-probe, classify, classify\n\n\
                [semigroup-probe]\nradii = 4, 8, 12   # short\nh = 1.0\n";
    let cfg = parse_config(text).unwrap();
    assert_eq!(cfg.tasks, vec![Task::Classify, Task::SemigroupProbe]);
    assert_eq!(cfg.semigroup_probe.radii, vec![4.0, 8.0, 12.0]);
    assert_eq!(cfg.semigroup_probe.h, 1.0);
    let cfg = parse_config_with(text, &[("run.dim", "3".into())]).unwrap();
    assert_eq!(cfg.params.dim, 3);
    assert_eq!(cfg.semigroup_probe.x0.len(), 3);
}

#[test]
fn missing_seed_is_named() {
    let err = parse_config("scenario = flat-bm\n").unwrap_err();
    assert!(matches!(&err, ConfigError::Schema { key, .. } if key.contains("seed")), "{err}");
    assert!(err.to_string().contains("seed"));
}

#[test]
fn unknown_scenario_lists_known_ids() {
    let err = parse_config("scenario = nope\nseed = 1\n").unwrap_err().to_string();
    for id in divlab::scenarios::IDS {
        assert!(err.contains(id), "{err}");
    }
}

#[test]
fn unknown_keys_and_sections_are_rejected() {
    let err = parse_config("scenario = flat-bm\nseed = 1\n[simulate]\nnpaths = 5\n").unwrap_err();
    assert!(matches!(&err, ConfigError::Schema { key, .. } if key == "simulate.npaths"), "{err}");
    let err = parse_config("scenario = flat-bm\nseed = 1\n\n[tuning]\n").unwrap_err();
    assert!(matches!(err, ConfigError::Parse { line: 4, .. }), "{err}");
    let err = parse_config("scenario = flat-bm\nseed 1\n").unwrap_err();
    assert!(matches!(err, ConfigError::Parse { line: 2, .. }), "{err}");
    let err = parse_config("scenario = flat-bm\nseed = 1\nseed = 2\n").unwrap_err();
    assert!(matches!(err, ConfigError::Parse { line: 3, .. }), "{err}");
}

#[test]
fn values_are_validated() {
    for bad in [
        "[simulate]\nx0 = 1, 2, 3\n",
        "[simulate]\ndt = -1\n",
        "[semigroup-probe]\nradii = 8, 4, 16\n",
        "tasks = classify, sweep\n",
        "[green-probe]\nalphas = 1, x\n",
    ] {
        let text = format!("scenario = flat-bm\nseed = 1\n{bad}");
        assert!(parse_config(&text).is_err(), "accepted {bad:?}");
    }
}

#[test]
fn flat_classification_matches_expectations() {
    let cfg = parse_config("scenario = flat-bm\nseed = 2\ntasks = classify\n").unwrap();
    let out = run(&cfg).unwrap();
    let r = &out.report;
    assert_eq!(r.exit_status, 0);
    assert_eq!(r.structure.violations, 0);
    assert!(!r.agreement.is_empty());
    assert!(r.agreement.iter().all(|row| row.status == Agreement::Agree));
    let c = &r.tasks.classify.as_ref().unwrap().ok().unwrap().classification;
    assert_eq!(c.conservative.value.as_str(), "yes");
}

#[test]
fn davies_mass_probe_is_not_conservative() {
    let cfg = parse_config("scenario = davies\nseed = 2\ntasks = semigroup-probe\n").unwrap();
    let out = run(&cfg).unwrap();
    let curve = out.report.tasks.semigroup_probe.as_ref().unwrap().ok().unwrap();
    assert_eq!(curve.verdict, MassVerdict::NonConservative);
    assert!(curve.masses.iter().all(|m| *m < 0.999));
    assert_eq!(out.report.exit_status, 0);
}

fn mass_block(verdict: MassVerdict) -> TaskBlock<MassCurve> {
    TaskBlock::Ok {
        result: MassCurve {
            radii: vec![4.0, 6.0, 8.0],
            masses: vec![0.5, 0.5, 0.5],
            t: 1.0,
            h: 0.25,
            x0: vec![0.0, 0.0],
            fit_a: None,
            fit_b: None,
            verdict,
            max_excursion: 0.0,
            notes: vec![],
        },
    }
}

#[test]
fn exit_status_precedence() {
    let sc = build("flat-bm", &Params::dim(2)).unwrap();
    let status = |tasks: &TaskResults| exit_status(tasks, &agreement_matrix(&sc, tasks));
    let mut tasks = TaskResults { semigroup_probe: Some(mass_block(MassVerdict::Conservative)), ..Default::default() };
    assert_eq!(status(&tasks), 0);
    let rows = agreement_matrix(&sc, &tasks);
    assert_eq!(rows.len(), sc.expected.len());
    for row in &rows {
        let observed = row.conclusion == Conclusion::Conservative;
        assert_eq!(row.status == Agreement::NotObserved, !observed, "{row:?}");
    }
    tasks.semigroup_probe = Some(mass_block(MassVerdict::Inconclusive));
    assert_eq!(status(&tasks), 3);
    tasks.semigroup_probe = Some(mass_block(MassVerdict::NonConservative));
    assert_eq!(status(&tasks), 2);
    tasks.green_probe = Some(TaskBlock::Error { error: "failed".into() });
    assert_eq!(status(&tasks), 1);
}

#[test]
fn reports_are_byte_identical_across_runs() {
    let dirs = [scratch("det-a"), scratch("det-b")];
    for dir in &dirs {
        let st = bin()
            .args(["simulate", "--scenario", "gaussian-ou", "--seed", "11", "--out"])
            .arg(dir)
            .status()
            .unwrap();
        assert_eq!(st.code(), Some(0));
    }
    for file in ["report.json", "exit_times.csv", "exit_fractions.csv"] {
        let a = fs::read(dirs[0].join(file)).unwrap();
        let b = fs::read(dirs[1].join(file)).unwrap();
        assert!(!a.is_empty() && a == b, "{file} differs");
    }
    let report: serde_json::Value = serde_json::from_slice(&fs::read(dirs[0].join("report.json")).unwrap()).unwrap();
    assert_eq!(report["config"]["seed"], 11);
    assert_eq!(report["exit_status"], 0);
    assert!(dirs[0].join("timings.json").exists());
    dirs.iter().for_each(|d| fs::remove_dir_all(d).unwrap());
}

#[test]
fn binary_exit_codes() {
    let out = bin().args(["classify", "--scenario", "nope", "--seed", "1"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("flat-bm"));
    let out = bin().args(["classify", "--scenario", "flat-bm"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed"));

    let dir = scratch("codes");
    fs::create_dir_all(&dir).unwrap();
    let cfg = dir.join("short.cfg");
    fs::write(&cfg, "scenario = flat-bm\nseed = 1\ntasks = semigroup-probe\n[semigroup-probe]\nradii = 1, 1.5, 2\n").unwrap();
    let out = bin().arg("run").arg("--config").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stdout));
    let out = bin().args(["classify", "--seed", "5", "--dim", "3", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("flat-bm d=3"));
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn scenario_listing_is_json() {
    let out = bin().arg("scenarios").output().unwrap();
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v.as_array().unwrap().len(), divlab::scenarios::IDS.len());
}

#[test]
fn example_in_three_dimensions_agrees_with_every_probe() {
    let cfg = parse_config("scenario = example-4.3\ndim = 3\nseed = 9\n").unwrap();
    let out = run(&cfg).unwrap();
    let r = &out.report;
    assert_eq!(r.exit_status, 0);
    let value = |c: Conclusion, source: &str| {
        let row = r.agreement.iter().find(|row| row.conclusion == c).unwrap();
        assert_eq!(row.status, Agreement::Agree, "{row:?}");
        row.observations.iter().find(|o| o.source == source).map(|o| o.value.clone())
    };
    assert_eq!(value(Conclusion::Dichotomy, "green-probe").as_deref(), Some("transient"));
    assert_eq!(value(Conclusion::Conservative, "semigroup-probe").as_deref(), Some("no"));
    assert_eq!(value(Conclusion::Conservative, "simulate").as_deref(), Some("no"));
    assert_eq!(value(Conclusion::MuUniqueInvariant, "classifier").as_deref(), Some("no-invariant-exists"));
}
