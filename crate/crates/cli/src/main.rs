use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use divlab::scenarios::{build, list, Params, IDS};
use divlab_cli::config::parse_config_with;
use divlab_cli::presets;
use divlab_cli::report::{to_json, write_outputs};
use divlab_cli::run::{run, Agreement, RunOutcome};
use divlab_cli::Task;

#[derive(Parser)]
#[command(name = "divlab", version, about = "Criteria, semigroup probes and simulations for divergence-form diffusions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Scenario id, when no configuration file is given.
    #[arg(long, global = true)]
    scenario: Option<String>,
    /// Output directory for the report and curve files.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Master seed; overrides the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Dimension; overrides the configuration.
    #[arg(long, global = true)]
    dim: Option<usize>,
}

#[derive(Subcommand, Clone, Copy, PartialEq)]
enum Command {
    /// Evaluate the criteria and classify.
    Classify,
    /// Semigroup mass probe and resolvent probe.
    Probe,
    /// Exit times and explosion signature from simulated paths.
    Simulate,
    /// Occupation histogram against the density.
    Occupation,
    /// List the scenario catalog.
    Scenarios,
    /// Run the tasks listed in the configuration.
    Run,
    /// Run every catalog scenario with its default tasks.
    RunAll,
}

fn config_text(cli: &Cli) -> Result<String, String> {
    match (&cli.config, &cli.scenario) {
        (Some(p), _) => fs::read_to_string(p).map_err(|e| format!("cannot read {}: {e}", p.display())),
        (None, Some(id)) => Ok(format!("scenario = {id}\n")),
        (None, None) => Err("give --config PATH or --scenario ID".into()),
    }
}

fn print_outcome(label: &str, o: &RunOutcome, seconds: f64) {
    let r = &o.report;
    for row in &r.agreement {
        let obs: Vec<String> = row.observations.iter().map(|o| format!("{}={}", o.source, o.value)).collect();
        println!(
            "{label}  {:<24} expected {:<20} {:<13} [{}]  ({})",
            row.conclusion.as_str(),
            row.expected,
            row.status.as_str(),
            obs.join(", "),
            row.anchor
        );
    }
    println!("{label}  exit status {} after {seconds:.1} s", r.exit_status);
}

fn write(o: &RunOutcome, dir: Option<&Path>) -> Result<(), String> {
    if let Some(dir) = dir {
        write_outputs(o, dir).map_err(|e| format!("cannot write to {}: {e}", dir.display()))?;
    }
    Ok(())
}

fn single(cli: &Cli) -> Result<i32, String> {
    let text = config_text(cli)?;
    let mut overrides = vec![];
    if let Some(s) = cli.seed {
        overrides.push(("run.seed", s.to_string()));
    }
    if let Some(d) = cli.dim {
        overrides.push(("run.dim", d.to_string()));
    }
    if cli.config.is_some() && cli.scenario.is_some() {
        overrides.push(("run.scenario", cli.scenario.clone().unwrap()));
    }
    let tasks = match cli.command {
        Command::Classify => Some("classify"),
        Command::Probe => Some("semigroup-probe, green-probe"),
        Command::Simulate => Some("simulate"),
        Command::Occupation => Some("occupation"),
        _ => None,
    };
    if let Some(t) = tasks {
        overrides.push(("run.tasks", t.to_string()));
    }
    let cfg = parse_config_with(&text, &overrides).map_err(|e| e.to_string())?;
    let t0 = Instant::now();
    let outcome = run(&cfg)?;
    let dir = cli.out.clone().or_else(|| cfg.out.clone());
    write(&outcome, dir.as_deref())?;
    print_outcome(&format!("{} d={}", cfg.scenario, cfg.params.dim), &outcome, t0.elapsed().as_secs_f64());
    Ok(outcome.report.exit_status)
}

fn run_all(cli: &Cli) -> Result<i32, String> {
    let seed = cli.seed.ok_or("run-all needs --seed")?;
    let dims = cli.dim.map_or(vec![2, 3], |d| vec![d]);
    let mut worst = 0;
    let mut summary = String::from("scenario,dim,tasks,rows,agree,contradiction,inconclusive,exit_status,seconds\n");
    for id in IDS {
        for &d in &dims {
            let sc = build(id, &Params::dim(d)).map_err(|e| e.to_string())?;
            let cfg = presets::defaults(&sc, seed);
            let t0 = Instant::now();
            let outcome = run(&cfg)?;
            let secs = t0.elapsed().as_secs_f64();
            write(&outcome, cli.out.as_ref().map(|o| o.join(format!("{id}-d{d}"))).as_deref())?;
            print_outcome(&format!("{id} d={d}"), &outcome, secs);
            let rows = &outcome.report.agreement;
            let count = |a: Agreement| rows.iter().filter(|r| r.status == a).count();
            let tasks: Vec<&str> = cfg.tasks.iter().map(|t: &Task| t.as_str()).collect();
            summary.push_str(&format!(
                "{id},{d},{},{},{},{},{},{},{secs:.2}\n",
                tasks.join(" "),
                rows.len(),
                count(Agreement::Agree),
                count(Agreement::Contradiction),
                count(Agreement::Inconclusive),
                outcome.report.exit_status
            ));
            worst = combine(worst, outcome.report.exit_status);
        }
    }
    if let Some(dir) = &cli.out {
        fs::create_dir_all(dir).map_err(|e| e.to_string())?;
        fs::write(dir.join("summary.csv"), summary).map_err(|e| e.to_string())?;
    }
    println!("run-all exit status {worst}");
    Ok(worst)
}

/// Error beats contradiction beats inconclusive beats agreement.
fn combine(a: i32, b: i32) -> i32 {
    let rank = |s: i32| match s {
        1 => 3,
        2 => 2,
        3 => 1,
        _ => 0,
    };
    if rank(b) > rank(a) {
        b
    } else {
        a
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Scenarios => to_json(&list()).map(|s| {
            print!("{s}");
            0
        }).map_err(|e| e.to_string()),
        Command::RunAll => run_all(&cli),
        _ => single(&cli),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
