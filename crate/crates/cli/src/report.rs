//! Report and curve files.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use crate::run::RunOutcome;

/// Writes `report.json`, `timings.json` and one CSV per curve; returns the paths.
pub fn write_outputs(outcome: &RunOutcome, dir: &Path) -> io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = vec![];
    let mut put = |name: &str, body: String| -> io::Result<()> {
        let p = dir.join(name);
        fs::write(&p, body)?;
        written.push(p);
        Ok(())
    };
    let r = &outcome.report;
    put("report.json", to_json(r)?)?;
    put("timings.json", to_json(&outcome.timings)?)?;
    if let Some(m) = r.tasks.semigroup_probe.as_ref().and_then(|b| b.ok()) {
        put("mass_curve.csv", m.csv())?;
    }
    if let Some(g) = r.tasks.green_probe.as_ref().and_then(|b| b.ok()) {
        put("green_curve.csv", g.csv())?;
    }
    if let Some(s) = r.tasks.simulate.as_ref().and_then(|b| b.ok()) {
        put("exit_fractions.csv", s.explosion.csv())?;
        let mut t = String::from("radius,exited,censored,aborted,mean_exit_time,std_err\n");
        for e in &s.exit_times {
            t.push_str(&format!("{},{},{},{},{},{}\n", e.radius, e.exited, e.censored, e.aborted, e.mean, e.std_err));
        }
        put("exit_times.csv", t)?;
    }
    if let Some(o) = r.tasks.occupation.as_ref().and_then(|b| b.ok()) {
        put("occupation.csv", o.histogram.csv())?;
    }
    Ok(written)
}

pub fn to_json<T: serde::Serialize>(v: &T) -> io::Result<String> {
    let mut s = serde_json::to_string_pretty(v).map_err(io::Error::other)?;
    s.push('\n');
    Ok(s)
}
