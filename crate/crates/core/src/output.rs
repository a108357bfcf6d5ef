//! CSV and JSON writers for run artifacts.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dynamics::TrajectorySample;
use crate::error::Result;
use crate::experiment::{ExperimentConfig, RunOutcome};
use crate::revision::CertifiedConstants;
use crate::tuner::RateUpdate;

pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const UPDATE_LOG_FILE: &str = "updates.csv";
pub const REPORT_FILE: &str = "report.json";
pub const META_FILE: &str = "meta.json";

/// Twelve significant digits.
fn num(v: f64) -> String {
    format!("{v:.11e}")
}

pub fn trajectory_header(n: usize) -> String {
    let mut cols = vec!["t".to_string()];
    cols.extend((1..=n).map(|i| format!("x{i}")));
    cols.extend((1..=n).map(|i| format!("y{i}")));
    cols.extend(["lambda", "s_bar", "ne_dist", "transit_mass"].map(String::from));
    cols.join(",")
}

/// One row per sample. The `y` columns hold the mass in transit towards each
/// strategy.
pub fn trajectory_csv(trace: &[TrajectorySample]) -> String {
    let n = trace.first().map_or(0, |s| s.x.len());
    let mut out = trajectory_header(n);
    out.push('\n');
    for s in trace {
        let mut row: Vec<String> = vec![num(s.t)];
        row.extend(s.x.iter().map(|v| num(*v)));
        row.extend(s.y.arrivals().iter().map(|v| num(*v)));
        row.extend([s.lambda, s.s_bar, s.ne_dist, s.transit_mass].map(num));
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub const UPDATE_LOG_HEADER: &str = "k,t_k,lambda_k,dot_val,f_val,floored";

pub fn update_log_csv(log: &[RateUpdate]) -> String {
    let mut out = String::from(UPDATE_LOG_HEADER);
    out.push('\n');
    for u in log {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            u.k,
            num(u.t),
            num(u.lambda),
            num(u.dot_val),
            num(u.f_val),
            u.floored
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub config: ExperimentConfig,
    pub constants: CertifiedConstants,
}

/// Writes `contents` to a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

/// Writes the trajectory, update log, report and metadata into `dir`.
pub fn write_run(
    dir: &Path,
    outcome: &RunOutcome,
    config: &ExperimentConfig,
    consts: &CertifiedConstants,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_atomic(&dir.join(TRAJECTORY_FILE), trajectory_csv(&outcome.trace).as_bytes())?;
    write_atomic(&dir.join(UPDATE_LOG_FILE), update_log_csv(outcome.updates()).as_bytes())?;
    let report = serde_json::to_string_pretty(&outcome.report).expect("report serializes");
    write_atomic(&dir.join(REPORT_FILE), report.as_bytes())?;
    let meta = Metadata {
        config: config.clone(),
        constants: consts.clone(),
    };
    let meta = serde_json::to_string_pretty(&meta).expect("metadata serializes");
    write_atomic(&dir.join(META_FILE), meta.as_bytes())?;
    Ok(())
}
