//! Trajectory CSV, run reports and their readers.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use polyboltz::diagnostics::VerdictReport;
use polyboltz::solver::{Snapshot, StepRecord, Trajectory};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::field_io;

pub const CSV_HEADER: &str = "# polyboltz trajectory v1";
pub const CSV_COLUMNS: &str =
    "t,mass,px,py,pz,energy,entropy,L1_2,L1_4,L2_0,L2_gp2,H1v,IdI_L2,nu_min_ratio";
pub const REPORT_FORMAT: &str = "polyboltz-report/1";
pub const CSV_FILE: &str = "trajectory.csv";
pub const REPORT_FILE: &str = "report.json";
pub const SNAPSHOT_DIR: &str = "snapshots";

/// One row per step taken; the initial state is not a row.
pub fn trajectory_csv(records: &[StepRecord]) -> String {
    let mut out = format!("{CSV_HEADER}\n{CSV_COLUMNS}\n");
    for r in records {
        let row = [
            r.t,
            r.mass,
            r.momentum[0],
            r.momentum[1],
            r.momentum[2],
            r.energy,
            r.entropy,
            r.l1_2,
            r.l1_4,
            r.l2_0,
            r.l2_gp2,
            r.h1v,
            r.idi_l2,
            r.nu_min_ratio,
        ];
        for (k, x) in row.iter().enumerate() {
            if k > 0 {
                out.push(',');
            }
            write!(out, "{x:e}").expect("writing to a String");
        }
        out.push('\n');
    }
    out
}

/// Parses the numeric rows of a trajectory CSV.
pub fn parse_csv(text: &str) -> Result<Vec<Vec<f64>>> {
    let mut lines = text.lines();
    anyhow::ensure!(
        lines.next() == Some(CSV_HEADER),
        "missing CSV version header"
    );
    anyhow::ensure!(lines.next() == Some(CSV_COLUMNS), "unexpected CSV columns");
    lines
        .map(|l| {
            l.split(',')
                .map(|x| {
                    x.parse::<f64>()
                        .with_context(|| format!("bad number '{x}'"))
                })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotEntry {
    pub step: usize,
    pub t: f64,
    /// Path relative to the output directory.
    pub file: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub format: String,
    pub command: String,
    pub scenario: String,
    pub seed: u64,
    pub config: RunConfig,
    pub dt: f64,
    pub flags: Vec<String>,
    pub initial: StepRecord,
    pub records: Vec<StepRecord>,
    pub snapshots: Vec<SnapshotEntry>,
    pub verdicts: Vec<VerdictReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub format: String,
    pub command: String,
    pub suite: String,
    pub verdicts: Vec<VerdictReport>,
}

pub fn snapshot_name(step: usize) -> PathBuf {
    Path::new(SNAPSHOT_DIR).join(format!("step_{step:06}.pbzf"))
}

/// Writes snapshots, CSV and report, each atomically; the report goes last.
pub fn write_run(dir: &Path, traj: &Trajectory, report: &RunReport) -> Result<()> {
    for (s, entry) in traj.snapshots.iter().zip(&report.snapshots) {
        field_io::write_atomic(
            &dir.join(&entry.file),
            &field_io::encode(&s.field, s.step as u64, s.t),
        )?;
    }
    field_io::write_atomic(
        &dir.join(CSV_FILE),
        trajectory_csv(&traj.records).as_bytes(),
    )?;
    write_json(&dir.join(REPORT_FILE), report)
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    field_io::write_atomic(path, text.as_bytes())
}

/// Rebuilds a trajectory from the files of a finished run.
pub fn load_trajectory(dir: &Path) -> Result<(RunReport, Trajectory)> {
    let path = dir.join(REPORT_FILE);
    let text =
        std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let report: RunReport =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    anyhow::ensure!(
        report.format == REPORT_FORMAT,
        "unsupported report format {}",
        report.format
    );
    let snapshots = report
        .snapshots
        .iter()
        .map(|e| {
            let f = field_io::read(&dir.join(&e.file))?;
            Ok(Snapshot {
                step: e.step,
                t: e.t,
                field: f.field,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let traj = Trajectory {
        snapshots,
        initial: report.initial.clone(),
        records: report.records.clone(),
        flags: report.flags.clone(),
        dt: report.dt,
    };
    Ok((report, traj))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_only_without_records() {
        let csv = trajectory_csv(&[]);
        assert_eq!(csv, format!("{CSV_HEADER}\n{CSV_COLUMNS}\n"));
        assert!(parse_csv(&csv).unwrap().is_empty());
    }

    #[test]
    fn snapshot_names_sort_by_step() {
        assert!(snapshot_name(9) < snapshot_name(10));
        assert_eq!(snapshot_name(3), Path::new("snapshots/step_000003.pbzf"));
    }
}
