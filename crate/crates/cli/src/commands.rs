//! `run`, `verify` and `constants`.

use std::path::Path;
use std::sync::Arc;

use anyhow::{Context, Result};
use polyboltz::diagnostics::{check_conservation, check_entropy_decay, Status, VerdictReport};
use polyboltz::phase_space::{default_delta, ModelParams, PhaseGrid};
use polyboltz::solver::run;

use crate::config::{ConfigError, InitialData, Resolved, RunConfig};
use crate::output::{self, RunReport, SnapshotEntry, VerifyReport, REPORT_FORMAT};
use crate::suites::{self, Suite};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_STEP_SIZE: i32 = 3;

/// Exit code for an error raised by a command.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.downcast_ref::<ConfigError>().is_some() {
            return EXIT_CONFIG;
        }
        match cause.downcast_ref::<polyboltz::Error>() {
            Some(polyboltz::Error::StepSize { .. }) => return EXIT_STEP_SIZE,
            Some(polyboltz::Error::Config(_)) => return EXIT_CONFIG,
            _ => {}
        }
    }
    EXIT_FAILED
}

fn load(config: &Path, seed: Option<u64>) -> Result<(RunConfig, Resolved)> {
    let raw = RunConfig::load(config)?;
    let mut cfg = raw.resolve(config.parent())?;
    if let Some(seed) = seed {
        cfg = cfg.with_seed(seed);
    }
    Ok((raw, cfg))
}

fn initial(cfg: &Resolved) -> Result<polyboltz::phase_space::DistributionField> {
    suites::initial_field(cfg).map_err(|e| ConfigError(format!("run.field_file: {e:#}")).into())
}

/// Runs the solver and writes `trajectory.csv`, `report.json` and the snapshots.
pub fn cmd_run(config: &Path, out: Option<&Path>, seed: Option<u64>) -> Result<i32> {
    let (mut raw, cfg) = load(config, seed)?;
    raw.run.seed = cfg.seed;
    let f0 = initial(&cfg)?;
    let traj = run(&f0, &cfg.solver, &cfg.params, &cfg.kernel)?;
    let dir = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.output_dir.clone());
    let scenario = match &cfg.initial {
        InitialData::Scenario(s) => s.name().to_string(),
        InitialData::File(p) => p.display().to_string(),
    };
    let verdicts = vec![
        check_entropy_decay(&traj, &cfg.params, 3.0),
        check_conservation(&traj, &cfg.params, cfg.solver.drift_tolerance),
    ];
    let report = RunReport {
        format: REPORT_FORMAT.to_string(),
        command: "run".to_string(),
        scenario,
        seed: cfg.seed,
        config: raw,
        dt: traj.dt,
        flags: traj.flags.clone(),
        initial: traj.initial.clone(),
        records: traj.records.clone(),
        snapshots: traj
            .snapshots
            .iter()
            .map(|s| SnapshotEntry {
                step: s.step,
                t: s.t,
                file: output::snapshot_name(s.step),
            })
            .collect(),
        verdicts,
    };
    output::write_run(&dir, &traj, &report)?;
    for flag in &traj.flags {
        eprintln!("warning: {flag}");
    }
    println!(
        "{} steps, {} snapshots written to {}",
        traj.records.len(),
        traj.snapshots.len(),
        dir.display()
    );
    print_verdicts(&report.verdicts);
    Ok(EXIT_OK)
}

pub fn print_verdicts(verdicts: &[VerdictReport]) {
    for v in verdicts {
        let status = match v.status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Skipped => "SKIP",
            Status::NotApplicable => "N/A ",
        };
        let detail = v
            .violation
            .as_ref()
            .map(|x| format!(" ({})", x.detail))
            .or_else(|| {
                v.notes
                    .first()
                    .filter(|_| v.status != Status::Pass)
                    .map(|n| format!(" ({n})"))
            })
            .unwrap_or_default();
        println!("{status} {}{detail}", v.name);
    }
}

/// Runs a verification suite and writes `verify_<suite>.json`.
pub fn cmd_verify(suite: Suite, config: &Path, out: Option<&Path>) -> Result<i32> {
    let (_, cfg) = load(config, None)?;
    if matches!(suite, Suite::Operator | Suite::Solver | Suite::Theorems) {
        initial(&cfg)?;
    }
    let verdicts = suites::run_suite(suite, &cfg)?;
    let dir = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.output_dir.clone());
    let report = VerifyReport {
        format: REPORT_FORMAT.to_string(),
        command: "verify".to_string(),
        suite: suite.name().to_string(),
        verdicts,
    };
    output::write_json(&dir.join(format!("verify_{}.json", suite.name())), &report)?;
    print_verdicts(&report.verdicts);
    Ok(if report.verdicts.iter().all(VerdictReport::passed) {
        EXIT_OK
    } else {
        EXIT_FAILED
    })
}

/// Parses `a:s,a:s,...`.
pub fn parse_a_list(text: &str) -> Result<Vec<(f64, f64)>> {
    text.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|pair| {
            let (a, s) = pair
                .split_once(':')
                .with_context(|| format!("'{pair}' is not of the form a:s"))?;
            Ok((a.trim().parse()?, s.trim().parse()?))
        })
        .collect::<Result<_>>()
        .map_err(|e: anyhow::Error| ConfigError(format!("--a-list: {e}")).into())
}

pub struct ConstantsArgs {
    pub alpha: f64,
    pub gamma: f64,
    pub delta: Option<f64>,
    pub m: f64,
    pub kernel: String,
    pub a_list: Option<String>,
    pub grid: [f64; 4],
}

pub fn cmd_constants(args: &ConstantsArgs) -> Result<i32> {
    let params = ModelParams::new(args.m, args.alpha, args.gamma)
        .and_then(|p| p.with_delta(args.delta.unwrap_or_else(|| default_delta(args.alpha))))
        .map_err(|e| ConfigError(format!("model parameters: {e}")))?;
    let b = suites::parse_kernel(&args.kernel, args.alpha)
        .map_err(|e| ConfigError(format!("--b: {e:#}")))?;
    let a_list = match &args.a_list {
        Some(text) => parse_a_list(text)?,
        None => vec![(0.5 * args.gamma, args.gamma + 3.0)],
    };
    let [lv, nv, imax, ni] = args.grid;
    let grid = Arc::new(
        PhaseGrid::new(lv, nv as usize, imax, ni as usize)
            .map_err(|e| ConfigError(format!("--grid: {e}")))?,
    );
    let rows = suites::constants_table(&params, &b, &a_list, &grid);
    print!("{}", suites::format_constants(&params, &rows));
    Ok(EXIT_OK)
}
