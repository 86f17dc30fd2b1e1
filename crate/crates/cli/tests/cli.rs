use std::path::Path;
use std::process::{Command, Output};
use std::sync::Arc;

use polyboltz::family::Scenario;
use polyboltz::phase_space::{ModelParams, PhaseGrid};
use polyboltz_cli::field_io;
use polyboltz_cli::output::{load_trajectory, parse_csv, CSV_COLUMNS, CSV_FILE, CSV_HEADER};

fn polyboltz(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_polyboltz"))
        .args(args)
        .output()
        .expect("running polyboltz")
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

const SMALL: &str = r#"
[grid]
lv = 5.0
nv = 6
imax = 10.0
ni = 6

[quadrature]
mc_samples = 100
"#;

fn small_run(scenario: &str, solver: &str) -> String {
    format!("[run]\nscenario = \"{scenario}\"\n{SMALL}\n[solver]\n{solver}\n")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn missing_config_exits_2() {
    let o = polyboltz(&["run", "--config", "/nonexistent/polyboltz.toml"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn unknown_key_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.toml", "[grid]\nnv = 8\nspacing = 3\n");
    let o = polyboltz(&["run", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("spacing"), "{}", stderr(&o));
}

#[test]
fn unknown_suite_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", SMALL);
    let o = polyboltz(&["verify", "--suite", "nope", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn oversized_step_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.toml",
        &small_run("two_bump", "dt = 5.0\nt_end = 10.0"),
    );
    let out = dir.path().join("out");
    let o = polyboltz(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn zero_steps_give_header_only_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.toml",
        &small_run("two_bump", "dt = 0.01\nt_end = 0.0"),
    );
    let out = dir.path().join("out");
    let o = polyboltz(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.join(CSV_FILE)).unwrap();
    assert_eq!(csv, format!("{CSV_HEADER}\n{CSV_COLUMNS}\n"));
    let (report, traj) = load_trajectory(&out).unwrap();
    assert!(report.records.is_empty());
    assert_eq!(traj.snapshots.len(), 1);
}

#[test]
fn equilibrium_run_has_flat_columns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.toml",
        &small_run("equilibrium", "dt = 0.01\nt_end = 0.05"),
    );
    let out = dir.path().join("out");
    let o = polyboltz(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("PASS entropy_nonincreasing"));
    let rows = parse_csv(&std::fs::read_to_string(out.join(CSV_FILE)).unwrap()).unwrap();
    assert_eq!(rows.len(), 5);
    let (_, traj) = load_trajectory(&out).unwrap();
    let first = &traj.initial;
    for row in &rows {
        assert!((row[1] - first.mass).abs() < 1e-10);
        assert!((row[5] - first.energy).abs() < 1e-10);
        assert!((row[6] - first.entropy).abs() < 1e-3 * first.entropy.abs());
        assert!((row[8] - first.l1_4).abs() < 1e-3 * first.l1_4);
    }
}

#[test]
fn same_seed_is_byte_identical_across_threads() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.toml",
        &small_run("two_bump", "dt = 0.01\nt_end = 0.03"),
    );
    let mut csvs = Vec::new();
    for threads in ["1", "2"] {
        let out = dir.path().join(format!("t{threads}"));
        let o = polyboltz(&[
            "--threads",
            threads,
            "run",
            "--config",
            &cfg,
            "--out",
            out.to_str().unwrap(),
            "--seed",
            "5",
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        csvs.push(std::fs::read(out.join(CSV_FILE)).unwrap());
    }
    assert_eq!(csvs[0], csvs[1]);
}

#[test]
fn field_file_initial_data() {
    let dir = tempfile::tempdir().unwrap();
    let params = ModelParams::new(1.0, 0.5, 1.0).unwrap();
    let grid = Arc::new(PhaseGrid::new(5.0, 6, 10.0, 6).unwrap());
    let f = Scenario::ShiftedMaxwellian.field(grid, &params).unwrap();
    let field = dir.path().join("f0.pbzf");
    field_io::write_atomic(&field, &field_io::encode(&f, 0, 0.0)).unwrap();
    let cfg = write_config(
        dir.path(),
        "c.toml",
        &format!(
            "[run]\nfield_file = \"f0.pbzf\"\n{SMALL}\n[solver]\ndt = 0.01\nt_end = 0.01\n"
        ),
    );
    let out = dir.path().join("out");
    let o = polyboltz(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let (_, traj) = load_trajectory(&out).unwrap();
    assert_eq!(traj.snapshots[0].field, f);

    let mismatched = write_config(
        dir.path(),
        "m.toml",
        "[run]\nfield_file = \"f0.pbzf\"\n[grid]\nnv = 8\n",
    );
    let o = polyboltz(&["run", "--config", &mismatched]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn kinematics_suite_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", SMALL);
    let out = dir.path().join("out");
    let o = polyboltz(&[
        "verify",
        "--suite",
        "kinematics",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("verify_kinematics.json")).unwrap())
            .unwrap();
    assert_eq!(report["suite"], "kinematics");
    assert_eq!(report["verdicts"].as_array().unwrap().len(), 3);
}

fn constants_row(text: &str, key: &str) -> String {
    text.lines()
        .find(|l| l.starts_with(key))
        .unwrap_or_else(|| panic!("no row {key} in\n{text}"))[key.len()..]
        .trim()
        .to_string()
}

#[test]
fn constants_kappa_at_alpha_zero() {
    let o = polyboltz(&["constants", "--alpha", "0", "--gamma", "1"]);
    assert_eq!(o.status.code(), Some(0));
    let k: f64 = constants_row(&stdout(&o), "kappa").parse().unwrap();
    assert!((k - 4.0 / 15.0).abs() < 1e-10 * 4.0 / 15.0);
}

#[test]
fn constants_report_divergence() {
    let o = polyboltz(&["constants", "--alpha", "-0.6", "--gamma", "1"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(constants_row(&stdout(&o), "rho[psi_one]").starts_with("diverges"));
}

#[test]
fn constants_psi_rho2_finite_for_alpha_one() {
    let o = polyboltz(&["constants", "--alpha", "1", "--gamma", "1", "--delta", "0"]);
    assert_eq!(o.status.code(), Some(0));
    let v: f64 = constants_row(&stdout(&o), "rho[psi_rho2]").parse().unwrap();
    assert!(v.is_finite() && v > 0.0);
}

#[test]
fn constants_reject_bad_a_list() {
    let o = polyboltz(&["constants", "--alpha", "1", "--gamma", "1", "--a-list", "0.5"]);
    assert_eq!(o.status.code(), Some(2));
}
