use ris_bc_cli::output::{mean_stderr, read_records, read_summary};
use ris_bc_cli::{run_experiment, ExperimentSpec};
use std::path::Path;
use std::process::Command;

fn risbc() -> Command {
    Command::new(env!("CARGO_BIN_EXE_risbc"))
}

fn write_spec(dir: &Path, text: &str) -> std::path::PathBuf {
    let path = dir.join("spec.toml");
    std::fs::write(&path, text).unwrap();
    path
}

const SMALL_SWEEP: &str = r#"
kind = "sweep_nt"
realizations = 4
seed = 11

[system]
users = 2
elements_per_surface = 16

[sweep]
values = [2, 4]
links = ["direct_ris", "direct_only"]

[solver]
max_outer = 10
"#;

#[test]
fn run_writes_detail_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), SMALL_SWEEP);
    let out = dir.path().join("res");
    let status = risbc()
        .args(["run", "--spec"])
        .arg(&spec)
        .args(["--algos", "apgm,ao", "--workers", "2", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let rows = read_records(&out.join("sweep_nt.csv")).unwrap();
    assert_eq!(rows.len(), 2 * 2 * 4 * 2);
    assert!(rows.iter().all(|r| r.subiter == "final" && r.objective_bits.unwrap() > 0.0));
    assert!(rows.iter().all(|r| r.algo == "apgm" || r.algo == "ao"));

    // summary means recomputed from the detail rows
    let summary = read_summary(&out.join("sweep_nt_summary.csv")).unwrap();
    assert_eq!(summary.len(), 2 * 2 * 2);
    for s in &summary {
        let values: Vec<f64> = rows
            .iter()
            .filter(|r| r.experiment == s.experiment && r.algo == s.algo && r.sweep_value == s.sweep_value)
            .map(|r| r.objective_bits.unwrap())
            .collect();
        let (mean, stderr) = mean_stderr(&values);
        assert_eq!(s.count, 4);
        assert!((s.mean_objective_bits - mean).abs() <= 1e-12 * mean);
        assert!((s.stderr_objective_bits - stderr).abs() <= 1e-12 * mean);
    }
}

#[test]
fn serial_and_parallel_runs_agree() {
    let spec = ExperimentSpec::from_toml(SMALL_SWEEP).unwrap();
    let serial = run_experiment(&spec, Some(1)).unwrap();
    let parallel = run_experiment(&spec, Some(4)).unwrap();
    let again = run_experiment(&spec, Some(3)).unwrap();
    let strip = |rows: &[ris_bc_cli::Record]| {
        rows.iter()
            .map(|r| (r.experiment.clone(), r.algo.clone(), r.seed, r.sweep_value.to_bits(), r.objective_bits.map(f64::to_bits)))
            .collect::<Vec<_>>()
    };
    assert_eq!(strip(&serial), strip(&parallel));
    assert_eq!(strip(&serial), strip(&again));
}

#[test]
fn convergence_has_one_row_per_subiteration() {
    let spec = ExperimentSpec::from_toml(
        "kind = \"convergence\"\nrealizations = 1\n[system]\nusers = 2\nelements_per_surface = 16\n",
    )
    .unwrap();
    let rows = run_experiment(&spec, None).unwrap();
    for algo in ["ao", "aao", "apgm"] {
        let mine: Vec<_> = rows.iter().filter(|r| r.algo == algo).collect();
        let outer: usize = mine.last().unwrap().subiter.split('/').next().unwrap().parse().unwrap();
        assert_eq!(mine.len(), 1 + 2 * outer);
        assert_eq!(mine[1].subiter, "1/covariance");
        assert_eq!(mine[2].subiter, "1/phase");
    }
}

#[test]
fn bad_spec_exits_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let spec = write_spec(dir.path(), "kind = \"sweep_nt\"\n");
    let status = risbc().args(["run", "--spec"]).arg(&spec).status().unwrap();
    assert_eq!(status.code(), Some(2));
    let missing = risbc().args(["run", "--spec", "/nonexistent/spec.toml"]).status().unwrap();
    assert_eq!(missing.code(), Some(2));
    let spec = write_spec(dir.path(), SMALL_SWEEP);
    let bad_algo = risbc().args(["run", "--spec"]).arg(&spec).args(["--algos", "xyz"]).status().unwrap();
    assert_eq!(bad_algo.code(), Some(2));
}

#[test]
fn complexity_table_command_prints_reference_values() {
    let dir = tempfile::tempdir().unwrap();
    let output = risbc().args(["complexity-table", "--out"]).arg(dir.path()).output().unwrap();
    assert!(output.status.success());
    let text = String::from_utf8(output.stdout).unwrap();
    for v in ["211392", "10592", "207072", "1309248", "95424"] {
        assert!(text.contains(v), "{v} missing");
    }
    let rows = read_records(&dir.path().join("complexity_table.csv")).unwrap();
    assert_eq!(rows.len(), 18);
}

#[test]
fn selftest_succeeds() {
    let output = risbc().args(["selftest", "--seed", "4"]).output().unwrap();
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stdout));
}

#[test]
fn preset_specs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("specs");
    let mut count = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        ExperimentSpec::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        count += 1;
    }
    assert_eq!(count, 8);
}
