use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const BASE: &str = r#"seed = 7

[model]
name = "quadratic_congestion"

[grid]
lower = [-2.0]
upper = [2.0]
cells = [80]
"#;

const M0: &str = r#"
[measure]
kind = "uniform_box"
lower = [-0.5]
upper = [0.5]
particles = 16
"#;

fn mfg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mfg"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn run_in(dir: &Path, cmd: &str, config: &Path, out: &str) -> Output {
    let out_dir = dir.join(out);
    mfg(&[cmd, config.to_str().unwrap(), "--out", out_dir.to_str().unwrap()])
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn data_lines(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(String::from)
        .collect()
}

#[test]
fn validate_passes_on_congestion() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", BASE);
    let o = run_in(dir.path(), "validate", &cfg, "out");
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/validate_report.json")).unwrap()).unwrap();
    assert_eq!(report["all_passed"], true);
    assert_eq!(report["meta"]["seed"], 7);
}

#[test]
fn validate_reports_violation_with_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    let text = BASE.replace(
        "name = \"quadratic_congestion\"",
        "name = \"two_wells\"\nparams = { core_radius = 0.5 }",
    );
    let cfg = write_config(dir.path(), "c.toml", &text);
    let o = run_in(dir.path(), "validate", &cfg, "out");
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stdout).contains("[FAIL] argmin_in_core"));
}

#[test]
fn static_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", &format!("{BASE}{M0}"));
    for out in ["a", "b"] {
        let o = run_in(dir.path(), "static", &cfg, out);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    for f in ["static_measure.csv", "static_log.csv", "static_summary.json"] {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f} differs");
    }
    let rows = data_lines(&dir.path().join("a/static_measure.csv"));
    assert_eq!(rows, vec!["0,0,1".to_string()]);
}

#[test]
fn csv_outputs_carry_metadata_and_units() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", &format!("{BASE}{M0}"));
    run_in(dir.path(), "static", &cfg, "out");
    let text = std::fs::read_to_string(dir.path().join("out/static_log.csv")).unwrap();
    let mut lines = text.lines();
    let meta = lines.next().unwrap();
    assert!(meta.starts_with("# mfg ") && meta.contains("config_sha256=") && meta.contains("seed=7"));
    assert_eq!(lines.next().unwrap(), "iter [1],residual [cost],d1_step [length]");
}

#[test]
fn ergodic_reads_the_static_measure() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", &format!("{BASE}{M0}"));
    assert_eq!(run_in(dir.path(), "static", &cfg, "s").status.code(), Some(0));
    let erg = write_config(
        dir.path(),
        "e.toml",
        &format!("{BASE}\n[measure]\nkind = \"file\"\npath = \"s/static_measure.csv\"\n"),
    );
    let o = run_in(dir.path(), "ergodic", &erg, "e");
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rep: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("e/ergodic_report.json")).unwrap()).unwrap();
    assert_eq!(rep["converse_passed"], true);
    assert_eq!(rep["c"], 0.0);
    assert_eq!(data_lines(&dir.path().join("e/ergodic_value.csv")).len(), 81);
}

#[test]
fn ergodic_on_a_non_equilibrium_is_a_solver_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.toml",
        &format!("{BASE}\n[measure]\nkind = \"dirac\"\npoint = [0.5]\n"),
    );
    let o = run_in(dir.path(), "ergodic", &cfg, "out");
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("not a static equilibrium"), "{}", stderr(&o));
}

#[test]
fn evolve_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.toml",
        &format!("{BASE}{M0}\n[horizon]\nT = 1.0\ndt = 0.05\n"),
    );
    let o = run_in(dir.path(), "evolve", &cfg, "out");
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = dir.path().join("out");
    // meta line plus one line per time level
    let path = std::fs::read_to_string(out.join("evolve_path.jsonl")).unwrap();
    assert_eq!(path.lines().count(), 1 + 21);
    // nine checkpoint snapshots of 81 nodes
    assert_eq!(data_lines(&out.join("evolve_value.csv")).len(), 9 * 81);
    assert_eq!(data_lines(&out.join("evolve_trajectories.csv")).len(), 16);
    let summary: Value = serde_json::from_str(&std::fs::read_to_string(out.join("evolve_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["converged"], true);
}

#[test]
fn sweep_shape_is_rows_times_s_values() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.toml",
        &format!("{BASE}{M0}\n[sweep]\nT_list = [5.0, 10.0]\ndt = 0.05\n"),
    );
    let o = run_in(dir.path(), "sweep", &cfg, "out");
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = dir.path().join("out");
    assert_eq!(data_lines(&out.join("sweep.csv")).len(), 2 * 5);
    let summary: Value = serde_json::from_str(&std::fs::read_to_string(out.join("sweep_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["records"].as_array().unwrap().len(), 2);
    assert!(summary["criteria"]["value_rate"]["passed"].is_boolean());
    assert!(summary["criteria"]["semilimits"]["skipped"].is_string());
}

#[test]
fn tainted_sweep_exits_zero_with_warning() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.toml",
        &format!("{BASE}{M0}\n[sweep]\nT_list = [5.0]\ndt = 0.05\ntol = 1e-14\nmax_iter = 1\n"),
    );
    let o = run_in(dir.path(), "sweep", &cfg, "out");
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stderr(&o).contains("tainted"), "{}", stderr(&o));
}

#[test]
fn missing_config_is_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(dir.path(), "static", &dir.path().join("nope.toml"), "out");
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("does not exist"));
}

#[test]
fn unknown_key_is_exit_2_and_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", &format!("{BASE}\n[static]\nviscosity = 0.1\n"));
    let o = run_in(dir.path(), "static", &cfg, "out");
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("viscosity"), "{}", stderr(&o));
}

#[test]
fn dt_not_dividing_t_names_both_keys() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.toml",
        &format!("{BASE}{M0}\n[horizon]\nT = 1.0\ndt = 0.3\n"),
    );
    let o = run_in(dir.path(), "evolve", &cfg, "out");
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("horizon.dt") && err.contains("horizon.T"), "{err}");
}

#[test]
fn missing_measure_file_is_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.toml",
        &format!("{BASE}\n[measure]\nkind = \"file\"\npath = \"absent.csv\"\n"),
    );
    let o = run_in(dir.path(), "ergodic", &cfg, "out");
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("absent.csv"));
}

#[test]
fn output_dir_defaults_relative_to_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.toml", &format!("output_dir = \"res\"\n{BASE}"));
    let o = mfg(&["validate", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(dir.path().join("res/validate_report.json").exists());
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let mut n = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            mfg_cli::parse_config(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            n += 1;
        }
    }
    assert!(n >= 3);
}
