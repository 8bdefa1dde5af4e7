use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn madpo(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_madpo"))
        .current_dir(dir)
        .env_remove("MADPO_CONFIG")
        .env_remove("MADPO_OUT")
        .env_remove("MADPO_SEEDS")
        .env_remove("MADPO_METHODS")
        .env_remove("MADPO_TIERS")
        .env_remove("MADPO_PARALLEL")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stdout:\n{}\nstderr:\n{}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr));
}

fn data_lines(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().filter(|l| !l.starts_with('#')).count()
}

#[test]
fn generate_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    ok(&madpo(dir.path(), &["--out", "a", "--seeds", "0", "generate"]));
    ok(&madpo(dir.path(), &["--out", "b", "--seeds", "0", "generate"]));
    ok(&madpo(dir.path(), &["--out", "c", "--seeds", "1", "generate"]));
    for tier in ["high", "medium", "low"] {
        let rel = format!("data/seed-0/{tier}.ndjson");
        let a = dir.path().join("a").join(&rel);
        assert_eq!(data_lines(&a), 1200);
        assert_eq!(fs::read(&a).unwrap(), fs::read(dir.path().join("b").join(&rel)).unwrap());
        let c = dir.path().join("c").join(format!("data/seed-1/{tier}.ndjson"));
        assert_eq!(data_lines(&c), 1200);
        assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
    }
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("a/data/seed-0/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["files"].as_array().unwrap().len(), 3);
}

#[test]
fn run_single_cell_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let flags = ["--out", "o", "--seeds", "0", "--tiers", "high", "--methods", "dpo"];
    let missing = madpo(dir.path(), &[&flags[..], &["run"]].concat());
    assert_eq!(missing.status.code(), Some(2));

    ok(&madpo(dir.path(), &[&flags[..], &["generate"]].concat()));
    ok(&madpo(dir.path(), &[&flags[..], &["run"]].concat()));
    let results = fs::read_to_string(dir.path().join("o/results.csv")).unwrap();
    let lines: Vec<&str> = results.lines().collect();
    assert_eq!(lines.len(), 2, "{results}");
    assert!(lines[0].contains("config_hash"));
    assert!(lines[1].starts_with("dpo,high,0,"));
    for f in ["results.json", "summary.csv", "runs/dpo-high-seed0.json", "runs/dpo-high-seed0.loss.csv", "runs/dpo-high-seed0.policy.json"] {
        assert!(dir.path().join("o").join(f).exists(), "{f}");
    }
    let report = madpo(dir.path(), &["--out", "o", "report"]);
    ok(&report);
    assert!(String::from_utf8_lossy(&report.stdout).contains("dpo"));
}

#[test]
fn run_rejects_dataset_from_another_config() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("beta.toml"), "[settings]\nbeta = 0.2\n").unwrap();
    ok(&madpo(dir.path(), &["--out", "o", "--tiers", "low", "generate"]));
    let out = madpo(dir.path(), &["--config", "beta.toml", "--out", "o", "--tiers", "low", "--methods", "dpo", "run"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("regenerate"));
}

#[test]
fn tau_sweep_has_one_row_per_value() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("sweep.toml"), "tiers = [\"low\"]\n[sweep]\nparams = [\"tau\"]\n").unwrap();
    ok(&madpo(dir.path(), &["--config", "sweep.toml", "--out", "o", "generate"]));
    ok(&madpo(dir.path(), &["--config", "sweep.toml", "--out", "o", "--parallel", "2", "sweep"]));
    let text = fs::read_to_string(dir.path().join("o/sweep.csv")).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 4, "{text}");
    let taus: Vec<&str> = rows.iter().map(|r| r.split(',').nth(1).unwrap()).collect();
    assert_eq!(taus, ["2.0", "4.0", "7.0", "10.0"]);
    assert!(rows.iter().all(|r| r.starts_with("tau,") && r.contains(",madpo,low,0,")));
}

#[test]
fn env_overrides_and_bad_config_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.toml"), "no_such_key = 1\n").unwrap();
    let out = madpo(dir.path(), &["--config", "bad.toml", "generate"]);
    assert_eq!(out.status.code(), Some(2));

    let out = Command::new(env!("CARGO_BIN_EXE_madpo"))
        .current_dir(dir.path())
        .env("MADPO_TIERS", "ultra")
        .arg("generate")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    let out = Command::new(env!("CARGO_BIN_EXE_madpo"))
        .current_dir(dir.path())
        .env("MADPO_OUT", "from-env")
        .env("MADPO_TIERS", "medium")
        .arg("generate")
        .output()
        .unwrap();
    ok(&out);
    assert!(dir.path().join("from-env/data/seed-0/medium.ndjson").exists());
    assert!(!dir.path().join("from-env/data/seed-0/low.ndjson").exists());
}

#[test]
fn verify_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = madpo(dir.path(), &["verify", "--json"]);
    ok(&out);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let checks = report["checks"].as_array().unwrap();
    assert!(checks.iter().all(|c| c["passed"] == true));
    assert!(checks.iter().any(|c| c["name"] == "finite_diff_suite"));
}
