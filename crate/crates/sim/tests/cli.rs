use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn config_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../config")
}

fn gpmpcc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gpmpcc")).args(args).env_remove("GPMPCC_CONFIG_DIR").output().unwrap()
}

fn default_config() -> String {
    config_dir().join("default.toml").display().to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn shipped_configs_validate() {
    for name in ["default.toml", "noisy.toml"] {
        let path = config_dir().join(name).display().to_string();
        let o = gpmpcc(&["validate", &path]);
        assert_eq!(o.status.code(), Some(0), "{name}: {}", stderr(&o));
    }
}

#[test]
fn config_dir_variable_supplies_the_default() {
    let o = Command::new(env!("CARGO_BIN_EXE_gpmpcc")).arg("validate").env("GPMPCC_CONFIG_DIR", config_dir()).output().unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = gpmpcc(&["validate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("GPMPCC_CONFIG_DIR"));
}

#[test]
fn missing_track_is_a_config_error_naming_the_path() {
    let o = gpmpcc(&["validate", &default_config(), "--set", "track.file=/nonexistent/track.csv"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/nonexistent/track.csv"), "{}", stderr(&o));
}

#[test]
fn invalid_weights_and_horizons_are_rejected() {
    let o = gpmpcc(&["validate", &default_config(), "--set", "mpcc.contouring_weight=-1.0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("mpcc.contouring_weight"), "{}", stderr(&o));
    let o = gpmpcc(&["validate", &default_config(), "--set", "mpcc.horizon=10", "--set", "mpcc.tightened_steps=12"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("mpcc.tightened_steps"), "{}", stderr(&o));
}

#[test]
fn race_writes_one_row_per_run_and_replay_detects_tampering() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = gpmpcc(&[
        "race",
        &default_config(),
        "--set",
        "experiment.max_steps=15",
        "--seeds",
        "1..5",
        "--variants",
        "baseline,gp-sparse",
        "--output",
        out.to_str().unwrap(),
        "--jobs",
        "2",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let runs = report["runs"].as_array().unwrap();
    assert_eq!(runs.len(), 10);
    for v in ["baseline", "gp-sparse"] {
        let seeds: Vec<u64> = runs.iter().filter(|r| r["variant"] == v).map(|r| r["seed"].as_u64().unwrap()).collect();
        assert_eq!(seeds, vec![1, 2, 3, 4, 5]);
    }

    let lap = out.join("runs/gp-sparse_seed2.csv");
    let o = gpmpcc(&["replay", lap.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    // bump the error norm of one row
    let text = fs::read_to_string(&lap).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    let header: Vec<&str> = lines[1].split(',').collect();
    let col = header.iter().position(|h| *h == "error_norm").unwrap();
    let mut fields: Vec<String> = lines[5].split(',').map(str::to_string).collect();
    fields[col] = format!("{}", fields[col].parse::<f64>().unwrap() + 0.5);
    lines[5] = fields.join(",");
    fs::write(&lap, lines.join("\n") + "\n").unwrap();
    let o = gpmpcc(&["replay", lap.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("mean_error_norm"), "{}", stderr(&o));
}

#[test]
fn replay_of_a_missing_log_fails() {
    let o = gpmpcc(&["replay", "/nonexistent/lap.csv"]);
    assert_ne!(o.status.code(), Some(0));
}
