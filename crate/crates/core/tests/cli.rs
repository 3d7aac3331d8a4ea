use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn thermofield(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_thermofield"))
        .args(args)
        .env("THERMOFIELD_CACHE_DIR", dir.join("cache"))
        .output()
        .expect("binary runs")
}

#[test]
fn validate_reference_model() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = dir.path().join("sb");
    let out = thermofield(dir.path(), &["run", config("spin_boson.toml").to_str().unwrap(), "--output", prefix.to_str().unwrap()]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{stdout}{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout.starts_with("PASS"), "{stdout}");
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("sb.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["experiment"], "validate");
    assert_eq!(manifest["passed"], true);
}

#[test]
fn overlap_sweep_csv_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let mut csvs = Vec::new();
    for run in ["a", "b"] {
        let prefix = dir.path().join(run);
        let out = thermofield(dir.path(), &["run", config("overlap_sweep.toml").to_str().unwrap(), "--output", prefix.to_str().unwrap()]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        csvs.push(std::fs::read(dir.path().join(format!("{run}.csv"))).unwrap());
    }
    assert_eq!(csvs[0], csvs[1]);
    let text = String::from_utf8(csvs.remove(0)).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "beta,lambda,overlap_distance,kernel_residual,n_expectation");
    assert_eq!(lines.len(), 10);
    for row in lines.iter().skip(1).filter(|r| r.split(',').nth(1) == Some("0")) {
        assert_eq!(row.split(',').nth(2), Some("0"), "{row}");
    }
}

#[test]
fn unknown_key_exits_with_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(config("spin_boson.toml")).unwrap().replace("beta = 1.0", "beta = 1.0\nbogus = 3");
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, text).unwrap();
    let out = thermofield(dir.path(), &["check", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));
}
