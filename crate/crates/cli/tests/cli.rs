use std::path::Path;
use std::process::{Command, Output};

fn stackgame(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stackgame"))
        .args(args)
        .current_dir(dir)
        .env("STACKGAME_OUT", dir.join("runs"))
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn example_matrix(dir: &Path) -> String {
    let p = dir.join("g.csv");
    std::fs::write(&p, "0,-0.5\n-1,0\n").unwrap();
    p.display().to_string()
}

#[test]
fn matrix_command_prints_all_three_values() {
    let dir = tempfile::tempdir().unwrap();
    let file = example_matrix(dir.path());
    let out = dir.path().join("res");
    let o = stackgame(dir.path(), &["matrix", "--file", &file, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.contains("run directory:"));
    let run_dir = text.lines().find_map(|l| l.strip_prefix("run directory: ")).unwrap();
    assert!(Path::new(run_dir).starts_with(&out));
    let rep: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(Path::new(run_dir).join("matrix.json")).unwrap()).unwrap();
    assert_eq!(rep["minmax"], 0.0);
    assert_eq!(rep["maxmin"], -0.5);
    assert!((rep["mixed"].as_f64().unwrap() + 1.0 / 3.0).abs() <= 1e-6);
    assert!(Path::new(run_dir).join("manifest.json").exists());
}

#[test]
fn json_out_receives_a_copy_of_the_main_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let file = example_matrix(dir.path());
    let o = stackgame(dir.path(), &["matrix", "--file", &file, "--solve", "maxmin", "--out", "result.json"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rep: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("result.json")).unwrap()).unwrap();
    assert_eq!(rep["maxmin"], -0.5);
    assert!(rep["minmax"].is_null());
    assert!(dir.path().join("runs/matrix").is_dir());
}

#[test]
fn exit_codes_distinguish_usage_and_runtime_errors() {
    let dir = tempfile::tempdir().unwrap();
    // runtime failure: missing input file
    let o = stackgame(dir.path(), &["matrix", "--file", "missing.csv"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("error"));
    // usage: unknown flag, missing records, bad config
    assert_eq!(stackgame(dir.path(), &["matrix", "--bogus"]).status.code(), Some(2));
    assert_eq!(stackgame(dir.path(), &["report"]).status.code(), Some(2));
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, "{not json").unwrap();
    let file = example_matrix(dir.path());
    let o = stackgame(dir.path(), &["matrix", "--file", &file, "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    std::fs::write(&cfg, r#"{"no_such_key": 1}"#).unwrap();
    let o = stackgame(dir.path(), &["matrix", "--file", &file, "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_file_overrides_flags() {
    let dir = tempfile::tempdir().unwrap();
    let file = example_matrix(dir.path());
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"solve": ["minmax"]}"#).unwrap();
    let o = stackgame(
        dir.path(),
        &["matrix", "--file", &file, "--solve", "maxmin", "--config", cfg.to_str().unwrap(), "--out", "r.json"],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rep: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("r.json")).unwrap()).unwrap();
    assert_eq!(rep["minmax"], 0.0);
    assert!(rep["maxmin"].is_null());
}

#[test]
fn training_twice_with_one_seed_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "train", "--synthetic", "two_gaussians", "--n-samples", "16", "--arch", "2,4,2", "--epochs", "2", "--eps", "0.05",
        "--seed", "3",
    ];
    let a = stackgame(dir.path(), &[&args[..], &["--out", "a.json"]].concat());
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    let b = stackgame(dir.path(), &[&args[..], &["--out", "b.json"]].concat());
    assert!(b.status.success());
    let (x, y) = (std::fs::read(dir.path().join("a.json")).unwrap(), std::fs::read(dir.path().join("b.json")).unwrap());
    assert_eq!(x, y);
}
