use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn config_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/reduced.toml")
}

fn cli(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_inflate-transfer"))
        .args(args)
        .arg("--config")
        .arg(config_path())
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn ok(out: &Path, args: &[&str]) -> String {
    let o = cli(out, args);
    assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

#[test]
fn staged_commands_match_run_all() {
    let staged = tempfile::tempdir().unwrap();
    let whole = tempfile::tempdir().unwrap();
    let s = staged.path();
    ok(s, &["gen-synth"]);
    let splits = ok(s, &["split"]);
    assert!(splits.contains("large: train"), "{splits}");
    assert!(s.join("splits/small/test.jsonl").exists());
    ok(s, &["bootstrap"]);
    ok(s, &["pretrain"]);
    for size in ["large", "medium", "small"] {
        for mode in ["baseline", "finetune"] {
            ok(s, &["train-target", "--size", size, "--mode", mode]);
        }
    }
    ok(s, &["report"]);
    ok(whole.path(), &["run-all"]);
    let a = std::fs::read(s.join("report/report.csv")).unwrap();
    let b = std::fs::read(whole.path().join("report/report.csv")).unwrap();
    assert_eq!(a, b);

    let eval = ok(s, &["evaluate", "--checkpoint", s.join("seed_11/small_finetune/model.ckpt").to_str().unwrap()]);
    let v: serde_json::Value = serde_json::from_str(&eval).unwrap();
    let acc = v["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    assert_eq!(v["split"], "test");

    let inflated = ok(s, &["inflate"]);
    assert!(Path::new(inflated.trim()).exists());
    let check = ok(s, &["check-inflation", "--checkpoint", s.join("seed_11/bootstrap_2d.ckpt").to_str().unwrap()]);
    assert!(check.contains("\"passed\": true"), "{check}");
}

#[test]
fn stage_without_prerequisite_fails_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let o = cli(dir.path(), &["train-target", "--size", "small", "--mode", "finetune"]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("run the earlier stage"), "{err}");
}

#[test]
fn check_inflation_precisions_and_failure_exit() {
    let dir = tempfile::tempdir().unwrap();
    for precision in ["f32", "f64"] {
        let out = ok(dir.path(), &["check-inflation", "--precision", precision, "--images", "3"]);
        assert!(out.contains("\"passed\": true"), "{out}");
    }
    let o = cli(dir.path(), &["check-inflation", "--images", "3", "--tolerance", "0"]);
    let exact = String::from_utf8_lossy(&o.stdout).contains("\"max_deviation\": 0.0");
    assert_eq!(o.status.success(), exact);
}

#[test]
fn invalid_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "seeds = []\n").unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_inflate-transfer"))
        .args(["run-all", "--config"])
        .arg(&bad)
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("seed"));
}

#[test]
fn effective_config_is_written() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["gen-synth"]);
    let text = std::fs::read_to_string(dir.path().join("effective_config.toml")).unwrap();
    assert!(text.contains("seeds = [11]"), "{text}");
}
