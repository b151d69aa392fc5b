use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn delta(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_delta"))
        .args(args)
        .current_dir(dir)
        .env_remove("DELTA_DETERMINISTIC")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_toy(dir: &Path, rows: usize) {
    let mut text = String::from("user\titem\tlabel\n");
    for i in 0..rows {
        let (u, it) = (i % 5, (i * 7) % 6);
        text.push_str(&format!("u{u}\ti{it}\t{}\n", u8::from((u + it) % 3 == 0)));
    }
    fs::write(dir.join("toy.tsv"), text).unwrap();
}

fn write_config(dir: &Path, extra: &str) {
    let cfg = format!(
        r#"{{"model": {{"embed_dim": 3, "tower1": [6], "tower2": [6], "dropout": 0.0}},
 "trainer": {{"batch_size": 16, "learning_rate": 0.01, "max_epochs": 1}},
 "data": {{"cache": "toy.dlta"}}, "output_dir": "out"{extra}}}"#
    );
    fs::write(dir.join("cfg.json"), cfg).unwrap();
}

fn prepped(rows: usize) -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    write_toy(dir.path(), rows);
    let o = delta(dir.path(), &["prep", "--input", "toy.tsv", "--output", "toy.dlta", "--min-freq", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    dir
}

#[test]
fn prep_reports_fields_and_is_reproducible() {
    let dir = prepped(10);
    let first = fs::read(dir.path().join("toy.dlta")).unwrap();
    assert!(dir.path().join("toy.vocab.json").exists());
    let o = delta(dir.path(), &["prep", "--input", "toy.tsv", "--output", "toy.dlta", "--min-freq", "1"]);
    let out = stdout(&o);
    assert!(out.contains("fields 2"), "{out}");
    assert!(out.contains("instances 10 (train 8, val 1, test 1)"), "{out}");
    assert_eq!(fs::read(dir.path().join("toy.dlta")).unwrap(), first);
}

#[test]
fn prep_parse_error_names_line() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.tsv"), "a\tlabel\nx\t1\ny\n").unwrap();
    let o = delta(dir.path(), &["prep", "--input", "bad.tsv", "--output", "bad.dlta"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn train_writes_history_and_checkpoint_deterministically() {
    let dir = prepped(200);
    write_config(dir.path(), "");
    let o = delta(dir.path(), &["train", "--config", "cfg.json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("val auc "), "{}", stdout(&o));
    let history = fs::read_to_string(dir.path().join("out/history.txt")).unwrap();
    assert_eq!(history.lines().count(), 2, "{history}");
    assert!(history.starts_with("epoch"));
    let ckpt = fs::read(dir.path().join("out/model.dltc")).unwrap();
    assert_eq!(&ckpt[..4], b"DLTC");

    let again = delta(dir.path(), &["train", "--config", "cfg.json"]);
    assert_eq!(stdout(&again), stdout(&o));
    assert_eq!(fs::read(dir.path().join("out/model.dltc")).unwrap(), ckpt);

    let pinned = Command::new(env!("CARGO_BIN_EXE_delta"))
        .args(["train", "--config", "cfg.json"])
        .current_dir(dir.path())
        .env("DELTA_DETERMINISTIC", "1")
        .output()
        .unwrap();
    assert_eq!(stdout(&pinned), stdout(&o));

    let reseeded = delta(dir.path(), &["train", "--config", "cfg.json", "--seed", "99"]);
    assert!(reseeded.status.success());
    assert_ne!(fs::read(dir.path().join("out/model.dltc")).unwrap(), ckpt);
}

#[test]
fn eval_prints_six_decimals_and_rejects_mismatched_data() {
    let dir = prepped(200);
    write_config(dir.path(), "");
    assert!(delta(dir.path(), &["train", "--config", "cfg.json"]).status.success());
    let o = delta(dir.path(), &["eval", "--checkpoint", "out/model.dltc", "--data", "toy.dlta"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let auc_line = out.lines().find(|l| l.starts_with("auc ")).unwrap();
    assert_eq!(auc_line.split('.').nth(1).unwrap().len(), 6, "{auc_line}");
    assert!(out.lines().any(|l| l.starts_with("logloss ")));

    let other = dir.path().join("other");
    fs::create_dir(&other).unwrap();
    fs::write(other.join("t.tsv"), "a\tb\tc\tlabel\n".to_string() + &"x\ty\tz\t1\nx\ty\tw\t0\n".repeat(10)).unwrap();
    assert!(delta(&other, &["prep", "--input", "t.tsv", "--output", "t.dlta", "--min-freq", "1"])
        .status
        .success());
    let o = delta(dir.path(), &["eval", "--checkpoint", "out/model.dltc", "--data", "other/t.dlta"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("schema mismatch"), "{}", stderr(&o));
}

#[test]
fn ablate_prints_one_row_per_variant() {
    let dir = prepped(200);
    write_config(dir.path(), "");
    let o = delta(
        dir.path(),
        &["ablate", "--config", "cfg.json", "--variants", "full,eeo_concat,eeo_fm", "--seeds", "2"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let rows: Vec<&str> = out.lines().skip(1).collect();
    assert_eq!(rows.len(), 3, "{out}");
    assert!(rows[0].starts_with("full") && rows[2].starts_with("eeo_fm"));
    assert!(out.lines().next().unwrap().contains("auc_sd"));

    let o = delta(dir.path(), &["ablate", "--config", "cfg.json", "--variants", "full,ctm_mask"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("ctm_mask"));
}

#[test]
fn config_errors_exit_one() {
    let dir = prepped(200);
    write_config(dir.path(), r#", "lamda": 0.3"#);
    let o = delta(dir.path(), &["train", "--config", "cfg.json"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("unknown field `lamda`"), "{}", stderr(&o));

    let o = delta(dir.path(), &["train", "--config", "missing.json"]);
    assert_eq!(o.status.code(), Some(1));
    let o = delta(dir.path(), &["frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn dump_config_prints_parseable_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let o = delta(dir.path(), &["--dump-config"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["model"]["lambda"], 0.5);
    assert_eq!(v["trainer"]["batch_size"], 4096);
    assert_eq!(v["trainer"]["learning_rate"], 1e-4);
    fs::write(dir.path().join("dumped.json"), stdout(&o)).unwrap();
    let again = delta(dir.path(), &["train", "--config", "dumped.json", "--seed", "4", "--dump-config"]);
    let w: serde_json::Value = serde_json::from_str(&stdout(&again)).unwrap();
    assert_eq!(w["seed"], 4);
}

#[test]
fn gradcheck_passes_and_catches_gate_fault() {
    let dir = tempfile::tempdir().unwrap();
    let o = delta(dir.path(), &["gradcheck"]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).contains("0 failed"));
    assert!(stdout(&o).contains("topk_truncate"));

    let o = delta(dir.path(), &["gradcheck", "--inject-gate-fault"]);
    assert_eq!(o.status.code(), Some(2));
    let failures: Vec<String> = stdout(&o)
        .lines()
        .filter(|l| l.starts_with("failure:"))
        .map(String::from)
        .collect();
    assert!(!failures.is_empty());
    assert!(failures.iter().all(|l| l.contains("gate")), "{failures:?}");
}
