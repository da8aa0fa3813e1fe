//! End-to-end runs of the `genkb` binary on the bundled fixture.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::Instant;

use genkb::commands::read_ranked;
use genkb_core::background::{parse_schema, parse_typemap};
use genkb_core::guidance::schema_consistent;

fn genkb(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_genkb"))
        .current_dir(dir)
        .env_remove("GENKB_CONFIG")
        .env_remove("GENKB_OUTPUT_DIR")
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = genkb(dir, args);
    assert!(
        out.status.success(),
        "genkb {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fixture_dir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["fixture", "--dir", "."]);
    dir
}

fn assert_schema_consistent(dir: &Path, ranked: &Path) -> usize {
    let schema = parse_schema(&fs::read_to_string(dir.join("schema.tsv")).unwrap()).unwrap();
    let typemap = parse_typemap(&fs::read_to_string(dir.join("typemap.tsv")).unwrap()).unwrap();
    let rows = read_ranked(ranked).unwrap();
    for r in &rows {
        assert!(
            schema_consistent(&r.source, &r.relation, &r.target, &schema, &typemap).consistent,
            "inconsistent prediction {r:?}"
        );
    }
    rows.len()
}

#[test]
fn full_pipeline_on_the_fixture() {
    let start = Instant::now();
    let dir = fixture_dir();
    let d = dir.path();
    let kb_lines = fs::read_to_string(d.join("kb.tsv")).unwrap().lines().count();
    assert_eq!(kb_lines, 200);
    ok(d, &["-c", "config.toml", "split"]);
    ok(d, &["-c", "config.toml", "--kb", "out/train.tsv", "train"]);
    ok(d, &["-c", "config.toml", "--kb", "out/train.tsv", "expand"]);
    ok(d, &["-c", "config.toml", "--kb", "out/train.tsv", "predict"]);
    let eval_out = ok(d, &["-c", "config.toml", "eval"]);
    assert!(eval_out.contains("bound queries"));
    ok(d, &["-c", "config.toml", "--kb", "out/train.tsv", "active", "--entity", "g0_m0", "--budget", "4"]);
    for f in [
        "train.tsv",
        "valid.tsv",
        "test.tsv",
        "model.bin",
        "train_report.json",
        "derived.tsv",
        "predictions.csv",
        "bounds.csv",
        "curve.csv",
        "eval_report.json",
        "active_report.json",
        "inferred.csv",
        "session.json",
    ] {
        assert!(d.join("out").join(f).is_file(), "missing {f}");
    }
    let n = assert_schema_consistent(d, &d.join("out/predictions.csv"));
    assert!(n > 100, "only {n} predictions");

    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("out/eval_report.json")).unwrap()).unwrap();
    assert_eq!(report["decomposition"]["holds"], true);
    assert_eq!(report["predictions"].as_u64().unwrap() as usize, n);
    assert!(report["bound_queries"].as_u64().unwrap() < n as u64);
    let bounds = fs::read_to_string(d.join("out/bounds.csv")).unwrap();
    assert!(bounds.starts_with("k,y_k,L,U,L_hat,U_hat,prc,queries\n"));

    let active: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("out/active_report.json")).unwrap()).unwrap();
    assert_eq!(active["selected"], 4);
    let total = active["total"].as_u64().unwrap();
    let parts = ["from_annotation", "from_sibling_agreement", "from_factorization"]
        .iter()
        .map(|k| active[k].as_u64().unwrap())
        .sum::<u64>();
    assert_eq!(total, parts);
    assert!(start.elapsed().as_secs() < 60, "pipeline took {:?}", start.elapsed());
}

#[test]
fn predict_without_a_model_exits_2() {
    let dir = fixture_dir();
    let out = genkb(dir.path(), &["-c", "config.toml", "predict"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("model not found"));
}

#[test]
fn configuration_errors_exit_2() {
    let dir = fixture_dir();
    let d = dir.path();
    let out = genkb(d, &["split"]);
    assert_eq!(out.status.code(), Some(2));
    fs::write(d.join("bad.toml"), "[paths]\nkb = \"missing.tsv\"\n").unwrap();
    let out = genkb(d, &["-c", "bad.toml", "split"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("paths.kb"));
    fs::write(d.join("typo.toml"), "sede = 3\n").unwrap();
    assert_eq!(genkb(d, &["-c", "typo.toml", "split"]).status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_1() {
    let dir = fixture_dir();
    let d = dir.path();
    fs::write(d.join("kb.tsv"), "a\tr\n").unwrap();
    let out = genkb(d, &["-c", "config.toml", "split"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("malformed"));
}

fn read(p: PathBuf) -> Vec<u8> {
    fs::read(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn same_seed_gives_identical_artifacts() {
    let dir = fixture_dir();
    let d = dir.path();
    for out in ["a", "b"] {
        for cmd in ["split", "train", "predict"] {
            ok(d, &["-c", "config.toml", "--seed", "5", "--output-dir", out, cmd]);
        }
    }
    for f in ["train.tsv", "test.tsv", "model.bin", "predictions.csv"] {
        assert_eq!(read(d.join("a").join(f)), read(d.join("b").join(f)), "{f} differs");
    }
    ok(d, &["-c", "config.toml", "--seed", "6", "--output-dir", "c", "split"]);
    assert_ne!(read(d.join("a/train.tsv")), read(d.join("c/train.tsv")));
}

#[test]
fn output_dir_can_come_from_the_environment() {
    let dir = fixture_dir();
    let d = dir.path();
    let out = Command::new(env!("CARGO_BIN_EXE_genkb"))
        .current_dir(d)
        .env("GENKB_OUTPUT_DIR", "from-env")
        .args(["-c", "config.toml", "split"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(d.join("from-env/train.tsv").is_file());
}

#[test]
fn interactive_eval_asks_in_rank_order() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut csv = String::from("rank,source,relation,target,label,probability\n");
    for i in 1..=8 {
        csv.push_str(&format!("{i},e{i},r,t,some,{}\n", 1.0 - i as f64 / 10.0));
    }
    fs::write(d.join("ranked.csv"), csv).unwrap();
    fs::write(d.join("c.toml"), "[estimator]\nalpha = 2.0\ndelta = 2\n").unwrap();
    let mut child = Command::new(env!("CARGO_BIN_EXE_genkb"))
        .current_dir(d)
        .env_remove("GENKB_OUTPUT_DIR")
        .args(["-c", "c.toml", "eval", "--ranked", "ranked.csv", "--labels", "interactive"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    // ℓ = 1, checkpoints 1..=3 (yields 2, 4, 8): the estimator needs ranks 1-2, then
    // the Δ-windows ending at 4 and 8.
    child.stdin.take().unwrap().write_all(b"y\ny\nn\ny\nn\nbogus\nn\n").unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    let asked: Vec<usize> = stdout
        .match_indices("[rank ")
        .map(|(i, _)| stdout[i + 6..].split(']').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(asked, vec![1, 2, 3, 4, 7, 8, 8]);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("out/eval_report.json")).unwrap()).unwrap();
    assert_eq!(report["bound_queries"], 6);
    assert_eq!(report["sandwich"], serde_json::Value::Null);
    assert!(!d.join("out/curve.csv").exists());
}
