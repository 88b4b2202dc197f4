mod common;

use std::fs;

use common::{ok, pipeline, simg, snapshot, TINY};

#[test]
fn every_subcommand_is_byte_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let out_a = pipeline(a.path());
    let out_b = pipeline(b.path());
    assert_eq!(out_a, out_b);
    let (sa, sb) = (snapshot(a.path()), snapshot(b.path()));
    assert_eq!(sa.keys().collect::<Vec<_>>(), sb.keys().collect::<Vec<_>>());
    for (k, v) in &sa {
        assert!(sb[k] == *v, "{} differs between runs", k.display());
    }
    for f in ["p1.simg", "eval/metrics.tsv", "eval/f1.tsv", "bench/results.tsv", "traj.tsv", "al/history.tsv", "lp.ckpt.loss.tsv"] {
        assert!(sa.contains_key(std::path::Path::new(f)), "{f} missing");
    }
}

#[test]
fn different_seed_changes_trained_model() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    fs::write(p.join("run.toml"), TINY).unwrap();
    ok(p, &["generate", "--count", "10", "--out", "mols"]);
    ok(p, &["oracle", "mols", "--out", "mols"]);
    ok(p, &["--config", "run.toml", "train-lp", "--data", "mols", "--out", "a.ckpt"]);
    ok(p, &["--config", "run.toml", "--seed", "4", "train-lp", "--data", "mols", "--out", "b.ckpt"]);
    assert_ne!(fs::read(p.join("a.ckpt")).unwrap(), fs::read(p.join("b.ckpt")).unwrap());
}

#[test]
fn malformed_input_exits_one_with_location() {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("bad.molj"), "{\"atoms\": [\n  {\"el\": \"C\", \"xyz\": [0, 0]}\n]}\n").unwrap();
    let out = simg(d.path(), &["parse", "bad.molj"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.molj:2:"), "{err}");
}

#[test]
fn parse_reports_every_file() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    ok(p, &["generate", "--count", "3", "--out", "mols"]);
    fs::write(p.join("mols/zz.molj"), "not json").unwrap();
    let out = simg(p, &["parse", "mols"]);
    assert_eq!(out.status.code(), Some(1));
    let report = String::from_utf8_lossy(&out.stdout);
    assert_eq!(report.lines().count(), 5);
    assert_eq!(report.lines().filter(|l| l.contains("\tok\t")).count(), 3);
}

#[test]
fn labels_inconsistent_with_molecule_are_rejected() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    ok(p, &["generate", "--count", "2", "--out", "mols"]);
    ok(p, &["oracle", "mols", "--out", "mols"]);
    let out = simg(p, &["build-graph", "mols/m00000.molj", "mols/m00001.nboj", "--out", "x.simg"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!p.join("x.simg").exists());
}

#[test]
fn zero_round_active_learning_succeeds() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    fs::write(p.join("run.toml"), TINY).unwrap();
    ok(p, &["generate", "--count", "12", "--out", "mols"]);
    ok(p, &["--config", "run.toml", "al-run", "--pool", "pool", "--molecules", "mols", "--rounds", "0", "--out", "al"]);
    let history = fs::read_to_string(p.join("al/history.tsv")).unwrap();
    let rows: Vec<&str> = history.lines().filter(|l| !l.starts_with("round")).collect();
    assert_eq!(rows, ["0\t6\t0\t0.000000\t0.0000"]);
    assert!(p.join("pool/manifest.tsv").is_file());
}

#[test]
fn active_learning_resumes_from_pool_state() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    fs::write(p.join("run.toml"), TINY).unwrap();
    ok(p, &["generate", "--count", "16", "--out", "mols"]);
    let c = ["--config", "run.toml"];
    ok(p, &[&c[..], &["al-run", "--pool", "pool", "--molecules", "mols", "--rounds", "1", "--out", "r1"]].concat());
    let before = fs::read_to_string(p.join("pool/manifest.tsv")).unwrap();
    ok(p, &[&c[..], &["al-run", "--pool", "pool", "--rounds", "1", "--out", "r2"]].concat());
    let after = fs::read_to_string(p.join("pool/manifest.tsv")).unwrap();
    assert_ne!(before, after);
}

#[test]
fn predict_writes_one_graph() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    fs::write(p.join("run.toml"), TINY).unwrap();
    ok(p, &["generate", "--count", "8", "--out", "mols"]);
    ok(p, &["oracle", "mols", "--out", "mols"]);
    let c = ["--config", "run.toml"];
    ok(p, &[&c[..], &["train-lp", "--data", "mols", "--out", "lp.ckpt"]].concat());
    ok(p, &[&c[..], &["train-mt", "--data", "mols", "--out", "mt.ckpt"]].concat());
    ok(p, &[&c[..], &["predict", "mols/m00003.molj", "--lp", "lp.ckpt", "--mt", "mt.ckpt", "--out", "out/p.simg"]].concat());
    let files = snapshot(&p.join("out"));
    assert_eq!(files.len(), 2);
    let text = fs::read_to_string(p.join("out/p.simg")).unwrap();
    ok(p, &["parse", "out/p.simg"]);
    assert!(text.contains("SIMG1"));
}

#[test]
fn stale_or_mismatched_checkpoints_are_rejected() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    fs::write(p.join("run.toml"), TINY).unwrap();
    fs::write(p.join("wide.toml"), TINY.replace("[lp_model]\nhidden = 8", "[lp_model]\nhidden = 12")).unwrap();
    ok(p, &["generate", "--count", "8", "--out", "mols"]);
    ok(p, &["oracle", "mols", "--out", "mols"]);
    let c = ["--config", "run.toml"];
    ok(p, &[&c[..], &["train-lp", "--data", "mols", "--out", "lp.ckpt"]].concat());
    ok(p, &[&c[..], &["train-mt", "--data", "mols", "--out", "mt.ckpt"]].concat());
    let predict = ["predict", "mols/m00000.molj", "--lp", "lp.ckpt", "--mt", "mt.ckpt", "--out", "p.simg"];

    let out = simg(p, &[&["--config", "wide.toml"][..], &predict].concat());
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));

    let out = simg(p, &[&c[..], &["predict", "mols/m00000.molj", "--lp", "mt.ckpt", "--mt", "mt.ckpt", "--out", "p.simg"]].concat());
    assert_eq!(out.status.code(), Some(1));

    let mut bytes = fs::read(p.join("lp.ckpt")).unwrap();
    let n = bytes.len();
    bytes[n - 1] ^= 1;
    fs::write(p.join("lp.ckpt"), bytes).unwrap();
    let out = simg(p, &[&c[..], &predict].concat());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("does not match its manifest"));
    assert!(!p.join("p.simg").exists());
}

#[test]
fn failure_removes_partial_outputs() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    ok(p, &["generate", "--count", "3", "--out", "mols"]);
    fs::write(p.join("mols/zz.molj"), "{\"atoms\": [{\"el\": \"Qq\", \"xyz\": [0, 0, 0]}], \"bonds\": []}").unwrap();
    let out = simg(p, &["oracle", "mols", "--out", "labels"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!p.join("labels").exists());

    fs::create_dir(p.join("keep")).unwrap();
    let out = simg(p, &["oracle", "mols", "--out", "keep"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(fs::read_dir(p.join("keep")).unwrap().next().is_none());
}

#[test]
fn invalid_configuration_exits_one() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    fs::write(p.join("bad.toml"), "seed = 1\nunknown_key = 2\n").unwrap();
    let out = simg(p, &["--config", "bad.toml", "generate", "--out", "m"]);
    assert_eq!(out.status.code(), Some(1));
    let out = simg(p, &["--threshold", "1.5", "generate", "--out", "m"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!p.join("m").exists());
}

#[test]
fn missing_file_is_invalid_input() {
    let d = tempfile::tempdir().unwrap();
    let out = simg(d.path(), &["build-graph", "nope.molj", "nope.nboj", "--out", "x.simg"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn oracle_text_labels_build_the_same_graph_as_json() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    ok(p, &["generate", "--count", "2", "--out", "mols"]);
    ok(p, &["oracle", "mols", "--out", "json"]);
    ok(p, &["oracle", "mols", "--format", "text", "--out", "text"]);
    ok(p, &["build-graph", "mols/m00001.molj", "json/m00001.nboj", "--out", "a.simg"]);
    ok(p, &["build-graph", "mols/m00001.molj", "text/m00001.nbotxt", "--out", "b.simg"]);
    assert_eq!(fs::read(p.join("a.simg")).unwrap(), fs::read(p.join("b.simg")).unwrap());
}
