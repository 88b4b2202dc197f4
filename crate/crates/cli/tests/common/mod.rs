#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const TINY: &str = "seed = 3
partitions = 2
[lp_model]
hidden = 8
layers = 1
[lp_train]
epochs = 2
[mt_model]
hidden = 8
[mt_train]
epochs = 2
[bench]
hidden = 8
epochs = 2
[active_learning]
ensemble_size = 2
k = 2
per_part = 4
initial = 6
[active_learning.lp_train]
epochs = 1
[active_learning.mt_train]
epochs = 1
";

pub fn simg(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_simg")).current_dir(dir).args(args).env("SIMG_LOG", "error").output().expect("binary runs")
}

pub fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = simg(dir, args);
    assert!(out.status.success(), "simg {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

/// Every file under `dir`, by relative path.
pub fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(base: &Path, d: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in std::fs::read_dir(d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(base, &p, out);
            } else {
                out.insert(p.strip_prefix(base).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

/// Runs every subcommand once in `dir` and returns captured stdout per step.
pub fn pipeline(dir: &Path) -> Vec<Vec<u8>> {
    std::fs::write(dir.join("run.toml"), TINY).unwrap();
    let c = ["--config", "run.toml"];
    let steps: Vec<Vec<&str>> = vec![
        vec!["generate", "--count", "24", "--out", "mols"],
        vec!["generate", "--count", "1", "--chains", "--out", "chains"],
        vec!["generate", "--count", "6", "--out", "held"],
        vec!["oracle", "mols", "--out", "mols"],
        vec!["oracle", "chains", "--format", "text", "--out", "chains"],
        vec!["parse", "mols", "chains", "--out", "parse.tsv"],
        vec!["build-graph", "mols/m00000.molj", "mols/m00000.nboj", "--out", "m0.simg"],
        vec!["train-lp", "--data", "mols", "--out", "lp.ckpt"],
        vec!["train-mt", "--data", "mols", "--out", "mt.ckpt"],
        vec!["predict", "mols/m00001.molj", "--lp", "lp.ckpt", "--mt", "mt.ckpt", "--out", "p1.simg"],
        vec!["eval", "--data", "mols", "--mt", "mt.ckpt", "--lp", "lp.ckpt", "--matrices", "--out", "eval"],
        vec!["bench", "--data", "mols", "--variants", "mol-graph,full-simg,simg-star", "--lp", "lp.ckpt", "--mt", "mt.ckpt", "--out", "bench"],
        vec!["export-traj", "m0.simg", "--mt", "mt.ckpt", "--out", "traj.tsv"],
        vec!["export-traj", "mols/m00002.molj", "--mt", "mt.ckpt", "--lp", "lp.ckpt", "--out", "traj2.tsv"],
        vec!["al-run", "--pool", "pool", "--molecules", "mols", "--held-out", "held", "--rounds", "2", "--out", "al"],
    ];
    steps
        .iter()
        .map(|s| {
            let args: Vec<&str> = c.iter().copied().chain(s.iter().copied()).collect();
            ok(dir, &args).stdout
        })
        .collect()
}
