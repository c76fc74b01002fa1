mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use limv::corpus::{write_corpus, write_queries, Dtype, IndexManifest};

fn limv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_limv"))
        .args(args)
        .env("LIMV_THREADS", "1")
        .output()
        .expect("spawn limv")
}

fn ok(args: &[&str]) -> String {
    let out = limv(args);
    assert!(
        out.status.success(),
        "limv {args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn toy() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let (docs, queries, qrels) = common::toy_fixture();
        let m = IndexManifest::with_dim(8, Dtype::F32);
        write_corpus(&docs, &m, fs::File::create(dir.path().join("corpus.limv")).unwrap()).unwrap();
        write_queries(&queries, &m, fs::File::create(dir.path().join("queries.limq")).unwrap())
            .unwrap();
        fs::write(dir.path().join("qrels.txt"), qrels).unwrap();
        Workspace { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn p(&self, name: &str) -> String {
        self.path(name).to_string_lossy().into_owned()
    }
}

fn read(p: &Path) -> Vec<u8> {
    fs::read(p).unwrap()
}

#[test]
fn first_k_above_length_is_identity() {
    let ws = Workspace::toy();
    ok(&["prune", "--input", &ws.p("corpus.limv"), "--output", &ws.p("p.limv"), "--method", "first", "--k", "50"]);
    let (_, orig) = limv::corpus::read_corpus(&read(&ws.path("corpus.limv"))[..]).unwrap();
    let (m, pruned) = limv::corpus::read_corpus(&read(&ws.path("p.limv"))[..]).unwrap();
    assert_eq!(orig, pruned);
    assert_eq!(m.k, 50);
}

#[test]
fn full_pipeline_ranks_every_relevant_first() {
    let ws = Workspace::toy();
    ok(&["index", "--input", &ws.p("corpus.limv"), "--output", &ws.p("flat.limi")]);
    ok(&["search", "--index", &ws.p("flat.limi"), "--queries", &ws.p("queries.limq"), "--output", &ws.p("run.txt")]);
    let report = ok(&["evaluate", "--run", &ws.p("run.txt"), "--qrels", &ws.p("qrels.txt"), "--index", &ws.p("flat.limi")]);
    let v: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert_eq!(v["mrr_at_k"].as_f64(), Some(1.0));
    assert_eq!(v["recall_at_k"].as_f64(), Some(1.0));
    let first = fs::read_to_string(ws.path("run.txt")).unwrap();
    assert!(first.lines().next().unwrap().starts_with("q0 Q0 doc0 1 "));
}

#[test]
fn exhaustive_ivf_matches_flat_run() {
    let ws = Workspace::toy();
    ok(&["index", "--input", &ws.p("corpus.limv"), "--output", &ws.p("ivf.limi"), "--index-kind", "ivf", "--n-clusters", "4", "--seed", "3"]);
    let common = ["--index", &ws.p("ivf.limi"), "--queries", &ws.p("queries.limq")];
    ok(&[&["search"], &common[..], &["--output", &ws.p("flat.txt"), "--index-kind", "flat"]].concat());
    ok(&[&["search"], &common[..], &["--output", &ws.p("ivf.txt"), "--nprobe", "4", "--token-topk", "100"]].concat());
    assert_eq!(read(&ws.path("flat.txt")), read(&ws.path("ivf.txt")));
}

#[test]
fn reruns_are_byte_identical() {
    let ws = Workspace::toy();
    for run in ["a", "b"] {
        ok(&["prune", "--input", &ws.p("corpus.limv"), "--output", &ws.p(&format!("{run}.limv")), "--method", "idf", "--k", "2"]);
        ok(&["index", "--input", &ws.p(&format!("{run}.limv")), "--output", &ws.p(&format!("{run}.limi")), "--index-kind", "ivf", "--seed", "11"]);
        ok(&["search", "--index", &ws.p(&format!("{run}.limi")), "--queries", &ws.p("queries.limq"), "--output", &ws.p(&format!("{run}.txt"))]);
    }
    for ext in ["limv", "limi", "txt"] {
        assert_eq!(read(&ws.path(&format!("a.{ext}"))), read(&ws.path(&format!("b.{ext}"))), "{ext}");
    }
}

#[test]
fn failure_leaves_no_output() {
    let ws = Workspace::toy();
    fs::write(ws.path("bad.limv"), b"LIMVgarbage").unwrap();
    let out = limv(&["index", "--input", &ws.p("bad.limv"), "--output", &ws.p("out.limi")]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!ws.path("out.limi").exists());
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
}

#[test]
fn pruning_twice_is_refused() {
    let ws = Workspace::toy();
    ok(&["prune", "--input", &ws.p("corpus.limv"), "--output", &ws.p("p.limv"), "--method", "first", "--k", "2"]);
    let out = limv(&["prune", "--input", &ws.p("p.limv"), "--output", &ws.p("pp.limv"), "--method", "first", "--k", "1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!ws.path("pp.limv").exists());
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(limv(&["prune", "--bogus"]).status.code(), Some(2));
    assert_eq!(limv(&["prune", "--input", "x", "--output", "y", "--method", "random"]).status.code(), Some(2));
}

#[test]
fn stats_reports_retention_against_original() {
    let ws = Workspace::toy();
    ok(&["prune", "--input", &ws.p("corpus.limv"), "--output", &ws.p("p.limv"), "--method", "first", "--k", "2"]);
    let out = ok(&["stats", "--input", &ws.p("p.limv"), "--original", &ws.p("corpus.limv")]);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    // 5 docs kept at 2 tokens each out of 4 * 3 + 8
    assert_eq!(v["retention"].as_f64(), Some(50.0), "{v}");
}
