use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn atlas(dir: &Path, args: &[&str]) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_atlas"));
    cmd.current_dir(dir).args(args).env_remove("ATLAS_SEED").env_remove("ATLAS_CONFIG");
    cmd
}

fn ok(mut cmd: Command) -> Output {
    let out = cmd.output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    out
}

/// Exit code and the JSON error object printed on stderr.
fn failure(mut cmd: Command) -> (i32, Value) {
    let out = cmd.output().unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().rev().find(|l| l.starts_with('{')).unwrap_or_else(|| panic!("no JSON error in {stderr}"));
    (out.status.code().unwrap(), serde_json::from_str(line).unwrap())
}

fn base(dir: &Path) {
    ok(atlas(dir, &["synth", "--out-dir", "data", "--docs", "30", "--eval-docs", "10", "--seed", "4"]));
    ok(atlas(dir, &["ingest", "--corpus", "data/corpus.jsonl", "--out", "base.atlas"]));
}

#[test]
fn bad_weights_exit_2_with_json_error() {
    let dir = tempfile::tempdir().unwrap();
    base(dir.path());
    for weights in ["hypothesis=0.7,species=0.7", "hypothesis=abc", "=1"] {
        let (code, err) = failure(atlas(dir.path(), &["layout", "--atlas", "base.atlas", "--weights", weights, "--out", "x.atlas"]));
        assert_eq!(code, 2, "{weights}: {err}");
        assert_eq!(err["error"]["code"], "validation");
        assert!(err["error"]["message"].as_str().is_some_and(|m| !m.is_empty()));
    }
    assert!(!dir.path().join("x.atlas").exists());
}

#[test]
fn malformed_corpus_is_rejected_unless_lenient() {
    let dir = tempfile::tempdir().unwrap();
    let good = r#"{"id":"a","title":"A","abstract":"Enemy release explains the spread of the invader."}"#;
    fs::write(dir.path().join("c.jsonl"), format!("{good}\n{{not json\n")).unwrap();
    let (code, _) = failure(atlas(dir.path(), &["ingest", "--corpus", "c.jsonl", "--out", "a.atlas"]));
    assert_eq!(code, 2);
    ok(atlas(dir.path(), &["ingest", "--corpus", "c.jsonl", "--out", "a.atlas", "--lenient"]));
    assert!(dir.path().join("a.atlas").exists());
}

#[test]
fn missing_input_is_reported_as_json() {
    let dir = tempfile::tempdir().unwrap();
    let (code, err) = failure(atlas(dir.path(), &["ingest", "--corpus", "nope.jsonl", "--out", "a.atlas"]));
    assert_eq!(code, 2, "{err}");
    assert!(err.to_string().contains("nope.jsonl"));
}

#[test]
fn output_may_not_overwrite_input() {
    let dir = tempfile::tempdir().unwrap();
    base(dir.path());
    let before = fs::read(dir.path().join("base.atlas")).unwrap();
    let (code, err) = failure(atlas(dir.path(), &["layout", "--atlas", "base.atlas", "--weights", "hypothesis=1", "--out", "./base.atlas"]));
    assert_eq!(code, 2, "{err}");
    assert_eq!(fs::read(dir.path().join("base.atlas")).unwrap(), before);
}

#[test]
fn flags_beat_env_beat_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("atlas.toml"), "[synth]\nseed = 1\ndocs = 12\neval_docs = 4\n").unwrap();
    let corpus = |name: &str| fs::read(d.join(name).join("corpus.jsonl")).unwrap();

    for seed in ["1", "2", "3"] {
        ok(atlas(d, &["synth", "--out-dir", &format!("ref{seed}"), "--docs", "12", "--eval-docs", "4", "--seed", seed]));
    }
    ok(atlas(d, &["--config", "atlas.toml", "synth", "--out-dir", "file"]));
    let mut env = atlas(d, &["synth", "--out-dir", "env"]);
    env.env("ATLAS_CONFIG", "atlas.toml").env("ATLAS_SEED", "2");
    ok(env);
    let mut flag = atlas(d, &["--config", "atlas.toml", "synth", "--out-dir", "flag", "--seed", "3"]);
    flag.env("ATLAS_SEED", "2");
    ok(flag);

    assert_eq!(corpus("file"), corpus("ref1"));
    assert_eq!(corpus("env"), corpus("ref2"));
    assert_eq!(corpus("flag"), corpus("ref3"));
    assert_ne!(corpus("ref1"), corpus("ref2"));

    fs::write(d.join("bad.toml"), "[synth]\nsede = 1\n").unwrap();
    let (code, err) = failure(atlas(d, &["--config", "bad.toml", "synth", "--out-dir", "bad"]));
    assert_eq!(code, 2);
    assert!(err["error"]["message"].as_str().unwrap().contains("sede"));
}

fn pairs(path: &Path) -> Vec<(String, String)> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| {
            let v: Value = serde_json::from_str(l).unwrap();
            (v["doc_id"].as_str().unwrap().to_string(), v["aspect"].as_str().unwrap().to_string())
        })
        .collect()
}

#[test]
fn summarize_resumes_without_duplicates() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    base(d);
    let run = |out: &str, limit: Option<&str>| {
        let mut args = vec!["summarize", "--atlas", "base.atlas", "--aspect", "hypothesis", "--aspect", "species", "--out", out];
        if let Some(l) = limit {
            args.extend(["--limit", l]);
        }
        ok(atlas(d, &args));
    };
    run("once.jsonl", None);
    run("resumed.jsonl", Some("7"));
    // refused pairs count against the limit but land in the side file
    let lines = |name: &str| fs::read_to_string(d.join(name)).map(|t| t.lines().count()).unwrap_or(0);
    assert_eq!(lines("resumed.jsonl") + lines("resumed.jsonl.refused"), 7);
    // an interrupted write leaves half a line behind
    let mut text = fs::read_to_string(d.join("resumed.jsonl")).unwrap();
    text.push_str(r#"{"doc_id":"doc00"#);
    fs::write(d.join("resumed.jsonl"), text).unwrap();
    run("resumed.jsonl", Some("20"));
    run("resumed.jsonl", None);
    run("resumed.jsonl", None);

    let resumed = pairs(&d.join("resumed.jsonl"));
    let unique: BTreeSet<_> = resumed.iter().cloned().collect();
    assert_eq!(unique.len(), resumed.len(), "duplicate (doc, aspect) records");
    assert_eq!(unique, pairs(&d.join("once.jsonl")).into_iter().collect::<BTreeSet<_>>());
    assert_eq!(lines("resumed.jsonl.refused"), lines("once.jsonl.refused"));
}

#[test]
fn summarize_rejects_more_than_four_summaries() {
    let dir = tempfile::tempdir().unwrap();
    base(dir.path());
    let (code, _) =
        failure(atlas(dir.path(), &["summarize", "--atlas", "base.atlas", "--aspect", "hypothesis", "--n", "5", "--out", "s.jsonl"]));
    assert_eq!(code, 2);
}
