use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use serde_json::Value;

fn convrec(args: &[&str], stdin: Option<&str>) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_convrec"))
        .args(args)
        .env("RUST_LOG", "warn")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let input = stdin.unwrap_or("").to_string();
    let mut pipe = child.stdin.take().unwrap();
    std::thread::spawn(move || pipe.write_all(input.as_bytes()));
    child.wait_with_output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = convrec(args, None);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn trained(dir: &Path) -> String {
    let d = dir.to_str().unwrap();
    ok(&["synth", "--out", d, "--dialogues", "40", "--movies", "10", "--users", "200", "--density", "0.3"]);
    let config = dir.join("config.toml").to_str().unwrap().to_string();
    ok(&["--config", &config, "pretrain-recommender", "--epochs", "2"]);
    ok(&["--config", &config, "train-sentiment", "--epochs", "1"]);
    ok(&["--config", &config, "train-dialogue", "--epochs", "1"]);
    config
}

#[test]
fn stats_on_empty_corpus_is_all_zero() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.jsonl");
    std::fs::write(&path, "").unwrap();
    let v: Value = serde_json::from_str(&ok(&["--json", "stats", path.to_str().unwrap()])).unwrap();
    assert_eq!(v["conversations"], 0);
    assert_eq!(v["utterances"], 0);
    assert_eq!(v["movie_mentions"], 0);
}

#[test]
fn exit_codes() {
    assert_eq!(convrec(&["no-such-command"], None).status.code(), Some(1));
    assert_eq!(convrec(&["--help"], None).status.code(), Some(0));
    assert_eq!(convrec(&["stats"], None).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nothing");
    let out = convrec(&["--checkpoint-dir", missing.to_str().unwrap(), "chat"], Some("hi\n"));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no checkpoint"));
    let out = convrec(&["stats", dir.path().join("absent.jsonl").to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn chat_is_deterministic_and_warns_on_unknown_movies() {
    let dir = tempfile::tempdir().unwrap();
    let config = trained(dir.path());
    let script = "hi there !\ni have seen @100 and i loved it .\nwhat about @999999 ?\n";
    let run = || {
        let out = convrec(&["--config", &config, "chat"], Some(script));
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    };
    let first = run();
    assert_eq!(first, run());
    assert_eq!(first.lines().filter(|l| l.starts_with("recommender: ")).count(), 3);
    assert!(first.contains("warning: movie @999999"));
    assert!(first.contains("turn 3 |"));

    let out = convrec(&["--config", &config, "--json", "chat"], Some(script));
    let turns: Vec<Value> = String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(turns.len(), 3);
    assert_eq!(turns[2]["diagnostics"]["turns"], 3);
    assert!(turns[2]["reply"]["warnings"].as_array().is_some_and(|w| !w.is_empty()));
}

#[test]
fn mismatched_model_sizes_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = trained(dir.path());
    let text = std::fs::read_to_string(&config).unwrap();
    std::fs::write(&config, text.replacen("conversation_hidden = 32", "conversation_hidden = 24", 1)).unwrap();
    let out = convrec(&["--config", &config, "train-sentiment", "--epochs", "1"], None);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("differ"));
}
