use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Child, Command, Stdio};

use serde_json::{json, Value};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_prefalign"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str], dir: &Path) -> String {
    let out = bin().args(args).current_dir(dir).output().unwrap();
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn corpus_and_pairs(dir: &Path) {
    run(&["--seed", "5", "--out", "corpus.jsonl", "gen-corpus", "--per-type", "8"], dir);
    run(
        &["--seed", "5", "--out", "pairs.jsonl", "gen-pairs", "--corpus", "corpus.jsonl", "--kind", "intra"],
        dir,
    );
}

#[test]
fn pipeline_commands_chain_and_repeat() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    corpus_and_pairs(d);
    let pairs = std::fs::read_to_string(d.join("pairs.jsonl")).unwrap();
    assert!(pairs.lines().count() > 5);
    let again = run(&["--seed", "5", "gen-pairs", "--corpus", "corpus.jsonl", "--kind", "intra"], d);
    assert_eq!(again, pairs);

    run(&["--seed", "5", "--out", "dpo.ckpt", "train", "--pairs", "pairs.jsonl"], d);
    run(
        &["--seed", "5", "--out", "sft.ckpt", "train", "--pairs", "pairs.jsonl", "--objective", "sft"],
        d,
    );
    let report: Value = serde_json::from_str(&run(&["--seed", "5", "eval", "--model", "dpo.ckpt"], d)).unwrap();
    let scenarios: Vec<&str> = report["scenarios"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["scenario"].as_str().unwrap())
        .collect();
    assert_eq!(scenarios, ["regular", "articulatory", "code_switching", "cross_lingual"]);

    let arena: Value = serde_json::from_str(&run(
        &["--seed", "5", "arena", "--corpus", "corpus.jsonl", "--model", "dpo.ckpt", "--model", "sft.ckpt"],
        d,
    ))
    .unwrap();
    assert_eq!(arena["cells"][0][0], json!(0.0));

    run(&["--seed", "5", "--out", "rounds", "iterate", "--corpus", "corpus.jsonl", "--rounds", "1"], d);
    assert!(d.join("rounds/round-1.ckpt").exists());
    let it: Value = serde_json::from_str(&std::fs::read_to_string(d.join("rounds/report.json")).unwrap()).unwrap();
    assert_eq!(it["rounds"].as_array().unwrap().len(), 1);
}

#[test]
fn config_file_is_applied_and_checked() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    corpus_and_pairs(d);
    std::fs::write(d.join("mgm.cfg"), "paradigm = mgm\n").unwrap();
    run(
        &["--config", "mgm.cfg", "--seed", "5", "--out", "mgm.ckpt", "train", "--objective", "sft", "--pairs", "pairs.jsonl"],
        d,
    );
    let model = prefalign::toymodels::checkpoint::load(&d.join("mgm.ckpt")).unwrap();
    assert_eq!(model.paradigm(), prefalign::toymodels::Paradigm::Mgm);

    std::fs::write(d.join("bad.cfg"), "paradigm = ar\nlearning_rate = 1\n").unwrap();
    let out = bin()
        .args(["--config", "bad.cfg", "eval"])
        .current_dir(d)
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rate"));

    let out = bin().args(["train", "--pairs", "pairs.jsonl"]).current_dir(d).output().unwrap();
    assert!(!out.status.success(), "training without --out must fail");
}

struct Server {
    child: Child,
    base: String,
}

fn start(dir: &Path) -> Server {
    let mut child = bin()
        .args([
            "--seed",
            "5",
            "serve-anno",
            "--pairs",
            "pairs.jsonl",
            "--journal",
            "journal.jsonl",
            "--addr",
            "127.0.0.1:0",
            "--kind",
            "reading_accuracy",
        ])
        .current_dir(dir)
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let base = line
        .trim()
        .strip_prefix("listening on ")
        .unwrap_or_else(|| panic!("unexpected banner {line:?}"))
        .to_string();
    Server { child, base }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

#[test]
fn annotations_survive_a_hard_kill() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    corpus_and_pairs(d);
    let http = reqwest::blocking::Client::new();
    let mut server = start(d);
    let session: Value = http
        .get(format!("{}/api/v1/session/new", server.base))
        .send()
        .unwrap()
        .json()
        .unwrap();
    let session = session["session_id"].as_str().unwrap().to_string();
    let mut answered = Vec::new();
    for i in 0..6 {
        let task: Value = http
            .get(format!("{}/api/v1/task?session={session}", server.base))
            .send()
            .unwrap()
            .json()
            .unwrap();
        let id = task["task_id"].as_u64().unwrap();
        let judgment = if i % 2 == 0 { "no_error" } else { "has_error" };
        let r = http
            .post(format!("{}/api/v1/submit", server.base))
            .json(&json!({"task_id": id, "session_id": session, "judgment": judgment}))
            .send()
            .unwrap();
        assert_eq!(r.status().as_u16(), 200);
        answered.push(id);
    }
    // SIGKILL: no chance to flush or shut down cleanly.
    server.child.kill().unwrap();
    server.child.wait().unwrap();

    let server = start(d);
    let export = http
        .get(format!("{}/api/v1/export", server.base))
        .send()
        .unwrap()
        .text()
        .unwrap();
    let recorded: Vec<u64> = export
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap())
        .filter(|v| v["op"] == "record")
        .map(|v| v["task"].as_u64().unwrap())
        .collect();
    assert_eq!(recorded, answered);
    let again = http
        .post(format!("{}/api/v1/submit", server.base))
        .json(&json!({"task_id": answered[0], "session_id": session, "judgment": "no_error"}))
        .send()
        .unwrap();
    assert_eq!(again.status().as_u16(), 409);
    let reading: Value = http
        .get(format!("{}/api/v1/aggregate/reading", server.base))
        .send()
        .unwrap()
        .json()
        .unwrap();
    assert_eq!(reading["base"]["all"]["no_error"], json!(3));
    assert_eq!(reading["base"]["all"]["has_error"], json!(3));
}
