use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::{Command, Output, Stdio};

use serde_json::Value;
use tempfile::TempDir;

const DAY: i64 = 86_400;

/// Four fixed five-item patterns; items `i{5p+k}` with category `c{(p+k)%4}`.
/// Forty training sessions (ten per pattern) and eight test sessions two
/// months later. One training session carries a rare item that preprocessing
/// drops, and one line is malformed.
fn click_log() -> String {
    let mut out = String::new();
    let mut write_session = |key: &str, day: i64, p: usize| {
        for k in 0..5 {
            let ts = day * DAY + 60 * k as i64;
            out.push_str(&format!("{key},{ts},i{},c{}\n", 5 * p + k, (p + k) % 4));
        }
    };
    for s in 0..40 {
        write_session(&format!("tr{s}"), s as i64, s % 4);
    }
    for s in 0..8 {
        write_session(&format!("te{s}"), 100, s % 4);
    }
    out.push_str(&format!("tr0,{},rare,c0\n", 30));
    out.push_str("tr1,not-a-time,i1,c1\n");
    out
}

fn cares(args: &[&str], stdin: Option<&str>) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_cares"))
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    {
        let mut pipe = child.stdin.take().unwrap();
        if let Some(text) = stdin {
            pipe.write_all(text.as_bytes()).unwrap();
        }
    }
    child.wait_with_output().unwrap()
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new() -> Self {
        let w = Workspace { dir: TempDir::new().unwrap() };
        fs::write(w.path("clicks.csv"), click_log()).unwrap();
        w
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn s(&self, name: &str) -> String {
        self.path(name).to_str().unwrap().to_string()
    }

    fn preprocess(&self, out: &str, extra: &[&str]) -> String {
        let mut args = vec!["preprocess".to_string(), "--input".into(), self.s("clicks.csv"), "--out".into(), self.s(out)];
        args.extend(extra.iter().map(|s| s.to_string()));
        ok(&cares(&args.iter().map(String::as_str).collect::<Vec<_>>(), None))
    }

    fn build_graph(&self, data: &str, out: &str, extra: &[&str]) -> Value {
        let mut args = vec!["build-graph".to_string(), "--data".into(), self.s(data), "--out".into(), self.s(out)];
        args.extend(extra.iter().map(|s| s.to_string()));
        serde_json::from_str(&ok(&cares(&args.iter().map(String::as_str).collect::<Vec<_>>(), None))).unwrap()
    }

    fn train(&self, out: &str, extra: &[&str]) -> Vec<Value> {
        let mut args = vec![
            "train".to_string(),
            "--data".into(),
            self.s("data"),
            "--graph".into(),
            self.s("graph.bin"),
            "--out".into(),
            self.s(out),
            "--dim".into(),
            "32".into(),
            "--hash-dim".into(),
            "16".into(),
            "--batch-size".into(),
            "16".into(),
            "--lr".into(),
            "0.01".into(),
            "--deterministic".into(),
        ];
        args.extend(extra.iter().map(|s| s.to_string()));
        ok(&cares(&args.iter().map(String::as_str).collect::<Vec<_>>(), None))
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect()
    }

    /// Dataset, graph and a checkpoint trained long enough to memorize the
    /// patterns.
    fn trained() -> Self {
        let w = Workspace::new();
        w.preprocess("data", &[]);
        w.build_graph("data", "graph.bin", &[]);
        w.train("model.ckpt", &["--epochs", "30"]);
        w
    }
}

fn status(out: &Output) -> Option<i32> {
    out.status.code()
}

#[test]
fn preprocess_counts_and_determinism() {
    let w = Workspace::new();
    let stats: Value = serde_json::from_str(&w.preprocess("data", &[])).unwrap();
    assert_eq!(stats["train_sequences"], 40);
    assert_eq!(stats["test_sequences"], 8);
    assert_eq!(stats["train_sessions"], 160);
    assert_eq!(stats["test_sessions"], 32);
    assert_eq!(stats["items"], 20);
    assert_eq!(stats["categories"], 4);
    assert_eq!(stats["avg_length"], 5.0);

    w.preprocess("again", &[]);
    for f in ["train.jsonl", "test.jsonl", "train_sequences.jsonl", "test_sequences.jsonl", "vocab.json", "stats.json"] {
        assert_eq!(fs::read(w.path("data").join(f)).unwrap(), fs::read(w.path("again").join(f)).unwrap(), "{f}");
    }

    let last_only: Value = serde_json::from_str(&w.preprocess("last", &["--no-test-augment"])).unwrap();
    assert_eq!(last_only["test_sessions"], 8);
}

#[test]
fn preprocess_input_errors() {
    let w = Workspace::new();
    let missing = cares(&["preprocess", "--input", &w.s("nope.csv"), "--out", &w.s("data")], None);
    assert_eq!(status(&missing), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("nope.csv"));

    let no_out = cares(&["preprocess", "--input", &w.s("clicks.csv")], None);
    assert_eq!(status(&no_out), Some(2));

    fs::write(w.path("config.json"), r#"{"dimension": 3}"#).unwrap();
    let bad_key = cares(
        &["preprocess", "--input", &w.s("clicks.csv"), "--out", &w.s("d"), "--config", &w.s("config.json")],
        None,
    );
    assert_eq!(status(&bad_key), Some(2));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let w = Workspace::new();
    fs::write(w.path("config.json"), r#"{"min_item_freq": 50}"#).unwrap();
    let from_file = cares(
        &["preprocess", "--input", &w.s("clicks.csv"), "--out", &w.s("d"), "--config", &w.s("config.json")],
        None,
    );
    // Every item occurs at most 12 times.
    assert_eq!(status(&from_file), Some(2));
    let overridden = cares(
        &[
            "preprocess", "--input", &w.s("clicks.csv"), "--out", &w.s("d"),
            "--config", &w.s("config.json"), "--min-item-freq", "5",
        ],
        None,
    );
    ok(&overridden);
}

#[test]
fn build_graph_reports_relations() {
    let w = Workspace::new();
    w.preprocess("data", &[]);
    let none = w.build_graph("data", "g0.bin", &["--top-q", "0"]);
    assert_eq!(none["named_relations"].as_array().unwrap().len(), 0);
    assert_eq!(none["edges_per_relation"]["named"], 0);
    assert!(none["edges_per_relation"]["drift"].as_u64().unwrap() > 0);

    let named = w.build_graph("data", "g.bin", &[]);
    let pairs = named["named_relations"].as_array().unwrap();
    assert_eq!(pairs.len(), 5);
    assert_eq!(named["edges"], none["edges"]);

    let eps1 = w.build_graph("data", "g1.bin", &["--epsilon", "1"]);
    let eps2 = w.build_graph("data", "g2.bin", &["--epsilon", "2"]);
    assert!(eps1["edges"].as_u64() <= eps2["edges"].as_u64());

    let dump: Value = serde_json::from_str(&ok(&cares(
        &["inspect-graph", "--graph", &w.s("g.bin"), "--data", &w.s("data")],
        None,
    )))
    .unwrap();
    assert_eq!(dump["nodes"], 20);
    assert!(dump["edges"][0]["src"].as_str().unwrap().starts_with('i'));

    let mut bytes = fs::read(w.path("g.bin")).unwrap();
    bytes.truncate(bytes.len() - 3);
    fs::write(w.path("broken.bin"), bytes).unwrap();
    assert_eq!(status(&cares(&["inspect-graph", "--graph", &w.s("broken.bin")], None)), Some(2));
}

#[test]
fn train_logs_and_checkpoints() {
    let w = Workspace::new();
    w.preprocess("data", &[]);
    w.build_graph("data", "graph.bin", &[]);
    let log = w.train("a.ckpt", &["--epochs", "5", "--log", &w.s("a.log")]);
    assert_eq!(log.len(), 5);
    assert!(w.path("a.ckpt").is_file());
    assert_eq!(fs::read_to_string(w.path("a.log")).unwrap().lines().count(), 5);
    assert!(log.iter().all(|l| l["kl"].as_f64().unwrap() >= 0.0));

    let zero = w.train("z.ckpt", &["--epochs", "3", "--lambda", "0"]);
    assert!(zero.iter().all(|l| l["kl"] == 0.0));

    let strip = |v: &[Value]| -> Vec<Value> {
        v.iter()
            .map(|l| {
                let mut l = l.clone();
                l.as_object_mut().unwrap().remove("wall_seconds");
                l
            })
            .collect()
    };
    let again = w.train("b.ckpt", &["--epochs", "5"]);
    assert_eq!(strip(&log), strip(&again));

    // Resuming to 7 epochs continues the epoch counter.
    let more = w.train("a.ckpt", &["--epochs", "7", "--resume", &w.s("a.ckpt")]);
    assert_eq!(more.iter().map(|l| l["epoch"].as_u64().unwrap()).collect::<Vec<_>>(), [6, 7]);
}

#[test]
fn evaluate_and_recommend() {
    let w = Workspace::trained();
    let eval_args = |extra: &[&str]| -> Output {
        let mut a = vec![
            "evaluate".to_string(),
            "--data".into(),
            w.s("data"),
            "--graph".into(),
            w.s("graph.bin"),
            "--checkpoint".into(),
            w.s("model.ckpt"),
        ];
        a.extend(extra.iter().map(|s| s.to_string()));
        cares(&a.iter().map(String::as_str).collect::<Vec<_>>(), None)
    };
    let report: Value = serde_json::from_str(&ok(&eval_args(&["--ranks", &w.s("ranks.tsv")]))).unwrap();
    assert_eq!(report["n"], 32);
    assert_eq!(report["p_at_20"], 1.0);
    assert!(report["mrr_at_20"].as_f64().unwrap() > 0.8, "{report}");
    let tsv = fs::read_to_string(w.path("ranks.tsv")).unwrap();
    assert_eq!(tsv.lines().count(), 33);

    ok(&eval_args(&["--out", &w.s("report.json")]));
    let again: Value = serde_json::from_str(&fs::read_to_string(w.path("report.json")).unwrap()).unwrap();
    assert_eq!(report, again);

    let last: Value = serde_json::from_str(&ok(&eval_args(&["--no-test-augment"]))).unwrap();
    assert_eq!(last["n"], 8);

    let rec = |input: Option<&str>, k: &str| {
        cares(
            &[
                "recommend", "--data", &w.s("data"), "--graph", &w.s("graph.bin"),
                "--checkpoint", &w.s("model.ckpt"), "--k", k,
            ],
            input,
        )
    };
    let top: Value = serde_json::from_str(&ok(&rec(Some("i5 i6 i7\n"), "3"))).unwrap();
    assert_eq!(top.as_array().unwrap().len(), 3);
    assert_eq!(top[0]["item"], "i8");
    let all: Value = serde_json::from_str(&ok(&rec(Some("i0,i1"), "500"))).unwrap();
    assert_eq!(all.as_array().unwrap().len(), 20);
    assert_eq!(all[0]["item"], "i2");

    assert_eq!(status(&rec(Some(""), "3")), Some(2));
    let unknown = rec(Some("i0 nope rare"), "3");
    assert_eq!(status(&unknown), Some(2));
    let msg = String::from_utf8_lossy(&unknown.stderr);
    assert!(msg.contains("nope") && msg.contains("rare"), "{msg}");
}

#[test]
fn checkpoint_from_other_data_is_refused() {
    let w = Workspace::trained();
    // A different filter threshold drops items and changes the vocabulary.
    fs::write(
        w.path("other.csv"),
        click_log().lines().filter(|l| !l.contains(",i19,")).collect::<Vec<_>>().join("\n"),
    )
    .unwrap();
    ok(&cares(&["preprocess", "--input", &w.s("other.csv"), "--out", &w.s("other")], None));
    w.build_graph("other", "other.bin", &[]);
    let out = cares(
        &[
            "evaluate", "--data", &w.s("other"), "--graph", &w.s("other.bin"),
            "--checkpoint", &w.s("model.ckpt"),
        ],
        None,
    );
    assert_eq!(status(&out), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("vocab"));
}
