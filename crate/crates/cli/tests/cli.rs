//! End-to-end runs of the `hitl` binary: outputs, exit codes, reruns.

use std::fs;
use std::net::TcpListener;
use std::path::Path;
use std::process::{Command, Output};

use chrono::{DateTime, Utc};
use hitl_core::session::create_session;
use hitl_core::synthetic::KeywordCorpus;
use hitl_core::{AnnotationSource, Oracle, SessionConfig};
use hitl_service::events::{round_events, Event, EventLog, LOG_VERSION};

fn hitl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hitl")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Synthetic train/test files in `dir`.
fn synth(dir: &Path, pool: usize, eval: usize) {
    let out = hitl(&["synth", "--out-dir", p(dir), "--pool-size", &pool.to_string(), "--eval-size", &eval.to_string()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

/// Parses a numeric CSV body (header dropped) into rows of fields.
fn rows(csv: &str) -> Vec<Vec<String>> {
    csv.lines().skip(1).map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn bench_defaults_write_a_full_curve() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 0, 400);
    let out_dir = dir.path().join("out");
    let out = hitl(&["bench", "--dataset", p(&dir.path().join("test.csv")), "--out-dir", p(&out_dir)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let curve = fs::read_to_string(out_dir.join("curve_seed42.csv")).unwrap();
    assert_eq!(curve.lines().next().unwrap(), "n_labels,accuracy,precision_macro,recall_macro");
    let body = rows(&curve);
    assert_eq!(body.len(), 16);
    for (i, r) in body.iter().enumerate() {
        assert_eq!(r[0], (i * 10).to_string());
        for v in &r[1..] {
            assert_eq!(v.split('.').nth(1).unwrap().len(), 6, "six decimals: {v}");
        }
    }
    assert!(out_dir.join("summary.csv").is_file());
    assert!(!out_dir.join("accuracy.svg").exists());
}

#[test]
fn seed_summary_matches_hand_averages() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 300, 200);
    let out_dir = dir.path().join("out");
    let out = hitl(&[
        "bench",
        "--dataset",
        p(&dir.path().join("train.csv")),
        "--test",
        p(&dir.path().join("test.csv")),
        "--protocol",
        "pool_protocol",
        "--strategy",
        "random",
        "--seed",
        "3",
        "--seed",
        "8",
        "--noise",
        "0.1",
        "--svg",
        "--out-dir",
        p(&out_dir),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let a = rows(&fs::read_to_string(out_dir.join("curve_seed3.csv")).unwrap());
    let b = rows(&fs::read_to_string(out_dir.join("curve_seed8.csv")).unwrap());
    assert_ne!(a, b, "different seeds, different runs");
    let summary = fs::read_to_string(out_dir.join("summary.csv")).unwrap();
    assert!(summary.starts_with("n_labels,n_seeds,accuracy_mean,accuracy_min,accuracy_max,"));
    let s = rows(&summary);
    assert_eq!(s.len(), 16);
    for ((ra, rb), rs) in a.iter().zip(&b).zip(&s) {
        assert_eq!(rs[0], ra[0]);
        assert_eq!(rs[1], "2");
        for m in 0..3 {
            let x: f64 = ra[1 + m].parse().unwrap();
            let y: f64 = rb[1 + m].parse().unwrap();
            let mean: f64 = rs[2 + 3 * m].parse().unwrap();
            let min: f64 = rs[3 + 3 * m].parse().unwrap();
            let max: f64 = rs[4 + 3 * m].parse().unwrap();
            assert!((mean - (x + y) / 2.0).abs() < 1e-9, "mean {mean} vs {x},{y}");
            assert_eq!(min, x.min(y));
            assert_eq!(max, x.max(y));
        }
    }
    for m in ["accuracy", "precision_macro", "recall_macro"] {
        let svg = fs::read_to_string(out_dir.join(format!("{m}.svg"))).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 3, "two seeds and a mean");
    }
}

#[test]
fn gold_dependent_strategy_on_unlabeled_pool_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 0, 100);
    let pool = dir.path().join("pool.csv");
    let mut text = String::from("id,text,label\n");
    for i in 0..30 {
        text.push_str(&format!("u{i},stock market rally {i},\n"));
    }
    fs::write(&pool, text).unwrap();
    let out_dir = dir.path().join("out");
    let args = |strategy: &'static str| {
        vec![
            "bench".to_string(),
            "--dataset".into(),
            p(&pool).into(),
            "--test".into(),
            p(&dir.path().join("test.csv")).into(),
            "--protocol".into(),
            "pool_protocol".into(),
            "--strategy".into(),
            strategy.into(),
            "--out-dir".into(),
            p(&out_dir).into(),
        ]
    };
    let run = |a: Vec<String>| hitl(&a.iter().map(String::as_str).collect::<Vec<_>>());
    let out = run(args("misclassified_first"));
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!out_dir.exists());
    // Even uncertainty sampling needs gold answers for the simulated oracle.
    assert_eq!(code(&run(args("max_entropy"))), 3);
}

#[test]
fn compare_runs_every_strategy_over_every_seed() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 300, 200);
    let out_dir = dir.path().join("cmp");
    let (train, test) = (dir.path().join("train.csv"), dir.path().join("test.csv"));
    let mut args = vec![
        "compare",
        "--dataset",
        p(&train),
        "--test",
        p(&test),
        "--protocol",
        "pool_protocol",
        "--strategies",
        "max_entropy,random",
        "--out-dir",
    ];
    let out_s = out_dir.to_str().unwrap().to_string();
    args.push(&out_s);
    for s in ["1", "2", "3", "4", "5"] {
        args.extend(["--seed", s]);
    }
    let out = hitl(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(out_dir.join("compare.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "strategy,seed,n_labels,accuracy,precision_macro,recall_macro");
    let body = rows(&csv);
    assert_eq!(body.len(), 2 * 5 * 16);
    for strategy in ["max_entropy", "random"] {
        for seed in 1..=5 {
            let n = body.iter().filter(|r| r[0] == strategy && r[1] == seed.to_string()).count();
            assert_eq!(n, 16, "{strategy} seed {seed}");
        }
    }
    // Round 0 is the untrained model, so every strategy starts from the same point.
    let zero: Vec<&[String]> = body.iter().filter(|r| r[2] == "0").map(|r| &r[3..]).collect();
    assert_eq!(zero.len(), 10);
    assert!(zero.windows(2).all(|w| w[0] == w[1]));

    let single = hitl(&["compare", "--dataset", p(&dir.path().join("test.csv")), "--strategies", "random", "--out-dir", p(&dir.path().join("x"))]);
    assert_eq!(code(&single), 2);
    let twice = hitl(&["compare", "--dataset", p(&dir.path().join("test.csv")), "--strategies", "random,random", "--out-dir", p(&dir.path().join("x"))]);
    assert_eq!(code(&twice), 2);
}

#[test]
fn serve_on_an_occupied_port_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let busy = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = busy.local_addr().unwrap().to_string();
    let out = hitl(&["serve", "--listen", &addr, "--data-dir", p(dir.path())]);
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("in use"));
}

#[test]
fn bad_config_file_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("hitl.toml");
    fs::write(&cfg, "listen = \"127.0.0.1:0\"\nport = 3\n").unwrap();
    assert_eq!(code(&hitl(&["serve", "--config", p(&cfg)])), 2);
}

/// A session log with three submitted rounds, written the way the service does.
fn three_round_log(path: &Path) {
    let (_, eval, schema) = KeywordCorpus { pool_size: 0, eval_size: 80, seed: 5, ..Default::default() }.generate();
    let config = SessionConfig { batch_size: 5, max_labels: 40, ..Default::default() };
    let mut state = create_session("s-export", &[], &eval, &schema, config).unwrap();
    let created = Event::Created {
        v: LOG_VERSION,
        session_id: "s-export".into(),
        dataset: "kw".into(),
        created_at: DateTime::<Utc>::UNIX_EPOCH,
        config,
        labels: schema.labels().to_vec(),
        pool: Vec::new(),
        eval: eval.clone(),
        cold_start: None,
    };
    let log = EventLog::create(path, &created).unwrap();
    let mut oracle = Oracle::from_documents(&eval, schema.len(), 0.0, 1).unwrap();
    for _ in 0..3 {
        let labels: Vec<(String, usize)> = state
            .next_batch()
            .unwrap()
            .iter()
            .map(|(d, _)| (d.doc_id.clone(), oracle.label(&d.doc_id).unwrap()))
            .collect();
        state.submit_annotations(&labels, AnnotationSource::Human, DateTime::<Utc>::UNIX_EPOCH).unwrap();
        log.append(&round_events(&state)).unwrap();
    }
}

#[test]
fn export_replays_a_session_log() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("s-export.jsonl");
    three_round_log(&log);
    let out_dir = dir.path().join("export");
    let out = hitl(&["export", "--log", p(&log), "--out-dir", p(&out_dir)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let curve = fs::read_to_string(out_dir.join("curve.csv")).unwrap();
    let labels: Vec<String> = rows(&curve).into_iter().map(|r| r[0].clone()).collect();
    assert_eq!(labels, ["0", "5", "10", "15"]);
    let bundle: serde_json::Value = serde_json::from_slice(&fs::read(out_dir.join("bundle.json")).unwrap()).unwrap();
    assert_eq!(bundle["v"], 1);
    assert_eq!(bundle["curve"].as_array().unwrap().len(), 4);
    assert_eq!(fs::read_to_string(out_dir.join("annotations.jsonl")).unwrap().lines().count(), 15);
    let model: serde_json::Value = serde_json::from_slice(&fs::read(out_dir.join("model.json")).unwrap()).unwrap();
    let vocab: serde_json::Value = serde_json::from_slice(&fs::read(out_dir.join("vocabulary.json")).unwrap()).unwrap();
    assert!(model.is_object() && !vocab.is_null());

    let first: Vec<Vec<u8>> = ["model.json", "curve.csv", "bundle.json"].iter().map(|f| fs::read(out_dir.join(f)).unwrap()).collect();
    assert_eq!(code(&hitl(&["export", "--log", p(&log), "--out-dir", p(&out_dir)])), 0);
    let second: Vec<Vec<u8>> = ["model.json", "curve.csv", "bundle.json"].iter().map(|f| fs::read(out_dir.join(f)).unwrap()).collect();
    assert_eq!(first, second);

    let missing = hitl(&["export", "--log", p(&dir.path().join("nope.jsonl")), "--out-dir", p(&dir.path().join("e2"))]);
    assert_eq!(code(&missing), 3);
    assert!(!dir.path().join("e2").exists());
}

#[test]
fn bad_dataset_exits_3_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "id,body\n1,hello\n").unwrap();
    let out_dir = dir.path().join("out");
    let out = hitl(&["bench", "--dataset", p(&bad), "--out-dir", p(&out_dir)]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!out_dir.exists() || fs::read_dir(&out_dir).unwrap().next().is_none());

    let missing = hitl(&["bench", "--dataset", p(&dir.path().join("absent.csv")), "--out-dir", p(&out_dir)]);
    assert_eq!(code(&missing), 3);
    assert_eq!(code(&hitl(&["bench", "--dataset", p(&bad), "--batch-size", "0"])), 2);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 200, 150);
    let run = |out: &str| {
        let out_dir = dir.path().join(out);
        let o = hitl(&[
            "bench",
            "--dataset",
            p(&dir.path().join("train.csv")),
            "--test",
            p(&dir.path().join("test.csv")),
            "--protocol",
            "pool_protocol",
            "--strategy",
            "least_confidence",
            "--seed",
            "7",
            "--seed",
            "9",
            "--noise",
            "0.2",
            "--svg",
            "--out-dir",
            p(&out_dir),
        ]);
        assert_eq!(code(&o), 0);
        let mut names: Vec<_> = fs::read_dir(&out_dir).unwrap().map(|e| e.unwrap().file_name()).collect();
        names.sort();
        names.into_iter().map(|n| (n.clone(), fs::read(out_dir.join(n)).unwrap())).collect::<Vec<_>>()
    };
    let a = run("a");
    assert_eq!(a.len(), 6);
    assert_eq!(a, run("b"));
}

#[test]
fn ingest_stores_a_dataset() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 50, 40);
    let data = dir.path().join("data");
    let args = |name: &str| {
        hitl(&[
            "ingest",
            "--name",
            name,
            "--dataset",
            p(&dir.path().join("train.csv")),
            "--test",
            p(&dir.path().join("test.csv")),
            "--schema",
            p(&dir.path().join("schema.json")),
            "--data-dir",
            p(&data),
        ])
    };
    let out = args("kw");
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let ds = hitl_service::store::load(&data, "kw").unwrap().unwrap();
    assert_eq!((ds.train.len(), ds.test.map(|t| t.len())), (50, Some(40)));
    assert_eq!(ds.schema.len(), 4);
    assert_eq!(code(&args("kw")), 2, "names are never overwritten");
    assert_eq!(code(&args("../escape")), 2);
}
