use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn molcom(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_molcom"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = molcom(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(args: &[&str]) -> i32 {
    molcom(args).status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("config.json");
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn gen_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for d in [&a, &b] {
        ok(&["gen", "--n", "2", "--msg-len", "5", "--seed", "7", "--out", s(d)]);
    }
    let fa = fs::read(a.join("transmissions.jsonl")).unwrap();
    assert_eq!(fa, fs::read(b.join("transmissions.jsonl")).unwrap());
    // Thread count does not change the corpus.
    let c = dir.path().join("c");
    ok(&[
        "gen",
        "--n",
        "2",
        "--msg-len",
        "5",
        "--seed",
        "7",
        "--deterministic",
        "--out",
        s(&c),
    ]);
    assert_eq!(fa, fs::read(c.join("transmissions.jsonl")).unwrap());
}

#[test]
fn gen_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&["gen", "--n", "0", "--out", s(dir.path())]), 1);
    assert_eq!(code(&["gen", "--bogus"]), 1);
    assert_eq!(code(&["frobnicate"]), 1);
    assert_eq!(code(&["--help"]), 0);
}

#[test]
fn gen_rejects_bad_config_and_unwritable_output() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), r#"{"modulation": {"alphabet_size": 1}}"#);
    assert_eq!(code(&["gen", "--n", "1", "--config", &bad, "--out", s(dir.path())]), 2);
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    assert_eq!(code(&["gen", "--n", "1", "--out", s(&blocker.join("sub"))]), 2);
}

/// Checks one record against the documented transmission schema.
fn check_record(rec: &Value) {
    let obj = rec.as_object().unwrap();
    let mut keys: Vec<&str> = obj.keys().map(String::as_str).collect();
    keys.sort();
    assert_eq!(keys, ["boundaries_s", "config", "symbols", "t_s", "v"]);
    let cfg = &rec["config"];
    for key in ["modulation", "channel", "noise", "seed", "index"] {
        assert!(!cfg[key].is_null(), "config.{key} missing");
    }
    let c = cfg["modulation"]["alphabet_size"].as_u64().unwrap();
    let rate = cfg["modulation"]["symbol_rate"].as_f64().unwrap();
    let symbols = rec["symbols"].as_array().unwrap();
    assert!(symbols.iter().all(|v| v.as_u64().unwrap() < c));
    let bounds = rec["boundaries_s"].as_array().unwrap();
    assert_eq!(bounds.len(), symbols.len());
    for (j, b) in bounds.iter().enumerate() {
        assert!((b.as_f64().unwrap() - j as f64 / rate).abs() < 1e-12);
    }
    let t: Vec<f64> = rec["t_s"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    let v = rec["v"].as_array().unwrap();
    assert_eq!(t.len(), v.len());
    assert!(t.windows(2).all(|w| w[1] > w[0]));
    assert!(v.iter().all(|x| x.as_f64().unwrap().is_finite()));
}

#[test]
fn gen_records_match_schema_and_run_json_reproduces() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("g");
    ok(&["gen", "--n", "3", "--msg-len", "6", "--out", s(&out)]);
    let text = fs::read_to_string(out.join("transmissions.jsonl")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    for line in lines {
        check_record(&serde_json::from_str(line).unwrap());
    }
    let run: Value = serde_json::from_str(&fs::read_to_string(out.join("run.json")).unwrap()).unwrap();
    assert_eq!(run["command"], "gen");
    assert_eq!(run["config"]["corpus"]["n_transmissions"], 3);

    let again = dir.path().join("again");
    ok(&["gen", "--config", s(&out.join("run.json")), "--out", s(&again)]);
    assert_eq!(text, fs::read_to_string(again.join("transmissions.jsonl")).unwrap());
}

fn noiseless_corpus(dir: &Path, alphabet: usize) -> std::path::PathBuf {
    let cfg = write_config(
        dir,
        r#"{"noise": {"awgn_sigma": 0, "amplitude_jitter_sigma": 0, "drift_amplitude": 0, "sampling_jitter_sigma": 0}}"#,
    );
    let out = dir.join(format!("corpus{alphabet}"));
    ok(&[
        "gen",
        "--config",
        &cfg,
        "--n",
        "4",
        "--msg-len",
        "10",
        "--alphabet",
        &alphabet.to_string(),
        "--rate",
        "2",
        "--out",
        s(&out),
    ]);
    out.join("transmissions.jsonl")
}

fn header(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("header.json")).unwrap()).unwrap()
}

#[test]
fn preprocess_oracle_and_slope() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = noiseless_corpus(dir.path(), 6);
    let oracle = dir.path().join("oracle");
    let slope = dir.path().join("slope");
    ok(&[
        "preprocess",
        "--in",
        s(&corpus),
        "--mode",
        "oracle",
        "--out",
        s(&oracle),
    ]);
    ok(&["preprocess", "--in", s(&corpus), "--mode", "slope", "--out", s(&slope)]);
    for d in [&oracle, &slope] {
        let h = header(d);
        assert_eq!(h["n"], 40);
        assert_eq!(h["len"], 128);
        assert_eq!(fs::metadata(d.join("data.f32")).unwrap().len(), 40 * 128 * 4);
        assert_eq!(fs::read(d.join("labels.u8")).unwrap().len(), 40);
    }
    let deltas = fs::read_to_string(slope.join("boundaries.csv")).unwrap();
    let rows: Vec<i64> = deltas
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(rows.len(), 40);
    assert!(rows.iter().all(|d| d.abs() <= 3), "{rows:?}");
    assert_eq!(
        code(&[
            "preprocess",
            "--in",
            s(&corpus),
            "--mode",
            "psychic",
            "--out",
            s(&slope)
        ]),
        1
    );
}

#[test]
fn preprocess_rejects_mixed_alphabets_and_garbage() {
    let dir = tempfile::tempdir().unwrap();
    let a = fs::read_to_string(noiseless_corpus(dir.path(), 6)).unwrap();
    let b = fs::read_to_string(noiseless_corpus(dir.path(), 8)).unwrap();
    let mixed = dir.path().join("mixed.jsonl");
    fs::write(&mixed, a + &b).unwrap();
    let out = molcom(&["preprocess", "--in", s(&mixed), "--out", s(&dir.path().join("x"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
    let garbage = dir.path().join("garbage.jsonl");
    fs::write(&garbage, "{\"not\": \"a record\"}\n").unwrap();
    assert_eq!(
        code(&["preprocess", "--in", s(&garbage), "--out", s(&dir.path().join("y"))]),
        2
    );
    assert_eq!(code(&["preprocess", "--in", s(&dir.path().join("missing.jsonl"))]), 2);
}

#[test]
fn capacity_prints_rate() {
    let out = ok(&["capacity", "--rg", "6", "--f", "0.02", "--pb", "0.01"]);
    assert_eq!(String::from_utf8(out.stdout).unwrap().trim(), "R = 5.604 bit/s");
    let out = ok(&["capacity", "--rg", "6", "--f", "0.02", "--target", "5.5"]);
    assert!(String::from_utf8(out.stdout).unwrap().contains("f <= 0.022894"));
    assert_eq!(code(&["capacity", "--rg", "6", "--f", "0.02", "--pb", "0.6"]), 1);
    assert_eq!(code(&["capacity", "--rg", "6", "--f", "0.7"]), 1);
    let out = ok(&["capacity", "--rg", "6", "--target", "5.5"]);
    assert_eq!(
        String::from_utf8(out.stdout).unwrap().trim(),
        "R >= 5.5 bit/s holds for f <= 0.022894"
    );
    assert_eq!(code(&["capacity", "--rg", "6"]), 1);
}

#[test]
fn fit_channel_recovers_and_reports_bad_input() {
    let dir = tempfile::tempdir().unwrap();
    // Samples of the unmodified model on the default channel: fit should
    // stay at the identity parameters.
    let ch = molcom::channel::ChannelParams::default();
    let mut csv = String::from("t_s,value\n");
    for i in 1..=40 {
        let t = 0.01 * 1.2f64.powi(i);
        csv.push_str(&format!("{t},{}\n", molcom::channel::arrival_fraction(&ch, t).unwrap()));
    }
    let input = dir.path().join("obs.csv");
    fs::write(&input, csv).unwrap();
    let out = dir.path().join("fit");
    ok(&["fit-channel", "--in", s(&input), "--out", s(&out)]);
    let fit: Value = serde_json::from_str(&fs::read_to_string(out.join("fit.json")).unwrap()).unwrap();
    for key in ["b1", "b2", "b3"] {
        assert!((fit[key].as_f64().unwrap() - 1.0).abs() < 1e-3, "{fit}");
    }
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "time,value\n1,2\n").unwrap();
    assert_eq!(code(&["fit-channel", "--in", s(&bad), "--out", s(&out)]), 2);
}

#[test]
fn train_eval_report_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = write_config(
        d,
        r#"{"corpus": {"n_transmissions": 6, "msg_len": 20}, "modulation": {"alphabet_size": 4, "symbol_rate": 2.0}}"#,
    );
    ok(&["gen", "--config", &cfg, "--out", s(&d.join("gen"))]);
    ok(&[
        "preprocess",
        "--config",
        &cfg,
        "--in",
        s(&d.join("gen/transmissions.jsonl")),
        "--out",
        s(&d.join("data")),
    ]);
    ok(&[
        "train",
        "--config",
        &cfg,
        "--data",
        s(&d.join("data")),
        "--fc-width",
        "16",
        "--max-epochs",
        "2",
        "--deterministic",
        "--out",
        s(&d.join("model")),
    ]);
    let history = fs::read_to_string(d.join("model/history.csv")).unwrap();
    assert_eq!(history.lines().count(), 3);
    assert!(history.starts_with("epoch,train_loss,val_loss,lr\n"));

    ok(&[
        "eval",
        "--data",
        s(&d.join("data")),
        "--model",
        s(&d.join("model")),
        "--out",
        s(&d.join("eval")),
    ]);
    let summary = fs::read_to_string(d.join("eval/summary.csv")).unwrap();
    let mut lines = summary.lines();
    assert_eq!(
        lines.next().unwrap(),
        "scenario,accuracy,f_natural,f_gray,net_rate,residual_error"
    );
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[0], "C4_2Hz");
    let acc: f64 = row[1].parse().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    assert!(lines.next().unwrap().starts_with("C4_2Hz_baseline,"));
    assert!(d.join("eval/confusion.csv").exists() && d.join("eval/offsets.csv").exists());

    assert_eq!(
        code(&[
            "eval",
            "--data",
            s(&d.join("data")),
            "--model",
            s(&d.join("model")),
            "--pb",
            "0.6",
            "--out",
            s(&d.join("e2"))
        ]),
        1
    );
    assert_eq!(
        code(&["eval", "--data", s(&d.join("data")), "--model", s(&d.join("nowhere"))]),
        2
    );

    ok(&[
        "report",
        "--eval",
        s(&d.join("eval")),
        "--trace",
        s(&d.join("gen/transmissions.jsonl")),
        "--out",
        s(&d.join("report")),
    ]);
    for f in [
        "summary.csv",
        "offsets.csv",
        "confusion_C4_2Hz.svg",
        "trace.svg",
        "run.json",
    ] {
        assert!(d.join("report").join(f).exists(), "{f}");
    }
}

#[test]
fn training_is_reproducible_from_run_json() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = write_config(
        d,
        r#"{"corpus": {"n_transmissions": 3, "msg_len": 12}, "modulation": {"alphabet_size": 3, "symbol_rate": 2.0}, "cnn": {"fc_width": 8}, "training": {"max_epochs": 2}}"#,
    );
    ok(&["gen", "--config", &cfg, "--out", s(&d.join("gen"))]);
    ok(&[
        "preprocess",
        "--config",
        &cfg,
        "--in",
        s(&d.join("gen/transmissions.jsonl")),
        "--out",
        s(&d.join("data")),
    ]);
    ok(&[
        "train",
        "--config",
        &cfg,
        "--seed",
        "5",
        "--data",
        s(&d.join("data")),
        "--out",
        s(&d.join("m1")),
    ]);
    let run_json = d.join("m1/run.json");
    ok(&[
        "train",
        "--config",
        s(&run_json),
        "--data",
        s(&d.join("data")),
        "--deterministic",
        "--out",
        s(&d.join("m2")),
    ]);
    assert_eq!(
        fs::read(d.join("m1/weights.bin")).unwrap(),
        fs::read(d.join("m2/weights.bin")).unwrap()
    );
    assert_eq!(
        fs::read(d.join("m1/history.csv")).unwrap(),
        fs::read(d.join("m2/history.csv")).unwrap()
    );
}
