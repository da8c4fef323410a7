use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn vtrec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vtrec"))
        .args(args)
        .env_remove("VTREC_SEED")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = vtrec(args);
    assert!(
        out.status.success(),
        "vtrec {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// synth, a few training steps, eval and saliency in `dir`; returns the
/// dataset directory.
fn pipeline(dir: &Path, steps: &str, extra: &[&str]) -> PathBuf {
    let data = dir.join("d");
    let mut synth = vec!["synth", "--n", "10", "--seed", "7", "--out", s(&data)];
    synth.extend_from_slice(extra);
    ok(&synth);
    let cfg = data.join("config.json");
    let with = |args: &[&str]| {
        let mut v = vec!["--config", s(&cfg)];
        v.extend_from_slice(args);
        v.extend_from_slice(extra);
        ok(&v);
    };
    with(&["train", "--epochs", "1", "--steps-per-epoch", steps]);
    with(&["eval"]);
    with(&["saliency", "--clip", "clip00000"]);
    data
}

#[test]
fn synth_train_eval_writes_two_row_report() {
    let tmp = TempDir::new().unwrap();
    let data = pipeline(tmp.path(), "3", &[]);
    let report = fs::read_to_string(data.join("out/report.txt")).unwrap();
    let lines: Vec<&str> = report.lines().collect();
    assert_eq!(lines.len(), 4, "{report}");
    let header: Vec<&str> = lines[0].split('|').map(str::trim).collect();
    assert_eq!(header, ["Dictionary", "Dataset", "PER %", "CER %", "WER %"]);
    assert!(lines[2].starts_with("Phrases without LM"));
    assert!(lines[3].starts_with("Phrases with LM"));
    for row in &lines[2..] {
        let cells: Vec<&str> = row.split('|').map(str::trim).collect();
        assert_eq!(cells.len(), 5);
        for c in &cells[2..] {
            c.parse::<f64>().unwrap();
        }
    }
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(data.join("out/report.json")).unwrap()).unwrap();
    assert_eq!(json["rows"].as_array().unwrap().len(), 2);
    assert_eq!(fs::read_dir(data.join("out/saliency")).unwrap().count(), 8);
}

#[test]
fn pipeline_is_byte_identical_across_runs_and_workers() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let da = pipeline(a.path(), "4", &[]);
    let db = pipeline(b.path(), "4", &["--workers", "2"]);
    let mut files = vec!["model.vtck".to_string(), "out/report.txt".into(), "out/loss.csv".into()];
    for i in 0..8 {
        files.push(format!("out/saliency/clip00000_{i:03}.ppm"));
    }
    for f in &files {
        assert_eq!(fs::read(da.join(f)).unwrap(), fs::read(db.join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn effective_config_reproduces_eval() {
    let tmp = TempDir::new().unwrap();
    let data = pipeline(tmp.path(), "2", &[]);
    let first = fs::read(data.join("out/report.json")).unwrap();
    let eff = tmp.path().join("effective.json");
    fs::copy(data.join("out/effective_config.json"), &eff).unwrap();
    ok(&["--config", s(&eff), "eval"]);
    assert_eq!(fs::read(data.join("out/report.json")).unwrap(), first);
}

#[test]
fn align_matches_rounding_examples() {
    let tmp = TempDir::new().unwrap();
    let words = tmp.path().join("words.txt");
    fs::write(&words, "# word duration\none 1.0\ntick 0.01\nhalf 0.5\nagain 0.5\n").unwrap();
    let json = tmp.path().join("spans.json");
    let out = ok(&["align", s(&words), "--fps", "23.18", "--out", s(&json)]);
    assert!(String::from_utf8(out.stdout).unwrap().contains("start_frame"));
    let spans: serde_json::Value = serde_json::from_str(&fs::read_to_string(&json).unwrap()).unwrap();
    let frames: Vec<u64> = spans.as_array().unwrap().iter().map(|s| s["frames"].as_u64().unwrap()).collect();
    let starts: Vec<u64> = spans.as_array().unwrap().iter().map(|s| s["start_frame"].as_u64().unwrap()).collect();
    assert_eq!(frames, [23, 1, 12, 12]);
    assert_eq!(starts, [0, 23, 24, 36]);
}

#[test]
fn align_rejects_non_positive_duration_as_data_error() {
    let tmp = TempDir::new().unwrap();
    let words = tmp.path().join("words.txt");
    fs::write(&words, "one 0\n").unwrap();
    assert_eq!(vtrec(&["align", s(&words)]).status.code(), Some(2));
}

fn trace_csv(productions: &[(&str, &str)]) -> String {
    let mut csv = String::from("production_id,word,emotion,speaker,gender,frame,gridline,xl,yl,xu,yu\n");
    for (id, emotion) in productions {
        for frame in 0..3 {
            for g in 1..=86 {
                let a = g as f64 * 0.1 + frame as f64 * 0.01;
                csv.push_str(&format!(
                    "{id},clock,{emotion},s1,male,{frame},{g},{},{},{},{}\n",
                    a.cos() * 3.0,
                    a.sin() * 2.0,
                    a.cos() * 5.0,
                    a.sin() * 4.0 + 1.0
                ));
            }
        }
    }
    csv
}

#[test]
fn nedm_identity_fixture_gives_all_zero_table() {
    let tmp = TempDir::new().unwrap();
    let traces = tmp.path().join("traces.csv");
    fs::write(
        &traces,
        trace_csv(&[("n1", "neutral"), ("h1", "happy"), ("a1", "angry"), ("s1", "sad")]),
    )
    .unwrap();
    let out_dir = tmp.path().join("nedm");
    let out = ok(&["nedm", s(&traces), "--out", s(&out_dir)]);
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.contains("Lower boundary geometrical comparison of each sub-region"));
    assert!(table.contains("Clock (Male)"));
    assert_eq!(table, fs::read_to_string(out_dir.join("nedm.txt")).unwrap());
    let csv = fs::read_to_string(out_dir.join("nedm.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 6);
    for row in rows {
        let cells: Vec<&str> = row.split(',').collect();
        for v in &cells[4..8] {
            assert_eq!(v.parse::<f64>().unwrap(), 0.0, "{row}");
        }
    }
}

#[test]
fn usage_errors_exit_one_with_usage_on_stderr() {
    let out = vtrec(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert!(out.stdout.is_empty());
    assert_eq!(vtrec(&["eval", "--no-such-flag"]).status.code(), Some(1));

    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("c.json");
    fs::write(&cfg, r#"{"train": {"batch_sise": 4}}"#).unwrap();
    let out = vtrec(&["--config", s(&cfg), "eval"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("batch_sise"));
}

#[test]
fn missing_inputs_exit_two() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("c.json");
    fs::write(&cfg, "{}").unwrap();
    assert_eq!(vtrec(&["--config", s(&cfg), "eval"]).status.code(), Some(2));
    assert_eq!(vtrec(&["nedm", s(&tmp.path().join("none.csv"))]).status.code(), Some(2));
    let garbage = tmp.path().join("p.vtpb");
    fs::write(&garbage, b"nope").unwrap();
    assert_eq!(
        vtrec(&["--config", s(&cfg), "decode", "--posteriors", s(&garbage)]).status.code(),
        Some(2)
    );
}

#[test]
fn help_lists_flags_with_defaults() {
    let out = ok(&["--help"]);
    let top = String::from_utf8(out.stdout).unwrap();
    let subs = ["synth", "train", "eval", "decode", "sweep", "saliency", "lm-train", "align", "nedm"];
    for sub in subs {
        assert!(top.contains(sub), "{sub} missing from top-level help");
        let help = String::from_utf8(ok(&[sub, "--help"]).stdout).unwrap();
        for flag in ["--config", "--seed", "--workers"] {
            assert!(help.contains(flag), "{sub} help lacks {flag}");
        }
        let usage = help.lines().find(|l| l.starts_with("Usage:")).unwrap();
        let options = &help[help.find("Options:").unwrap()..];
        let starts: Vec<usize> = options
            .match_indices('\n')
            .map(|(i, _)| i + 1)
            .filter(|&i| options[i..].trim_start().starts_with('-'))
            .collect();
        for (k, &start) in starts.iter().enumerate() {
            let entry = &options[start..starts.get(k + 1).copied().unwrap_or(options.len())];
            let flag = entry.split_whitespace().find(|w| w.starts_with("--")).unwrap();
            let required = usage.contains(&format!("{flag} <"));
            let first_line = entry.lines().next().unwrap();
            if first_line.contains('<') && !required {
                assert!(entry.contains("[default"), "{sub}: no default shown for {flag}");
            }
        }
    }
}

#[test]
fn seed_falls_back_to_environment() {
    let tmp = TempDir::new().unwrap();
    let run = |dir: &str, env: Option<&str>| {
        let out = tmp.path().join(dir);
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_vtrec"));
        cmd.args(["synth", "--n", "4", "--out", s(&out)]).env_remove("VTREC_SEED");
        if let Some(v) = env {
            cmd.env("VTREC_SEED", v);
        }
        assert!(cmd.output().unwrap().status.success());
        fs::read_to_string(out.join("manifest.jsonl")).unwrap()
    };
    let env_seeded = run("a", Some("11"));
    ok(&["synth", "--n", "4", "--seed", "11", "--out", s(&tmp.path().join("b"))]);
    let flag_seeded = fs::read_to_string(tmp.path().join("b/manifest.jsonl")).unwrap();
    assert_eq!(env_seeded, flag_seeded);
    let frame = |d: &str| fs::read(tmp.path().join(d).join("frames/clip00000/000.pgm")).unwrap();
    assert_ne!(frame("a"), {
        run("c", None);
        frame("c")
    });
}

#[test]
fn lm_train_writes_model_from_corpus() {
    let tmp = TempDir::new().unwrap();
    let corpus = tmp.path().join("corpus.txt");
    fs::write(&corpus, "the cat\na cat sat\n").unwrap();
    let lm = tmp.path().join("m.vtlm");
    ok(&["lm-train", "--corpus", s(&corpus), "--order", "3", "--out", s(&lm)]);
    let bytes = fs::read(&lm).unwrap();
    assert_eq!(vtrec::lm::NGramLm::from_bytes(&bytes).unwrap().order(), 3);
}
