use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pdiff::backend::EmbeddingToyParams;
use pdiff::evaldata::write_dataset;
use pdiff::synthetic::{generate, CorpusSpec};

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn pdiff(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pdiff"))
        .args(args)
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn embedding_corpus(dir: &Path, name: &str, size: usize, seed: u64) -> PathBuf {
    let params = EmbeddingToyParams {
        vocab_size: 64,
        ..Default::default()
    };
    let path = dir.join(name);
    write_dataset(&path, &generate(&CorpusSpec::for_embedding_toy(size, &params), seed).unwrap()).unwrap();
    path
}

#[test]
fn score_golden_output_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = data("toy_embedding.toml");
    let mut outputs = Vec::new();
    for i in 0..2 {
        let out_path = dir.path().join(format!("out{i}.jsonl"));
        let out = pdiff(&[
            "--config", s(&cfg), "--seed", "7", "score",
            "--input", s(&data("pairs.jsonl")), "--output", s(&out_path), "--workers", "2",
        ]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        outputs.push(std::fs::read(&out_path).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], std::fs::read(data("pairs.golden.jsonl")).unwrap());

    let other_seed = dir.path().join("seed8.jsonl");
    let out = pdiff(&[
        "--config", s(&cfg), "--seed", "8", "score",
        "--input", s(&data("pairs.jsonl")), "--output", s(&other_seed),
    ]);
    assert_eq!(code(&out), 0);
    assert_ne!(std::fs::read(&other_seed).unwrap(), outputs[0]);
}

#[test]
fn empty_input_gives_empty_output() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("empty.jsonl");
    std::fs::write(&input, "").unwrap();
    let out = pdiff(&["score", "--input", s(&input)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(out.stdout.is_empty());
}

#[test]
fn per_record_failures_keep_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.jsonl");
    std::fs::write(
        &input,
        "{\"id\":\"a\",\"document\":\"x y\",\"summary\":\"x z\"}\nnot json\n{\"id\":\"c\",\"document\":\"x\",\"summary\":\" \"}\n",
    )
    .unwrap();
    let out = pdiff(&["score", "--input", s(&input)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let lines: Vec<serde_json::Value> = String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0]["id"], "a");
    assert!(lines[0].get("word_scores").is_some());
    assert_eq!(lines[1]["id"], "line 2");
    assert!(lines[1].get("error").is_some());
    assert_eq!(lines[2]["id"], "c");
    assert!(lines[2].get("error").is_some());
}

#[test]
fn malformed_config_exits_two_and_names_the_key() {
    let out = pdiff(&["--set", "scoring.prompt_varient=base", "score", "--input", s(&data("pairs.jsonl"))]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("prompt_varient"), "{}", stderr(&out));

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[threshold]\nmode = \"proportion\"\ntarget_rate = 1.5\n").unwrap();
    let out = pdiff(&["--config", s(&cfg), "score", "--input", s(&data("pairs.jsonl"))]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("target_rate"), "{}", stderr(&out));

    let out = pdiff(&["score", "--input", "/no/such/file.jsonl"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("io.input"));

    let out = pdiff(&["--set", "backend.name=nonexistent", "score", "--input", s(&data("pairs.jsonl"))]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("backend.name"));
}

#[test]
fn runtime_failure_exits_one() {
    let out = pdiff(&[
        "score", "--input", s(&data("pairs.jsonl")), "--output", "/no/such/dir/out.jsonl",
    ]);
    assert_eq!(code(&out), 1, "{}", stderr(&out));
}

#[test]
fn evaluate_token_dataset_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let dataset = embedding_corpus(dir.path(), "tokens.jsonl", 40, 3);
    let report = dir.path().join("report");
    let out = pdiff(&[
        "--set", "backend.name=toy-embedding", "--set", "backend.params={vocab_size = 64}",
        "--set", "threshold.mode=proportion", "--set", "threshold.target_rate=0.3",
        "evaluate", "--dataset", s(&dataset), "--report-dir", s(&report),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("corpus F1"), "{stdout}");
    for f in ["report.json", "token_f1.csv", "corpus_f1.csv", "histogram.csv", "summary_pearson.csv"] {
        assert!(report.join(f).exists(), "{f} missing");
    }
    let table = std::fs::read_to_string(report.join("token_f1.csv")).unwrap();
    assert_eq!(table.lines().next().unwrap(), "model,sysA,sysB,average_f1");
    let hist = std::fs::read_to_string(report.join("histogram.csv")).unwrap();
    assert_eq!(hist.lines().next().unwrap(), "bin_low,bin_high,count_factual,count_unfactual");
    assert_eq!(hist.lines().count(), 51);
}

#[test]
fn evaluate_schema_violation_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let dataset = dir.path().join("bad.jsonl");
    std::fs::write(
        &dataset,
        "{\"id\":\"1\",\"document\":\"a\",\"summary\":\"a b\",\"word_labels\":[0,1]}\n{\"id\":\"2\",\"document\":\"a\",\"summary\":\"a b\",\"word_labels\":[0]}\n",
    )
    .unwrap();
    let out = pdiff(&["evaluate", "--dataset", s(&dataset), "--report-dir", s(&dir.path().join("r"))]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("line 2"), "{}", stderr(&out));
}

#[test]
fn evaluate_categories_counts_exclusions() {
    let dir = tempfile::tempdir().unwrap();
    let dataset = dir.path().join("frank.jsonl");
    let rows = [
        ("1", "She met Bob in Paris.", r#"["CorefE"]"#, 0.2),
        ("2", "Alice met Bob in Paris.", "[]", 1.0),
        ("3", "He left Rome.", r#"["EntE","CorefE"]"#, 0.0),
        ("4", "They met in Paris.", "[]", 0.9),
        ("5", "Alice met Carol in London.", r#"["EntE"]"#, 0.3),
        ("6", "She smiled at Bob.", "[]", 0.8),
        ("7", "Bob went to Berlin.", r#"["EntE","OutE"]"#, 0.1),
    ];
    let text: String = rows
        .iter()
        .map(|(id, summary, cats, label)| {
            format!(
                "{{\"id\":\"{id}\",\"document\":\"Alice met Bob in Paris and she smiled at him.\",\"summary\":\"{summary}\",\"summary_label\":{label},\"category_labels\":{cats}}}\n"
            )
        })
        .collect();
    std::fs::write(&dataset, text).unwrap();
    let report = dir.path().join("r");
    let out = pdiff(&[
        "evaluate", "--dataset", s(&dataset), "--report-dir", s(&report), "--category", "all",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let coref = std::fs::read_to_string(report.join("category_CorefE.csv")).unwrap();
    let mut lines = coref.lines();
    assert_eq!(lines.next().unwrap(), "model,overall,CorefE,OutE,retained,excluded");
    let base = lines.next().unwrap();
    assert!(base.starts_with("base,"));
    // Summaries 2, 5 and 7 have no pronouns.
    assert!(base.ends_with(",4,3"), "{base}");
    assert!(report.join("category_EntE.csv").exists());
    assert!(report.join("category_OutE.csv").exists());
    assert!(report.join("summary_pearson.csv").exists());
}

#[test]
fn tune_refuses_non_differentiable_backend_before_loading_data() {
    let out = pdiff(&["tune", "--preset", "few-shot", "--train", s(&data("pairs.jsonl"))]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("cannot train"), "{}", stderr(&out));

    let out = pdiff(&["--set", "backend.name=toy-embedding", "tune", "--train", s(&data("pairs.jsonl"))]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("[tuning]"));
}

#[test]
fn tune_writes_checkpoint_and_reproducible_trace() {
    let dir = tempfile::tempdir().unwrap();
    let train = embedding_corpus(dir.path(), "train.jsonl", 30, 1);
    let valid = embedding_corpus(dir.path(), "valid.jsonl", 10, 2);
    let run = |tag: &str, extra: &[&str]| {
        let ckpt = dir.path().join(format!("{tag}.json"));
        let trace = dir.path().join(format!("{tag}.csv"));
        let mut args = vec![
            "--set", "backend.name=toy-embedding", "--set", "backend.params={vocab_size = 64}",
            "--set", "tuning.epochs=3", "--set", "tuning.learning_rate=0.01",
            "--seed", "11", "tune",
            "--train", s(&train), "--valid", s(&valid),
        ];
        let ckpt_s = ckpt.to_str().unwrap().to_string();
        let trace_s = trace.to_str().unwrap().to_string();
        args.extend(["--checkpoint", &ckpt_s, "--trace", &trace_s]);
        args.extend(extra);
        let out = pdiff(&args);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        (ckpt, trace, String::from_utf8(out.stdout).unwrap())
    };
    let (ckpt_a, trace_a, stdout) = run("a", &[]);
    assert!(stdout.contains("80 trainable parameters"), "{stdout}");
    let (ckpt_b, trace_b, _) = run("b", &[]);
    assert_eq!(std::fs::read(&trace_a).unwrap(), std::fs::read(&trace_b).unwrap());
    assert_eq!(std::fs::read(&ckpt_a).unwrap(), std::fs::read(&ckpt_b).unwrap());
    let trace = std::fs::read_to_string(&trace_a).unwrap();
    assert_eq!(trace.lines().next().unwrap(), "epoch,loss,validation_f1,threshold");

    let ckpt: serde_json::Value = serde_json::from_slice(&std::fs::read(&ckpt_a).unwrap()).unwrap();
    for key in ["length", "dim", "values", "init_seed", "backend_fingerprint"] {
        assert!(ckpt.get(key).is_some(), "{key}");
    }
    assert_eq!(ckpt["length"], 5);

    let resume = ckpt_a.to_str().unwrap().to_string();
    run("c", &["--resume", &resume]);

    // The vector can be used for scoring, and only with the backend it was trained on.
    let score = |seed: &str| {
        pdiff(&[
            "--set", "backend.name=toy-embedding", "--set", "backend.params={vocab_size = 64}",
            "--set", &format!("scoring.prompt_vector={}", ckpt_a.display()),
            "--seed", seed, "score", "--input", s(&valid),
        ])
    };
    assert_eq!(code(&score("11")), 0);
    let mismatch = score("12");
    assert_eq!(code(&mismatch), 2);
    assert!(stderr(&mismatch).contains("fingerprint"));
}

#[test]
fn tune_length_sweep_writes_one_checkpoint_per_length() {
    let dir = tempfile::tempdir().unwrap();
    let train = embedding_corpus(dir.path(), "train.jsonl", 12, 1);
    let ckpt = dir.path().join("v.json");
    let trace = dir.path().join("t.csv");
    let out = pdiff(&[
        "--set", "backend.name=toy-embedding", "--set", "backend.params={vocab_size = 64}",
        "--set", "tuning.epochs=2", "tune", "--train", s(&train),
        "--checkpoint", s(&ckpt), "--trace", s(&trace), "--lengths", "1,3",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for n in [1, 3] {
        assert!(dir.path().join(format!("v-len{n}.json")).exists());
        assert!(dir.path().join(format!("t-len{n}.csv")).exists());
    }
}

#[test]
fn report_matches_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let dataset = embedding_corpus(dir.path(), "tokens.jsonl", 30, 5);
    let common = [
        "--set", "backend.name=toy-embedding", "--set", "backend.params={vocab_size = 64}",
    ];
    let scores = dir.path().join("scores.jsonl");
    let mut args = common.to_vec();
    args.extend(["score", "--input", s(&dataset), "--output", s(&scores)]);
    assert_eq!(code(&pdiff(&args)), 0);

    let mut args = common.to_vec();
    let eval_dir = dir.path().join("eval");
    args.extend(["evaluate", "--dataset", s(&dataset), "--report-dir", s(&eval_dir)]);
    let eval = pdiff(&args);
    assert_eq!(code(&eval), 0);

    let rep_dir = dir.path().join("rep");
    let rep = pdiff(&[
        "report", "--scores", s(&scores), "--dataset", s(&dataset), "--report-dir", s(&rep_dir),
    ]);
    assert_eq!(code(&rep), 0, "{}", stderr(&rep));
    let a: serde_json::Value = serde_json::from_slice(&std::fs::read(eval_dir.join("report.json")).unwrap()).unwrap();
    let b: serde_json::Value = serde_json::from_slice(&std::fs::read(rep_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(a["corpus_f1"], b["corpus_f1"]);
    assert_eq!(a["per_split_f1"], b["per_split_f1"]);
    assert_eq!(a["threshold_used"], b["threshold_used"]);
}
