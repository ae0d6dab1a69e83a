use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn fixture(rel: &str) -> String {
    fixtures().join(rel).to_string_lossy().into_owned()
}

fn sugar(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sugar"))
        .args(args)
        .env_remove("SUGAR_GENERATOR_URL")
        .env_remove("SUGAR_ENTAILMENT_URL")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn run_scripted(out: &Path, extra: &[&str]) -> Output {
    let dataset = fixture("scripted/dataset.jsonl");
    let config = fixture("scripted/config.toml");
    let mut args = vec!["run", "--dataset", &dataset, "--config", &config, "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    sugar(&args)
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn ingest_reports_stats_and_writes_an_index() {
    let dir = tempfile::tempdir().unwrap();
    let out = sugar(&[
        "ingest",
        "--corpus",
        &fixture("scripted/corpus.jsonl"),
        "--index",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("documents: 65"), "{text}");
    assert!(dir.path().join("index.json").is_file());
}

#[test]
fn ingest_missing_corpus_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = sugar(&["ingest", "--corpus", "/no/such/corpus.jsonl", "--index", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("corpus not found"), "{}", stderr(&out));
}

#[test]
fn ingest_malformed_line_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let good = std::fs::read_to_string(fixtures().join("scripted/corpus.jsonl")).unwrap();
    let mut lines: Vec<&str> = good.lines().take(16).collect();
    lines.push(r#"{"id": "broken", "title": "#);
    let corpus = dir.path().join("corpus.jsonl");
    std::fs::write(&corpus, lines.join("\n")).unwrap();
    let out = sugar(&[
        "ingest",
        "--corpus",
        corpus.to_str().unwrap(),
        "--index",
        dir.path().join("idx").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("line 17"), "{}", stderr(&out));
}

#[test]
fn run_matches_the_golden_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_scripted(dir.path(), &[]);
    assert!(out.status.success(), "{}", stderr(&out));
    let golden = std::fs::read_to_string(fixtures().join("scripted/golden/report.json")).unwrap();
    let got = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
    assert_eq!(got, golden);
    for f in ["report.txt", "records.jsonl", "traces.jsonl"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    let records = std::fs::read_to_string(dir.path().join("records.jsonl")).unwrap();
    assert_eq!(records.lines().count(), 60);
    assert!(stdout(&out).contains("20/20/20"));
}

#[test]
fn run_output_is_independent_of_parallelism() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(run_scripted(a.path(), &["--parallelism", "1"]).status.success());
    assert!(run_scripted(b.path(), &["--parallelism", "8"]).status.success());
    for f in ["report.json", "records.jsonl", "traces.jsonl"] {
        assert_eq!(
            std::fs::read(a.path().join(f)).unwrap(),
            std::fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn run_with_a_baseline_reports_relative_time() {
    let base = tempfile::tempdir().unwrap();
    let adaptive = tempfile::tempdir().unwrap();
    assert!(run_scripted(base.path(), &["--routing", "single-step"]).status.success());
    let baseline = base.path().join("report.json");
    let out = run_scripted(adaptive.path(), &["--baseline-report", baseline.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let b = read_json(&baseline);
    let a = read_json(&adaptive.path().join("report.json"));
    let expected = a["mean_wall_time_ms"].as_f64().unwrap() / b["mean_wall_time_ms"].as_f64().unwrap();
    assert!((a["relative_time"].as_f64().unwrap() - expected).abs() < 1e-12);
    assert_eq!(b["routing"]["single_step"], 60);
}

#[test]
fn inverted_thresholds_are_rejected_before_any_work() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_scripted(&dir.path().join("out"), &["--tau-low", "1.0", "--tau-high", "0.5"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("tau_low > tau_high"), "{}", stderr(&out));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn single_question_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let all = std::fs::read_to_string(fixtures().join("scripted/dataset.jsonl")).unwrap();
    let one = dir.path().join("one.jsonl");
    std::fs::write(&one, all.lines().nth(45).unwrap()).unwrap();
    let out = sugar(&[
        "run",
        "--dataset",
        one.to_str().unwrap(),
        "--config",
        &fixture("scripted/config.toml"),
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let r = read_json(&dir.path().join("out/report.json"));
    assert_eq!(r["num_questions"], 1);
    assert_eq!(r["routing"]["multi_step"], 1);
    assert_eq!(r["mean_retrieval_steps"], 2.0);
}

#[test]
fn missing_dataset_and_bad_config_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = sugar(&[
        "run",
        "--dataset",
        "/no/such.jsonl",
        "--config",
        &fixture("scripted/config.toml"),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));

    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "seed = 1\n[router]\ntau_low = 0.4\n").unwrap();
    let out = sugar(&[
        "run",
        "--dataset",
        &fixture("scripted/dataset.jsonl"),
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("tau_high"), "{}", stderr(&out));
}

#[test]
fn unreachable_generator_fails_the_question_not_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let cfg = format!(
        r#"seed = 0
[sampling]
n = 2
temperature = 1.0
[router]
tau_low = 0.4
tau_high = 0.9
[multistep]
max_steps = 2
[retriever]
k = 2
corpus = "{corpus}"
[generator]
backend = "http"
url = "http://127.0.0.1:{port}/v1/completions"
model = "m"
timeout_secs = 2
max_retries = 0
[entailment]
backend = "mock"
[runner]
parallelism = 1
"#,
        corpus = fixture("scripted/corpus.jsonl")
    );
    let path = dir.path().join("http.toml");
    std::fs::write(&path, cfg).unwrap();
    let all = std::fs::read_to_string(fixtures().join("scripted/dataset.jsonl")).unwrap();
    let one = dir.path().join("one.jsonl");
    std::fs::write(&one, all.lines().next().unwrap()).unwrap();
    let out = sugar(&[
        "run",
        "--dataset",
        one.to_str().unwrap(),
        "--config",
        path.to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    // a per-question backend failure is recorded and scored 0, not fatal
    assert!(out.status.success(), "{}", stderr(&out));
    let report = read_json(&dir.path().join("o/report.json"));
    assert_eq!(report["num_failed"], 1);
    assert_eq!(report["failed_questions"][0], "q01");
    assert_eq!(report["acc"], 0.0);
    assert!(stderr(&out).contains("backend unreachable"), "{}", stderr(&out));

    // calibration records need every arm to succeed, so there it is fatal
    let out = sugar(&[
        "run",
        "--dataset",
        one.to_str().unwrap(),
        "--config",
        path.to_str().unwrap(),
        "--out",
        dir.path().join("o2").to_str().unwrap(),
        "--calibration-records",
        dir.path().join("cal.jsonl").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(4), "{}", stderr(&out));
}

fn calibration_records(dir: &Path) -> PathBuf {
    let path = dir.join("cal.jsonl");
    let out = run_scripted(&dir.join("run"), &["--calibration-records", path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    path
}

#[test]
fn calibrate_recovers_the_separating_thresholds() {
    let dir = tempfile::tempdir().unwrap();
    let records = calibration_records(dir.path());
    let text = std::fs::read_to_string(&records).unwrap();
    assert_eq!(text.lines().count(), 60);

    let values = [0.0, 0.4, 0.9, 1.5, 2.0];
    let mut pairs = Vec::new();
    for lo in values {
        for hi in values {
            if lo < hi {
                pairs.push(format!("{lo},{hi}"));
            }
        }
    }
    let fragment = dir.path().join("router.toml");
    let out = sugar(&[
        "calibrate",
        "--records",
        records.to_str().unwrap(),
        "--grid",
        &pairs.join(";"),
        "--out",
        fragment.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("selected: tau_low = 0.4, tau_high = 0.9"), "{}", stdout(&out));
    let written = std::fs::read_to_string(&fragment).unwrap();
    assert_eq!(written, "[router]\ntau_low = 0.4\ntau_high = 0.9\n");
}

#[test]
fn calibrate_rejects_bad_folds_and_grids() {
    let dir = tempfile::tempdir().unwrap();
    let records = calibration_records(dir.path());
    let r = records.to_str().unwrap();
    let out = sugar(&["calibrate", "--records", r, "--folds", "61"]);
    assert_eq!(out.status.code(), Some(2));
    let out = sugar(&["calibrate", "--records", r, "--grid", ""]);
    assert_eq!(out.status.code(), Some(2));
    let out = sugar(&["calibrate", "--records", r, "--grid", "0.9,0.4"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn ablation_semantic_trigger_retrieves_less_on_paraphrases() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("ablation.json");
    let out = sugar(&[
        "ablate",
        "--dataset",
        &fixture("synonyms/dataset.jsonl"),
        "--config",
        &fixture("synonyms/config.toml"),
        "--tau-se",
        "0.5",
        "--tau-pe",
        "0.5",
        "1.0",
        "--out",
        json.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let table = read_json(&json);
    let rows = table["rows"].as_array().unwrap();
    let se = rows.iter().find(|r| r["label"].as_str().unwrap().starts_with("Semantic")).unwrap();
    for pe in rows.iter().filter(|r| r["label"].as_str().unwrap().starts_with("Predictive")) {
        assert!(se["mean_steps"].as_f64().unwrap() < pe["mean_steps"].as_f64().unwrap());
        assert!(se["acc"].as_f64().unwrap() >= pe["acc"].as_f64().unwrap());
    }
}

#[test]
fn ablation_requires_predictive_thresholds() {
    let out = sugar(&[
        "ablate",
        "--dataset",
        &fixture("synonyms/dataset.jsonl"),
        "--config",
        &fixture("synonyms/config.toml"),
        "--tau-se",
        "0.5",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("--tau-pe"));
}

#[test]
fn ablation_arms_agree_when_every_sample_is_distinct() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("ablation.json");
    let out = sugar(&[
        "ablate",
        "--dataset",
        &fixture("singletons/dataset.jsonl"),
        "--config",
        &fixture("singletons/config.toml"),
        "--tau-se",
        "1.0",
        "--tau-pe",
        "1.0",
        "--out",
        json.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let rows = read_json(&json)["rows"].as_array().unwrap().clone();
    let pick = |p: &str| rows.iter().find(|r| r["label"].as_str().unwrap().starts_with(p)).unwrap().clone();
    let (se, pe) = (pick("Semantic"), pick("Predictive"));
    for key in ["acc", "em", "f1", "mean_steps", "retrievals"] {
        assert_eq!(se[key], pe[key], "{key}");
    }
}

#[test]
fn report_renders_text_and_json() {
    let golden = fixture("scripted/golden/report.json");
    let out = sugar(&["report", &golden]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("questions") && text.contains("60") && text.contains("20/20/20"), "{text}");

    let out = sugar(&["report", &golden, "--format", "json"]);
    assert_eq!(stdout(&out), std::fs::read_to_string(&golden).unwrap());

    let out = sugar(&["report", "/no/such/report.json"]);
    assert_ne!(out.status.code(), Some(0));
}
