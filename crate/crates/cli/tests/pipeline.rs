mod common;

use std::path::Path;

use common::{p, run, synthetic_raw};
use itk::commands::{cmd_clean, cmd_train, evaluate, predict, CleanReport, PredictResponse};
use itk_core::corpus::{load_clean_csv, Origin};
use itk_core::features::Vocabulary;
use itk_core::linear::{LogRegModel, TrainConfig};
use itk_core::metrics::MetricsReport;
use itk_core::model::{Classifier, ModelKind, ModelSpec, TfidfConfig, TrainedModel};
use itk_core::normalize::{Field, IssueText, NormalizationConfig};
use itk_core::transformer::{EncoderWeights, Weights};

const HEADER: &str =
    "issue_url,issue_created_at,issue_author_association,repository_url,issue_title,issue_body,issue_label\n";

fn fixture(dir: &Path, name: &str, rows: &[&str]) -> std::path::PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, format!("{HEADER}{}\n", rows.join("\n"))).unwrap();
    path
}

const ROWS: [&str; 3] = [
    "https://github.com/a/b/issues/1,2021-01-01T00:00:00Z,NONE,https://api.github.com/repos/a/b,App crashes,Segfault in foo() on v1.2,bug",
    "https://github.com/a/b/issues/2,2021-01-02T00:00:00Z,OWNER,https://api.github.com/repos/a/b,Add dark mode,It would be nice,enhancement",
    "https://github.com/a/b/issues/3,2021-01-03T00:00:00Z,MEMBER,https://api.github.com/repos/a/b,How to build?,\"See docs, maybe\",question",
];

fn read_report(path: &Path) -> CleanReport {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn clean_three_row_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let raw = fixture(dir.path(), "raw.csv", &ROWS);
    let (clean, stats) = (dir.path().join("clean.csv"), dir.path().join("stats.json"));
    run(&["clean", "--input", p(&raw), "--output", p(&clean), "--stats", p(&stats)], 0);

    let rows = load_clean_csv(&clean).unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows.iter().map(|r| r.label_code).collect::<Vec<_>>(), [0, 1, 2]);
    assert_eq!(
        rows[0].text,
        "20210101t000000z none ab app crashes segfault in <FUNCTION> on <VERSION>"
    );
    let report = read_report(&stats);
    assert_eq!((report.rows_read, report.rows_written, report.duplicates_removed), (3, 3, 0));
    assert_eq!(report.stats.n_records, 3);
    assert_eq!(report.stats.per_label_counts.values().sum::<usize>(), 3);
    assert_eq!(report.normalization, NormalizationConfig::default());
}

#[test]
fn clean_removes_duplicate_urls_in_train_only() {
    let dir = tempfile::tempdir().unwrap();
    let dup = ROWS[0].replace("App crashes", "App crashes again");
    let raw = fixture(dir.path(), "raw.csv", &[ROWS[0], ROWS[1], &dup]);
    let (clean, stats) = (dir.path().join("clean.csv"), dir.path().join("stats.json"));

    run(&["clean", "--input", p(&raw), "--output", p(&clean), "--stats", p(&stats)], 0);
    let report = read_report(&stats);
    assert_eq!(report.rows_written, 2);
    assert_eq!(report.stats.n_duplicates_removed, 1);
    assert!(!load_clean_csv(&clean).unwrap()[0].text.contains("again"));

    run(
        &["clean", "--input", p(&raw), "--output", p(&clean), "--stats", p(&stats), "--origin", "test"],
        0,
    );
    assert_eq!(read_report(&stats).rows_written, 3);
}

#[test]
fn stats_prints_json() {
    let dir = tempfile::tempdir().unwrap();
    let raw = fixture(dir.path(), "raw.csv", &ROWS);
    let out = run(&["stats", "--input", p(&raw)], 0);
    let report: CleanReport = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report.stats.n_records, 3);
}

#[test]
fn max_tokens_and_fields_flags_apply() {
    let dir = tempfile::tempdir().unwrap();
    let raw = fixture(dir.path(), "raw.csv", &ROWS);
    let clean = dir.path().join("clean.csv");
    run(
        &["clean", "--input", p(&raw), "--output", p(&clean), "--fields", "title,body", "--max-tokens", "3"],
        0,
    );
    assert_eq!(load_clean_csv(&clean).unwrap()[0].text, "app crashes segfault");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.csv");
    // usage errors
    run(&[], 1);
    run(&["frobnicate"], 1);
    run(&["clean", "--output", p(&out)], 1);
    run(&["train", "--input", p(&out), "--output", p(&out), "--model", "svm"], 1);
    run(&["clean", "--input", "a", "--output", p(&out), "--fields", "title,nope"], 1);
    run(&["clean", "--input", "a", "--output", p(&out), "--max-tokens", "0"], 1);
    let bad_cfg = dir.path().join("bad.json");
    std::fs::write(&bad_cfg, r#"{"model_kind": "logreg", "sed": 1}"#).unwrap();
    run(&["clean", "--input", "a", "--output", p(&out), "--config", p(&bad_cfg)], 1);
    run(&["--help"], 0);

    // data errors
    run(&["clean", "--input", "/nonexistent.csv", "--output", p(&out)], 2);
    let no_label = dir.path().join("no_label.csv");
    std::fs::write(&no_label, "issue_url,issue_title\nu,t\n").unwrap();
    let err = run(&["clean", "--input", p(&no_label), "--output", p(&out)], 2);
    assert!(String::from_utf8_lossy(&err.stderr).contains("missing required column"));
    let corrupt = dir.path().join("corrupt.itk");
    std::fs::write(&corrupt, b"not a model").unwrap();
    run(&["predict", "--model-file", p(&corrupt), "--title", "x"], 2);
}

#[test]
fn run_config_supplies_paths_and_model() {
    let dir = tempfile::tempdir().unwrap();
    synthetic_raw(&dir.path().join("raw.csv"), 300, 0);
    let cfg = dir.path().join("run.json");
    let paths = serde_json::json!({
        "paths": {
            "raw": dir.path().join("raw.csv"),
            "clean": dir.path().join("clean.csv"),
            "model": dir.path().join("m.itk"),
            "report": dir.path().join("report.json"),
        },
        "model_kind": "fasttext",
        "seed": 9,
        "fasttext": {"dim": 8, "extractor": {"n_buckets": 4096, "ngram_orders": [1, 2], "seed": 0, "l1_normalize": false}},
    });
    std::fs::write(&cfg, paths.to_string()).unwrap();
    run(&["clean", "--config", p(&cfg)], 0);
    run(&["train", "--config", p(&cfg)], 0);
    run(&["eval", "--config", p(&cfg)], 0);
    let model = TrainedModel::load(&dir.path().join("m.itk")).unwrap();
    assert_eq!(model.kind(), ModelKind::Fasttext);
    assert_eq!(model.spec.seed(), 9);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["model"]["seed"], 9);
}

#[test]
fn logreg_learns_toy_corpus_and_eval_leaves_model_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synthetic_raw(&d.join("train.csv"), 1000, 0);
    synthetic_raw(&d.join("test.csv"), 300, 1);
    run(&["clean", "--input", p(&d.join("train.csv")), "--output", p(&d.join("train_clean.csv"))], 0);
    run(
        &["clean", "--input", p(&d.join("test.csv")), "--output", p(&d.join("test_clean.csv")), "--origin", "test"],
        0,
    );
    let (model, log) = (d.join("lr.itk"), d.join("log.json"));
    run(
        &["train", "--input", p(&d.join("train_clean.csv")), "--model", "logreg", "--output", p(&model), "--log", p(&log)],
        0,
    );
    let log: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&log).unwrap()).unwrap();
    assert_eq!(log["model_kind"], "logreg");
    assert_eq!(log["seed"], 42);
    assert!(!log["epoch_loss"].as_array().unwrap().is_empty());

    let before = std::fs::read(&model).unwrap();
    let table = run(&["eval", "--model-file", p(&model), "--input", p(&d.join("test_clean.csv"))], 0);
    let table = String::from_utf8(table.stdout).unwrap();
    assert!(table.starts_with("Metric"), "{table}");
    assert!(table.contains("Micro Avg"));
    let json = run(
        &["eval", "--model-file", p(&model), "--input", p(&d.join("test_clean.csv")), "--json"],
        0,
    );
    assert_eq!(std::fs::read(&model).unwrap(), before);

    let report: MetricsReport = serde_json::from_slice(&json.stdout).unwrap();
    assert_eq!(report.n_scored, 300);
    let min_f1 = report.per_class.iter().map(|m| m.f1).fold(1.0, f64::min);
    assert!(min_f1 >= 0.95, "min per-class F1 {min_f1}");
}

#[test]
fn memorized_set_scores_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let clean = dir.path().join("clean.csv");
    let mut text = String::from("text,label_code\n");
    for i in 0..10 {
        let (word, code) = [("crash", 0), ("feature", 1), ("how", 2)][i % 3];
        text.push_str(&format!("{word} {word} filler{i},{code}\n"));
    }
    std::fs::write(&clean, text).unwrap();
    let model = dir.path().join("m.itk");
    run(&["train", "--input", p(&clean), "--model", "logreg", "--output", p(&model)], 0);
    let out = run(&["eval", "--model-file", p(&model), "--input", p(&clean), "--json"], 0);
    let report: MetricsReport = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report.micro.f1, 1.0);
}

#[test]
fn constant_bug_predictor_on_balanced_set() {
    let dir = tempfile::tempdir().unwrap();
    let clean = dir.path().join("clean.csv");
    let mut text = String::from("text,label_code\n");
    for i in 0..30 {
        text.push_str(&format!("word{i},{}\n", i % 3));
    }
    std::fs::write(&clean, text).unwrap();

    let vocab = Vocabulary::fit(["alpha beta"], 1, 10).unwrap();
    let mut lr = LogRegModel::zeros(vocab.len());
    lr.bias = [1.0, 0.0, 0.0];
    let model = TrainedModel {
        normalization: NormalizationConfig::default(),
        spec: ModelSpec::Logreg {
            tfidf: TfidfConfig::default(),
            train: TrainConfig::logreg_default(),
        },
        classifier: Classifier::Logreg { vocab, model: lr },
    };
    let out = evaluate(&model, &clean).unwrap();
    let recalls: Vec<f64> = out.report.per_class.iter().map(|m| m.recall).collect();
    assert_eq!(recalls, [1.0, 0.0, 0.0]);
    assert_eq!(out.report.micro.f1, 10.0 / 30.0);
    // The JSON form is a valid report plus the model block.
    let v: serde_json::Value = serde_json::from_str(&out.json).unwrap();
    assert_eq!(v["model"]["model_kind"], "logreg");
    let back: MetricsReport = serde_json::from_str(&out.json).unwrap();
    assert_eq!(back, out.report);
}

#[test]
fn zero_epoch_transformer_saves_its_initialization() {
    let dir = tempfile::tempdir().unwrap();
    synthetic_raw(&dir.path().join("raw.csv"), 60, 0);
    let clean = dir.path().join("clean.csv");
    run(&["clean", "--input", p(&dir.path().join("raw.csv")), "--output", p(&clean)], 0);
    let cfg = dir.path().join("run.json");
    std::fs::write(
        &cfg,
        r#"{"transformer": {"d_model": 8, "n_heads": 1, "n_layers": 1, "d_ff": 16, "max_len": 32}}"#,
    )
    .unwrap();
    let model_file = dir.path().join("t.itk");
    run(
        &[
            "train", "--input", p(&clean), "--model", "transformer", "--epochs", "0", "--seed", "5", "--config",
            p(&cfg), "--output", p(&model_file),
        ],
        0,
    );
    let model = TrainedModel::load(&model_file).unwrap();
    let Classifier::Transformer(t) = &model.classifier else {
        panic!("expected a transformer")
    };
    let Weights::Single(w) = &t.weights else {
        panic!("expected single precision")
    };
    let expected = EncoderWeights::<f32>::init(&t.config, t.vocab.n_tokens(), 5).unwrap();
    assert_eq!(w.params, expected.params);
    assert_eq!(t.config.epochs, 0);
    assert_eq!((t.config.d_model, t.config.max_len), (8, 32));
}

#[test]
fn every_proper_field_subset_gives_a_valid_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synthetic_raw(&d.join("train.csv"), 300, 0);
    synthetic_raw(&d.join("test.csv"), 100, 1);
    let spec = ModelSpec::default_for(ModelKind::Logreg);
    for mask in 1u32..31 {
        let fields: Vec<Field> = Field::ALL
            .iter()
            .enumerate()
            .filter(|(i, _)| mask & (1 << i) != 0)
            .map(|(_, f)| *f)
            .collect();
        let norm = NormalizationConfig::default().with_fields(&fields);
        cmd_clean(&d.join("train.csv"), &d.join("tr.csv"), None, Origin::Train, &norm, 0).unwrap();
        cmd_clean(&d.join("test.csv"), &d.join("te.csv"), None, Origin::Test, &norm, 0).unwrap();
        cmd_train(&d.join("tr.csv"), &d.join("m.itk"), None, &spec, &norm).unwrap();
        let model = TrainedModel::load(&d.join("m.itk")).unwrap();
        assert_eq!(model.normalization.field_selection, fields);
        let out = evaluate(&model, &d.join("te.csv")).unwrap();
        assert_eq!(out.report.n_scored, 100, "{fields:?}");
        let back: MetricsReport = serde_json::from_str(&out.json).unwrap();
        assert_eq!(back, out.report);
        for m in &out.report.per_class {
            assert!((0.0..=1.0).contains(&m.f1));
        }
    }
}

#[test]
fn predict_command() {
    let dir = tempfile::tempdir().unwrap();
    synthetic_raw(&dir.path().join("raw.csv"), 600, 0);
    let clean = dir.path().join("clean.csv");
    run(&["clean", "--input", p(&dir.path().join("raw.csv")), "--output", p(&clean)], 0);
    let model_file = dir.path().join("m.itk");
    run(&["train", "--input", p(&clean), "--model", "logreg", "--output", p(&model_file)], 0);

    let ask = |args: &[&str]| -> (PredictResponse, Vec<u8>) {
        let mut full = vec!["predict", "--model-file", p(&model_file)];
        full.extend_from_slice(args);
        let out = run(&full, 0);
        (serde_json::from_slice(&out.stdout).unwrap(), out.stdout)
    };
    let (bug, raw_a) = ask(&["--title", "segfault crash", "--body", "panic stacktrace broken"]);
    assert_eq!((bug.label_code, bug.label.as_str()), (0, "bug"));
    let (_, raw_b) = ask(&["--title", "segfault crash", "--body", "panic stacktrace broken"]);
    assert_eq!(raw_a, raw_b);
    let (q, _) = ask(&["--title", "how", "--body", "why question help wondering"]);
    assert_eq!(q.label_code, 2);
    let (empty, _) = ask(&[]);
    let s = empty.scores.bug + empty.scores.enhancement + empty.scores.question;
    assert!((s - 1.0).abs() < 1e-9);

    // the library path gives the same answer as the binary
    let model = TrainedModel::load(&model_file).unwrap();
    let issue = IssueText {
        title: "segfault crash".into(),
        body: "panic stacktrace broken".into(),
        ..Default::default()
    };
    assert_eq!(predict(&model, &issue).unwrap(), bug);
}
