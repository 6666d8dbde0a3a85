mod common;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use clap::Parser;
use nctc_cli::{load_model, save_model, Cli};
use nctc_core::{Dataset, EmbeddingTable, Model, ModelConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

use common::*;

/// Runs the library entry point; returns exit code and stdout.
fn run(args: &[&str], stdin: &str) -> anyhow::Result<(i32, String)> {
    let cli = Cli::try_parse_from(std::iter::once("nctc").chain(args.iter().copied()))?;
    let mut out = Vec::new();
    let code = nctc_cli::run(cli, &mut stdin.as_bytes(), &mut out)?;
    Ok((code, String::from_utf8(out)?))
}

fn binary(args: &[&str], stdin: &str) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_nctc"))
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child
        .stdin
        .take()
        .unwrap()
        .write_all(stdin.as_bytes())
        .unwrap();
    child.wait_with_output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    dir: TempDir,
    emb: PathBuf,
    train: PathBuf,
    data: Dataset,
    table: EmbeddingTable,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let vocab = fillers(12);
        let table = random_embeddings(&vocab, 6, 1);
        let data = memorization_set(20, &vocab, 2);
        let emb = write_embeddings(&table, dir.path());
        let train = write_dataset(&data, dir.path(), "train.tsv");
        Fixture {
            dir,
            emb,
            train,
            data,
            table,
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn train(&self, model: &str, extra: &[&str]) -> String {
        let model = self.path(model);
        let mut args = vec![
            "train",
            "--train",
            s(&self.train),
            "--embeddings",
            s(&self.emb),
            "--out",
            s(&model),
            "--order",
            "2",
            "--hidden",
            "30",
            "--decay",
            "0.3",
        ];
        args.extend_from_slice(extra);
        let (code, out) = run(&args, "").unwrap();
        assert_eq!(code, 0);
        out
    }

    fn untrained(&self, name: &str) -> PathBuf {
        let config = ModelConfig {
            order: 2,
            hidden: 5,
            layers: 2,
            decay: 0.5,
            dropout: 0.0,
            word_dim: self.table.dim(),
            labels: binary_labels(),
        };
        let model = Model::new(config, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let path = self.path(name);
        save_model(&model, &path).unwrap();
        path
    }

    fn text_lines(&self) -> String {
        self.data
            .examples
            .iter()
            .map(|e| format!("{}\n", e.tokens.join(" ")))
            .collect()
    }
}

#[test]
fn train_then_eval_on_overfit_set() {
    let fx = Fixture::new();
    let log = fx.train("m.txt", &["--epochs", "300", "--lr", "0.01"]);
    let mut lines = log.lines();
    assert_eq!(
        lines.next(),
        Some("epoch\ttrain_loss\ttrain_acc\tdev_acc\tseconds")
    );
    assert_eq!(lines.count(), 300);

    let (code, out) = run(
        &[
            "eval",
            "--model",
            s(&fx.path("m.txt")),
            "--data",
            s(&fx.train),
            "--embeddings",
            s(&fx.emb),
        ],
        "",
    )
    .unwrap();
    assert_eq!(code, 0);
    assert!(out.contains("examples\t20\n"), "{out}");
    assert!(out.contains("accuracy\t1.0000\n"), "{out}");
    assert!(
        out.contains("negative\t10\t0\n") && out.contains("positive\t0\t10\n"),
        "{out}"
    );
}

#[test]
fn same_seed_gives_identical_epoch_log() {
    let fx = Fixture::new();
    let strip_seconds = |log: &str| -> Vec<String> {
        log.lines()
            .map(|l| l.rsplit_once('\t').unwrap().0.to_string())
            .collect()
    };
    let flags = [
        "--epochs",
        "4",
        "--dropout",
        "0.3",
        "--layers",
        "2",
        "--seed",
        "9",
    ];
    let a = fx.train("a.txt", &flags);
    let b = fx.train("b.txt", &flags);
    assert_eq!(strip_seconds(&a), strip_seconds(&b));
    assert_eq!(
        std::fs::read(fx.path("a.txt")).unwrap(),
        std::fs::read(fx.path("b.txt")).unwrap()
    );

    let c = fx.train(
        "c.txt",
        &[
            "--epochs",
            "4",
            "--dropout",
            "0.3",
            "--layers",
            "2",
            "--seed",
            "10",
        ],
    );
    assert_ne!(strip_seconds(&a), strip_seconds(&c));
}

#[test]
fn dev_accuracy_and_log_file() {
    let fx = Fixture::new();
    let log = fx.path("epochs.tsv");
    let out = fx.train(
        "m.txt",
        &["--epochs", "3", "--dev", s(&fx.train), "--log", s(&log)],
    );
    let file = std::fs::read_to_string(&log).unwrap();
    assert_eq!(file, out);
    for line in out.lines().skip(1) {
        let fields: Vec<&str> = line.split('\t').collect();
        assert_eq!(fields.len(), 5);
        assert_ne!(fields[3], "-");
    }
}

#[test]
fn untrained_model_predicts_class_zero() {
    let fx = Fixture::new();
    let model = fx.untrained("w0.txt");
    let (_, out) = run(
        &[
            "eval",
            "--model",
            s(&model),
            "--data",
            s(&fx.train),
            "--embeddings",
            s(&fx.emb),
        ],
        "",
    )
    .unwrap();
    let zeros = fx.data.examples.iter().filter(|e| e.label == 0).count();
    let expected = format!("accuracy\t{:.4}\n", zeros as f64 / fx.data.len() as f64);
    assert!(out.contains(&expected), "{out}");
}

#[test]
fn eval_rejects_empty_and_mislabelled_data() {
    let fx = Fixture::new();
    let model = fx.untrained("w0.txt");
    let empty = fx.path("empty.tsv");
    std::fs::write(&empty, "").unwrap();
    let res = run(
        &[
            "eval",
            "--model",
            s(&model),
            "--data",
            s(&empty),
            "--embeddings",
            s(&fx.emb),
        ],
        "",
    );
    assert!(res.is_err());

    let odd = fx.path("odd.tsv");
    std::fs::write(&odd, "neutral\tw1 w2\n").unwrap();
    let res = run(
        &[
            "eval",
            "--model",
            s(&model),
            "--data",
            s(&odd),
            "--embeddings",
            s(&fx.emb),
        ],
        "",
    );
    assert!(res.is_err());

    let out = binary(
        &[
            "eval",
            "--model",
            s(&model),
            "--data",
            s(&empty),
            "--embeddings",
            s(&fx.emb),
        ],
        "",
    );
    assert!(!out.status.success());
    assert!(out.stdout.is_empty());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn missing_files_fail_with_message() {
    let fx = Fixture::new();
    let out = binary(
        &[
            "train",
            "--train",
            "/nonexistent/train.tsv",
            "--embeddings",
            s(&fx.emb),
            "--out",
            s(&fx.path("m.txt")),
        ],
        "",
    );
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/train.tsv"));
}

#[test]
fn dimension_mismatch_is_an_error() {
    let fx = Fixture::new();
    let model = fx.untrained("w0.txt");
    let other = tempfile::tempdir().unwrap();
    let emb = write_embeddings(&random_embeddings(&fillers(12), 7, 1), other.path());
    assert!(run(
        &["predict", "--model", s(&model), "--embeddings", s(&emb)],
        "w1\n"
    )
    .is_err());
}

#[test]
fn predict_agrees_with_eval() {
    let fx = Fixture::new();
    fx.train("m.txt", &["--epochs", "5", "--seed", "4"]);
    let model = fx.path("m.txt");
    let (code, out) = run(
        &["predict", "--model", s(&model), "--embeddings", s(&fx.emb)],
        &fx.text_lines(),
    )
    .unwrap();
    assert_eq!(code, 0);
    let predicted: Vec<&str> = out.lines().collect();
    assert_eq!(predicted.len(), fx.data.len());
    let correct = predicted
        .iter()
        .zip(&fx.data.examples)
        .filter(|(p, e)| **p == fx.data.labels[e.label])
        .count();

    let (_, report) = run(
        &[
            "eval",
            "--model",
            s(&model),
            "--data",
            s(&fx.train),
            "--embeddings",
            s(&fx.emb),
        ],
        "",
    )
    .unwrap();
    let expected = format!("accuracy\t{:.4}\n", correct as f64 / fx.data.len() as f64);
    assert!(report.contains(&expected), "{report}");

    // Labelled lines: the text column is used.
    let labelled = std::fs::read_to_string(&fx.train).unwrap();
    let (_, again) = run(
        &["predict", "--model", s(&model), "--embeddings", s(&fx.emb)],
        &labelled,
    )
    .unwrap();
    assert_eq!(again, out);

    let input = fx.path("input.txt");
    std::fs::write(&input, fx.text_lines()).unwrap();
    let (_, from_file) = run(
        &[
            "predict",
            "--model",
            s(&model),
            "--embeddings",
            s(&fx.emb),
            "--input",
            s(&input),
        ],
        "",
    )
    .unwrap();
    assert_eq!(from_file, out);
}

#[test]
fn predict_on_empty_input_prints_nothing() {
    let fx = Fixture::new();
    let model = fx.untrained("w0.txt");
    let (code, out) = run(
        &["predict", "--model", s(&model), "--embeddings", s(&fx.emb)],
        "",
    )
    .unwrap();
    assert_eq!(code, 0);
    assert!(out.is_empty());
}

fn csv_rows(out: &str) -> Vec<Vec<String>> {
    let mut reader = csv::Reader::from_reader(out.as_bytes());
    reader
        .records()
        .map(|r| r.unwrap().iter().map(str::to_string).collect())
        .collect()
}

#[test]
fn score_positions_header_and_uniform_model() {
    let fx = Fixture::new();
    let model = fx.untrained("w0.txt");
    let (code, out) = run(
        &[
            "score-positions",
            "--model",
            s(&model),
            "--embeddings",
            s(&fx.emb),
            "--scores",
            "-1,3",
        ],
        "",
    )
    .unwrap();
    assert_eq!(code, 0);
    assert_eq!(out, "line_id,position,token,p_1,p_2,expected_score\n");

    let (_, out) = run(
        &[
            "score-positions",
            "--model",
            s(&model),
            "--embeddings",
            s(&fx.emb),
            "--scores",
            "-1,3",
        ],
        "w1 w2 w3\n\nw4\n",
    )
    .unwrap();
    let rows = csv_rows(&out);
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[3][..3], ["3".to_string(), "1".into(), "w4".into()]);
    for row in rows {
        assert_eq!(row[3], "0.500000");
        assert_eq!(row[5], "1.000000");
    }
}

#[test]
fn score_positions_single_word_matches_prediction() {
    let fx = Fixture::new();
    fx.train("m.txt", &["--epochs", "20"]);
    let model_path = fx.path("m.txt");
    let model = load_model(&model_path).unwrap();
    let input: String = fillers(12).iter().map(|w| format!("{w}\n")).collect();
    let (_, out) = run(
        &[
            "score-positions",
            "--model",
            s(&model_path),
            "--embeddings",
            s(&fx.emb),
            "--scores",
            "0,1",
        ],
        &input,
    )
    .unwrap();
    let (_, predicted) = run(
        &[
            "predict",
            "--model",
            s(&model_path),
            "--embeddings",
            s(&fx.emb),
        ],
        &input,
    )
    .unwrap();
    let rows = csv_rows(&out);
    assert_eq!(rows.len(), 12);
    for ((row, word), label) in rows.iter().zip(fillers(12)).zip(predicted.lines()) {
        let probs = model
            .forward_eval(fx.table.embed(&[word.as_str()]).view())
            .unwrap()
            .probs;
        let p1: f64 = row[3].parse().unwrap();
        let p2: f64 = row[4].parse().unwrap();
        assert!((p1 - probs[0]).abs() <= 5e-7 && (p2 - probs[1]).abs() <= 5e-7);
        let expected: f64 = row[5].parse().unwrap();
        assert!((expected - probs[1]).abs() <= 5e-7);
        let winner = if probs[1] > probs[0] {
            "positive"
        } else {
            "negative"
        };
        assert_eq!(label, winner);
    }
}

#[test]
fn score_positions_rejects_wrong_score_count() {
    let fx = Fixture::new();
    let model = fx.untrained("w0.txt");
    let res = run(
        &[
            "score-positions",
            "--model",
            s(&model),
            "--embeddings",
            s(&fx.emb),
            "--scores",
            "-2,-1,0,1,2",
        ],
        "w1\n",
    );
    assert!(res.is_err());
}

#[test]
fn gradcheck_report_and_exit_codes() {
    let (code, out) = run(&["gradcheck"], "").unwrap();
    assert_eq!(code, 0);
    let lines: Vec<&str> = out.lines().collect();
    // header + T·(n+2)+1 tensor rows + verdict
    assert_eq!(lines.len(), 1 + 2 * (3 + 2) + 1 + 1);
    assert!(lines.last().unwrap().starts_with("PASS"));

    let (_, out) = run(&["gradcheck", "--layers", "3", "--order", "2"], "").unwrap();
    assert_eq!(out.lines().count(), 1 + 3 * (2 + 2) + 1 + 1);

    let out = binary(&["gradcheck", "--tolerance", "1e-15"], "");
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout)
        .lines()
        .last()
        .unwrap()
        .starts_with("FAIL"));
    assert!(binary(&["gradcheck"], "").status.success());
}

#[test]
fn bench_prints_one_row_per_length() {
    let (code, out) = run(
        &[
            "bench",
            "--lengths",
            "5,10,20",
            "--hidden",
            "8",
            "--word-dim",
            "6",
            "--trials",
            "3",
            "--min-trial-ms",
            "1",
        ],
        "",
    )
    .unwrap();
    assert_eq!(code, 0);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "length\tforward_s\tforward_backward_s\toracle_s");
    assert_eq!(lines.len(), 4);
    assert!(lines[1..].iter().all(|l| !l.ends_with("\t-")));

    let (_, out) = run(
        &[
            "bench",
            "--lengths",
            "40",
            "--hidden",
            "4",
            "--word-dim",
            "3",
            "--min-trial-ms",
            "1",
        ],
        "",
    )
    .unwrap();
    assert!(out.lines().nth(1).unwrap().ends_with("\t-"));
}

#[test]
fn diagnostics_commands() {
    let (code, out) = run(&["check-dp", "--count", "50", "--json"], "").unwrap();
    assert_eq!(code, 0);
    let report: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(report["instances"], 50);
    assert_eq!(report["pass"], true);

    let (code, out) = run(
        &[
            "check-init",
            "--dim",
            "10",
            "--hidden",
            "10",
            "--samples",
            "20000",
        ],
        "",
    )
    .unwrap();
    assert_eq!(code, 0);
    assert!(out.trim_end().ends_with("PASS"), "{out}");
    assert!(run(&["check-init", "--samples", "100"], "").is_err());
}
