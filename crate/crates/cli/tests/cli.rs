use std::path::Path;
use std::process::{Command, Output};

use iclaudit::models::{save_checkpoint, ModelSpec, ToyAttentionConfig};

fn iclaudit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_iclaudit")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn column(csv_text: &str, name: &str) -> Vec<String> {
    let mut r = csv::Reader::from_reader(csv_text.as_bytes());
    let idx = r.headers().unwrap().iter().position(|h| h == name).unwrap();
    r.records().map(|rec| rec.unwrap()[idx].to_string()).collect()
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn doubling_under_the_oracle_collapses_every_sequence() {
    let o = iclaudit(&["probe", "doubling", "--scorer", "oracle", "--random", "300x200"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let doubled = column(&stdout(&o), "pppl_2x");
    assert_eq!(doubled.len(), 300);
    assert!(doubled.iter().all(|v| v == "1"), "{doubled:?}");
}

#[test]
fn unknown_probe_is_a_usage_error() {
    assert_eq!(code(&iclaudit(&["probe", "nonsense"])), 2);
    assert_eq!(code(&iclaudit(&["probe", "doubling", "--scorer", "nope", "--random", "2x20"])), 2);
    assert_eq!(code(&iclaudit(&["probe", "doubling", "--scorer", "oracle"])), 2);
    assert_eq!(code(&iclaudit(&["probe", "skip", "--set", "lenght=40"])), 2);
    assert_eq!(code(&iclaudit(&["score", "--random", "2x20", "--precision", "f32"])), 2);
}

#[test]
fn ofs_scoring_issues_one_query_per_sequence() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = iclaudit(&["score", "--ofs", "--scorer", "uniform", "--random", "7x10-40", "--out", out]);
    assert_eq!(code(&o), 0);
    let report: serde_json::Value = serde_json::from_slice(&read(&dir.path().join("score.json"))).unwrap();
    assert_eq!(report["provenance"]["scorer_queries"], 7);
    assert!(dir.path().join("config.toml").exists());
    assert!(dir.path().join("score.run.json").exists());
}

#[test]
fn filter_keeps_rows_strictly_above_the_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let scores = dir.path().join("scores.csv");
    std::fs::write(&scores, "id,len,pppl,flag\na,10,3.0,\nb,10,5.0,\nc,10,7.5,\nd,10,9.0,exceeds context\n").unwrap();
    let o = iclaudit(&["filter", "--pppl-min", "5", "--scores", scores.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert_eq!(column(&stdout(&o), "id"), vec!["c"]);

    let fasta = dir.path().join("c.fasta");
    std::fs::write(&fasta, ">a\nACDEFGHIKL\n>c\nMNPQRSTVWY\n").unwrap();
    let o = iclaudit(&["filter", "--pppl-min", "5", "--scores", scores.to_str().unwrap(), "--corpus", fasta.to_str().unwrap()]);
    assert_eq!(stdout(&o), ">c\nMNPQRSTVWY\n");
}

#[test]
fn filter_scores_the_corpus_when_no_table_is_given() {
    let dir = tempfile::tempdir().unwrap();
    let fasta = dir.path().join("c.fasta");
    // The second record is a tandem copy, which the oracle finds trivial.
    let unit = "MKTAYIAKQRQISFVKSHFSRQLEERLGLIEVQ";
    std::fs::write(&fasta, format!(">single\n{unit}\n>double\n{unit}{unit}\n")).unwrap();
    let o = iclaudit(&["filter", "--pppl-min", "5", "--corpus", fasta.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o), format!(">single\n{unit}\n"));
}

#[test]
fn missing_embeddings_exit_with_a_capability_report() {
    let o = iclaudit(&["embed-regress", "--scorer", "oracle", "--random", "4x20"]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("\"embeddings\":false"));
}

#[test]
fn overflowing_rows_make_a_partial_run() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("small.ckpt");
    let cfg = ToyAttentionConfig { width: 8, heads: 2, ff_width: 16, depth: 1, context_cap: 40, ..ToyAttentionConfig::default() };
    save_checkpoint(&ckpt, &ModelSpec::Attention(cfg).build().unwrap(), &serde_json::json!({})).unwrap();
    let scorer = format!("toy:{}", ckpt.display());
    let o = iclaudit(&["probe", "doubling", "--scorer", &scorer, "--random", "3x30"]);
    assert_eq!(code(&o), 5);
    assert_eq!(column(&stdout(&o), "flag"), vec!["exceeds context"; 3]);
}

#[test]
fn reruns_are_byte_identical_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, workers: &str| {
        let out = dir.path().join(name);
        let o = iclaudit(&[
            "probe", "needle_haystack", "--set", "n_samples=3", "--set", "haystack_sizes=[0, 40]",
            "--seed", "11", "--workers", workers, "--out", out.to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        out
    };
    let (a, b, c) = (run("a", "1"), run("b", "1"), run("c", "3"));
    for f in ["needle_haystack.csv", "needle_haystack.json"] {
        assert_eq!(read(&a.join(f)), read(&b.join(f)), "{f}");
    }
    assert_eq!(read(&a.join("needle_haystack.csv")), read(&c.join("needle_haystack.csv")));
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "config_version = 1\nscorer = \"uniform\"\nrandom = \"3x20\"\nseed = 1\n\n[params]\nmode = \"ofs\"\n").unwrap();
    let out = dir.path().join("out");
    let o = iclaudit(&["score", "--config", cfg.to_str().unwrap(), "--seed", "2", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let echo: toml::Table = toml::from_str(&String::from_utf8(read(&out.join("config.toml"))).unwrap()).unwrap();
    assert_eq!(echo["seed"].as_integer(), Some(2));
    assert_eq!(echo["scorer"].as_str(), Some("uniform"));

    std::fs::write(&cfg, "config_version = 9\n").unwrap();
    assert_eq!(code(&iclaudit(&["score", "--config", cfg.to_str().unwrap()])), 2);
}

#[test]
fn trained_checkpoints_load_as_scorers() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("toy");
    let o = iclaudit(&["train-toy", "--fixture", "conv-rf17", "--steps", "2", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("train_loss.csv").exists());
    let scorer = format!("toy:{}", out.join("conv-rf17.ckpt").display());
    let o = iclaudit(&["score", "--scorer", &scorer, "--random", "2x12"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(column(&stdout(&o), "pppl").len(), 2);
}
