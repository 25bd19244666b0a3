//! End-to-end tests of the `pjfit` binary: exit codes, artifacts,
//! determinism of produced files.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_pjfit")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("binary runs")
}

fn tmp_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join("pjfit-cli-tests").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_corpus_config(dir: &Path) -> PathBuf {
    let path = dir.join("corpus.json");
    std::fs::write(
        &path,
        serde_json::json!({
            "seed": 11,
            "n_users": 30,
            "n_jobs": 40,
            "vocab_size": 300,
            "k_skills": 20,
            "sentence_len": [4, 6],
            "interactions_per_user": 4
        })
        .to_string(),
    )
    .unwrap();
    path
}

fn write_train_config(dir: &Path, steps: usize) -> PathBuf {
    let path = dir.join("train.json");
    std::fs::write(
        &path,
        serde_json::json!({
            "seed": 11,
            "steps": steps,
            "batch_mlm": 2,
            "batch_exp": 2,
            "batch_att": 2,
            "batch_app": 2,
            "model": {"hidden_dim": 8, "n_layers": 1, "ff_dim": 16, "max_sentence_len": 8}
        })
        .to_string(),
    )
    .unwrap();
    path
}

fn manifest(dir: &Path) -> serde_json::Value {
    let text = std::fs::read_to_string(dir.join("manifest.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

#[test]
fn gen_corpus_is_deterministic_and_manifested() {
    let dir = tmp_dir("gen");
    let config = write_corpus_config(&dir);

    let out1 = dir.join("a");
    let out2 = dir.join("b");
    let r1 = run(&["gen-corpus", "--config", config.to_str().unwrap(), "--out", out1.to_str().unwrap()]);
    assert!(r1.status.success(), "{}", String::from_utf8_lossy(&r1.stderr));
    let r2 = run(&["gen-corpus", "--config", config.to_str().unwrap(), "--out", out2.to_str().unwrap()]);
    assert!(r2.status.success());

    let m1 = manifest(&out1);
    let m2 = manifest(&out2);
    assert_eq!(m1["corpus_hash"], m2["corpus_hash"]);
    assert!(m1["corpus_hash"].as_str().unwrap().len() == 64);
    assert_eq!(
        std::fs::read(out1.join("corpus.jsonl")).unwrap(),
        std::fs::read(out2.join("corpus.jsonl")).unwrap()
    );
}

#[test]
fn invalid_config_values_exit_2() {
    let dir = tmp_dir("badconfig");
    let config = write_corpus_config(&dir);
    // negative n_users cannot deserialize into a count
    let out = dir.join("out");
    let r = run(&[
        "gen-corpus",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--set",
        "n_users=-3",
    ]);
    assert_eq!(r.status.code(), Some(2), "{}", String::from_utf8_lossy(&r.stderr));

    // zero users fails validation the same way
    let r = run(&[
        "gen-corpus",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--set",
        "n_users=0",
    ]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn missing_corpus_path_exits_2() {
    let dir = tmp_dir("missing");
    let train = write_train_config(&dir, 1);
    let r = run(&[
        "pretrain",
        "--corpus",
        dir.join("nope.jsonl").to_str().unwrap(),
        "--config",
        train.to_str().unwrap(),
        "--out",
        dir.join("out").to_str().unwrap(),
    ]);
    assert_eq!(r.status.code(), Some(2), "{}", String::from_utf8_lossy(&r.stderr));
}

#[test]
fn pretrain_eval_export_round_trip() {
    let dir = tmp_dir("pipeline");
    let corpus_config = write_corpus_config(&dir);
    let train_config = write_train_config(&dir, 2);

    let gen_out = dir.join("corpus");
    assert!(run(&[
        "gen-corpus",
        "--config",
        corpus_config.to_str().unwrap(),
        "--out",
        gen_out.to_str().unwrap()
    ])
    .status
    .success());
    let corpus = gen_out.join("corpus.jsonl");

    let train_out = dir.join("train");
    let r = run(&[
        "pretrain",
        "--corpus",
        corpus.to_str().unwrap(),
        "--config",
        train_config.to_str().unwrap(),
        "--out",
        train_out.to_str().unwrap(),
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let log = std::fs::read_to_string(train_out.join("train_log.jsonl")).unwrap();
    // meta line + one line per step
    assert_eq!(log.lines().count(), 3);
    let ckpt = train_out.join("model.ckpt");
    assert!(ckpt.exists());

    let eval_out = dir.join("eval");
    let r = run(&[
        "eval",
        "--corpus",
        corpus.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--task",
        "job_rec",
        "--out",
        eval_out.to_str().unwrap(),
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    assert!(eval_out.join("report_job_rec.json").exists());
    assert!(eval_out.join("report_job_rec.txt").exists());
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(eval_out.join("report_job_rec.json")).unwrap())
            .unwrap();
    assert!(report["auc"].as_f64().unwrap() > 0.0);

    let bad_task = run(&[
        "eval",
        "--corpus",
        corpus.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--task",
        "nonsense",
        "--out",
        eval_out.to_str().unwrap(),
    ]);
    assert_eq!(bad_task.status.code(), Some(2));

    let export_out = dir.join("export");
    let r = run(&[
        "export-embeddings",
        "--corpus",
        corpus.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--level",
        "individual",
        "--out",
        export_out.to_str().unwrap(),
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let lines = std::fs::read_to_string(export_out.join("embeddings_individual.jsonl")).unwrap();
    // one record per document: 30 profiles + 40 jobs
    assert_eq!(lines.lines().count(), 70);
    let first: serde_json::Value = serde_json::from_str(lines.lines().next().unwrap()).unwrap();
    assert_eq!(first["level"], "individual");
    assert_eq!(first["vector"].as_array().unwrap().len(), 8);
}

#[test]
fn lambda_override_shows_up_in_the_log() {
    let dir = tmp_dir("lambda");
    let corpus_config = write_corpus_config(&dir);
    let train_config = write_train_config(&dir, 2);

    let gen_out = dir.join("corpus");
    assert!(run(&[
        "gen-corpus",
        "--config",
        corpus_config.to_str().unwrap(),
        "--out",
        gen_out.to_str().unwrap()
    ])
    .status
    .success());

    let train_out = dir.join("train");
    let r = run(&[
        "pretrain",
        "--corpus",
        gen_out.join("corpus.jsonl").to_str().unwrap(),
        "--config",
        train_config.to_str().unwrap(),
        "--out",
        train_out.to_str().unwrap(),
        "--set",
        "lambda.app=0",
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let log = std::fs::read_to_string(train_out.join("train_log.jsonl")).unwrap();
    for line in log.lines().skip(1) {
        let entry: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(entry.get("app").is_none(), "app loss logged despite lambda.app=0: {line}");
        assert!(entry.get("mlm").is_some());
    }

    let m = manifest(&train_out);
    assert_eq!(m["resolved_config"]["lambda"]["app"], serde_json::json!(0.0));
}

#[test]
fn pretrain_is_bit_deterministic_across_runs() {
    let dir = tmp_dir("determinism");
    let corpus_config = write_corpus_config(&dir);
    let train_config = write_train_config(&dir, 2);

    let gen_out = dir.join("corpus");
    assert!(run(&[
        "gen-corpus",
        "--config",
        corpus_config.to_str().unwrap(),
        "--out",
        gen_out.to_str().unwrap()
    ])
    .status
    .success());
    let corpus = gen_out.join("corpus.jsonl");

    let t1 = dir.join("t1");
    let t2 = dir.join("t2");
    for t in [&t1, &t2] {
        assert!(run(&[
            "pretrain",
            "--corpus",
            corpus.to_str().unwrap(),
            "--config",
            train_config.to_str().unwrap(),
            "--out",
            t.to_str().unwrap(),
        ])
        .status
        .success());
    }
    assert_eq!(
        std::fs::read(t1.join("model.ckpt")).unwrap(),
        std::fs::read(t2.join("model.ckpt")).unwrap()
    );
    assert_eq!(
        std::fs::read(t1.join("train_log.jsonl")).unwrap(),
        std::fs::read(t2.join("train_log.jsonl")).unwrap()
    );
}
