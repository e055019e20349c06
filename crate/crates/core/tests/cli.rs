use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn wsil(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wsil")).args(args).output().expect("binary runs")
}

fn ok_json(args: &[&str]) -> Value {
    let out = wsil(args);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn check_schema(name: &str, value: &Value) {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("schemas").join(format!("{name}.schema.json"));
    let schema: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    let validator = jsonschema::validator_for(&schema).expect("schema compiles");
    let errors: Vec<String> = validator.iter_errors(value).map(|e| format!("{} at {}", e, e.instance_path())).collect();
    assert!(errors.is_empty(), "{name}: {errors:?}");
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.display().to_string()
}

fn emb() -> String {
    fixture("synonyms.vec").display().to_string()
}

#[test]
fn identical_corpora_score_full_reward() {
    let triple = fixture("synonym_triple.txt").display().to_string();
    let v = ok_json(&["score", &triple, &triple, "--embeddings", &emb()]);
    check_schema("score", &v);
    assert!((v["mean_w_reward"].as_f64().unwrap() - 1.0).abs() < 1e-3);
    assert!(v["mean_w_distance"].as_f64().unwrap() < 1e-3);
    assert_eq!(v["pairs"].as_array().unwrap().len(), 3);
    assert_eq!(v["manifest"]["inputs"].as_array().unwrap().len(), 3);
}

#[test]
fn mismatched_line_counts_are_input_errors() {
    let dir = tempfile::tempdir().unwrap();
    let a = write(dir.path(), "a.txt", "a man\nis playing\n");
    let b = write(dir.path(), "b.txt", "a man\n");
    let out = wsil(&["score", &a, &b, "--embeddings", &emb()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
}

#[test]
fn strict_oov_names_the_token_and_hash_accepts_it() {
    let dir = tempfile::tempdir().unwrap();
    let a = write(dir.path(), "a.txt", "a zebra\n");
    let out = wsil(&["score", &a, &a, "--embeddings", &emb()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("zebra"));
    let v = ok_json(&["score", &a, &a, "--embeddings", &emb(), "--oov", "hash"]);
    assert!((v["mean_w_reward"].as_f64().unwrap() - 1.0).abs() < 1e-3);
}

#[test]
fn missing_embeddings_file_is_input_error() {
    let triple = fixture("synonym_triple.txt").display().to_string();
    let out = wsil(&["score", &triple, &triple, "--embeddings", "/nonexistent/table.vec"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn single_pair_nested_equals_pairwise_score() {
    let dir = tempfile::tempdir().unwrap();
    let a = write(dir.path(), "a.txt", "a man is playing a guitar\n");
    let b = write(dir.path(), "b.txt", "one guy was performing at concert\n");
    let score = ok_json(&["score", &a, &b, "--embeddings", &emb()]);
    let nested = ok_json(&["nested", &a, &b, "--embeddings", &emb(), "--k", "1", "--k-prime", "1"]);
    check_schema("nested", &nested);
    let d = score["mean_w_distance"].as_f64().unwrap();
    assert!((nested["w_nc"].as_f64().unwrap() - d).abs() < 1e-9);
    let r = nested["per_hyp"][0]["r_ns"].as_f64().unwrap();
    assert!((r - score["mean_w_reward"].as_f64().unwrap()).abs() < 1e-9);
}

#[test]
fn orthogonal_corpora_have_half_nested_distance() {
    let v = ok_json(&[
        "nested",
        fixture("orthogonal_a.txt").to_str().unwrap(),
        fixture("orthogonal_b.txt").to_str().unwrap(),
        "--embeddings",
        fixture("orthogonal.vec").to_str().unwrap(),
        "--k",
        "2",
        "--k-prime",
        "2",
    ]);
    check_schema("nested", &v);
    assert!((v["w_nc"].as_f64().unwrap() - 0.5).abs() < 1e-3, "{}", v["w_nc"]);
    assert!(v["outer_plan"]["marginal_violation"].as_f64().unwrap() < 1e-5);
}

#[test]
fn nested_subsampling_is_recorded() {
    let triple = fixture("synonym_triple.txt").display().to_string();
    let v = ok_json(&["nested", &triple, &triple, "--embeddings", &emb(), "--k", "2", "--k-prime", "2", "--seed", "4"]);
    check_schema("nested", &v);
    assert_eq!(v["k"], 2);
    assert!(v["manifest"]["subsample"].is_object());
}

#[test]
fn metrics_match_golden_file() {
    let v = ok_json(&[
        "metrics",
        fixture("bleu_hyp.txt").to_str().unwrap(),
        fixture("bleu_ref.txt").to_str().unwrap(),
        "-n",
        "2",
    ]);
    check_schema("metrics", &v);
    let golden: Value = serde_json::from_str(&std::fs::read_to_string(fixture("bleu_golden.json")).unwrap()).unwrap();
    for key in ["test_bleu", "self_bleu", "f1_bleu"] {
        assert!((v[key].as_f64().unwrap() - golden[key].as_f64().unwrap()).abs() < 1e-12, "{key}");
    }
}

#[test]
fn compare_ranks_candidates_and_accepts_one() {
    let lines: Vec<String> =
        std::fs::read_to_string(fixture("synonym_triple.txt")).unwrap().lines().map(String::from).collect();
    let v = ok_json(&["compare", &lines[0], &lines[1], &lines[2], "--embeddings", &emb()]);
    check_schema("compare", &v);
    assert_eq!(v["best"]["bleu"], 0);
    assert_eq!(v["best"]["naive"], 0);
    assert_eq!(v["best"]["w_reward"], 1);

    let single = ok_json(&["compare", &lines[0], &lines[0], "--embeddings", &emb()]);
    check_schema("compare", &single);
    assert_eq!(single["candidates"].as_array().unwrap().len(), 1);
}

#[test]
fn table_output_starts_with_manifest_comment() {
    let triple = fixture("synonym_triple.txt").display().to_string();
    let out = wsil(&["score", &triple, &triple, "--embeddings", &emb(), "--table"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    let first = lines.next().unwrap();
    let manifest: Value = serde_json::from_str(first.strip_prefix("# manifest: ").unwrap()).unwrap();
    check_schema("manifest", &manifest);
    assert!(lines.next().unwrap().contains("w_reward"));
}

#[test]
fn out_flag_writes_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("metrics.json");
    let out = wsil(&[
        "metrics",
        fixture("bleu_hyp.txt").to_str().unwrap(),
        fixture("bleu_ref.txt").to_str().unwrap(),
        "--out",
        path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert!(out.stdout.is_empty());
    let v: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    check_schema("metrics", &v);
}

#[test]
fn bad_config_key_is_input_error_naming_key() {
    let dir = tempfile::tempdir().unwrap();
    let conf = write(dir.path(), "bad.conf", "steps = 3\nlamda = 0.1\n");
    let out_dir = dir.path().join("run");
    let out = wsil(&["train", &conf, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("lamda") && stderr.contains("line 2"), "{stderr}");
}

#[test]
fn train_writes_schema_valid_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let out = wsil(&[
        "train",
        fixture("train/conditional_wsil_d.conf").to_str().unwrap(),
        "--set",
        "steps=12",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let log = std::fs::read_to_string(out_dir.join("log.ndjson")).unwrap();
    let lines: Vec<Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 13);
    assert!(lines[0].get("manifest").is_some());
    for line in &lines {
        check_schema("train_log_line", line);
    }
    let policy: Value = serde_json::from_str(&std::fs::read_to_string(out_dir.join("policy.json")).unwrap()).unwrap();
    check_schema("train_policy", &policy);
    let manifest: Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("manifest.json")).unwrap()).unwrap();
    check_schema("manifest", &manifest);
    assert_eq!(manifest["config"]["steps"], 12);
}

#[test]
fn paired_train_writes_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("pairs");
    let out = wsil(&[
        "train",
        fixture("train/lambda_zero.conf").to_str().unwrap(),
        "--set",
        "paired_seeds=2",
        "--set",
        "steps=10",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    check_schema("train_summary", &v);
    assert_eq!(v["runs"].as_array().unwrap().len(), 2);
    // With lambda = 0 both arms follow the same updates.
    assert_eq!(v["wins"], 2);
}

#[test]
fn train_without_out_dir_is_input_error() {
    let out = wsil(&["train", fixture("train/lambda_zero.conf").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}
