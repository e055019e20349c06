//! Command-line front end: scoring, nested distances, metrics, candidate
//! comparison and toy training runs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::embeddings::{EmbeddingError, EmbeddingTable, OovPolicy};
use crate::metrics::{bleu_report, naive_semantic_score, sentence_bleu, tokenize, MetricsError, MAX_ORDER, MIN_ORDER};
use crate::nested::{nested_wasserstein, NestedError};
use crate::ot::IpotConfig;
use crate::seq_match::{seq_match, MatchError};
use crate::sil::experiment::{build_env, initial_policy, paired_experiment, run_training};
use crate::sil::{ConfigError, SilError, TrainSpec};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, unreadable or malformed inputs, invalid configs. Exit 2.
    #[error("{0}")]
    Input(String),
    /// Everything else. Exit 1.
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Internal(_) => 1,
        }
    }
}

impl From<EmbeddingError> for CliError {
    fn from(e: EmbeddingError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<MatchError> for CliError {
    fn from(e: MatchError) -> Self {
        match e {
            MatchError::Embedding(e) => e.into(),
            other => CliError::Internal(other.to_string()),
        }
    }
}

impl From<NestedError> for CliError {
    fn from(e: NestedError) -> Self {
        match e {
            NestedError::Inner { source: MatchError::Embedding(_), .. } | NestedError::EmptySet { .. } => {
                CliError::Input(e.to_string())
            }
            other => CliError::Internal(other.to_string()),
        }
    }
}

impl From<SilError> for CliError {
    fn from(e: SilError) -> Self {
        match e {
            SilError::Config(_) | SilError::InvalidArgument(_) | SilError::Embedding(_) => CliError::Input(e.to_string()),
            SilError::Io(_) => CliError::Input(e.to_string()),
            other => CliError::Internal(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "wsil", version, about = "Wasserstein sequence matching and self-imitation training")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Per-pair Wasserstein distance and reward between two corpora.
    Score {
        hyp: PathBuf,
        #[arg(name = "ref")]
        reference: PathBuf,
        /// Score every hypothesis against the whole reference file (best match).
        #[arg(long)]
        corpus: bool,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Nested Wasserstein distance between two corpora.
    Nested {
        corpus_a: PathBuf,
        corpus_b: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Corpus BLEU, self-BLEU and F1-BLEU.
    Metrics {
        hyp: PathBuf,
        #[arg(name = "ref")]
        reference: PathBuf,
        /// n-gram order
        #[arg(short, long, default_value_t = 2)]
        n: usize,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// BLEU, naive embedding and Wasserstein scores of candidates against one reference.
    Compare {
        /// Reference sentence.
        #[arg(name = "ref")]
        reference: String,
        /// Candidate sentences.
        #[arg(required = true)]
        candidates: Vec<String>,
        #[arg(short, long, default_value_t = 2)]
        n: usize,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Train a toy policy from a `key = value` config file.
    Train {
        config: PathBuf,
        /// Extra `key=value` overrides applied after the file.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Also write per-step wall-clock times to this NDJSON file.
        #[arg(long)]
        timing: Option<PathBuf>,
        #[command(flatten)]
        common: CommonArgs,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OovArg {
    Strict,
    Hash,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Embedding table (`V d` header, then `token x_1 .. x_d` rows).
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Hypothesis set size for nested distances.
    #[arg(long)]
    pub k: Option<usize>,
    /// Reference set size for nested distances.
    #[arg(long = "k-prime")]
    pub k_prime: Option<usize>,
    /// Proximal weight of the transport solver.
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long = "outer-iters")]
    pub outer_iters: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = OovArg::Strict)]
    pub oov: OovArg,
    /// Lowercase corpus text before splitting on whitespace.
    #[arg(long)]
    pub lowercase: bool,
    /// JSON output (default).
    #[arg(long, conflicts_with = "table")]
    pub json: bool,
    /// CSV table output.
    #[arg(long)]
    pub table: bool,
    /// Output file (a directory for `train`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

/// Everything needed to reproduce an output artifact.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub seed: u64,
    pub config: Value,
    pub inputs: Vec<InputDigest>,
    /// Indices kept when a corpus was subsampled, per input role.
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub subsample: BTreeMap<String, Vec<usize>>,
}

impl RunManifest {
    fn new(command: &str, seed: u64, config: Value) -> Self {
        Self {
            command: command.to_string(),
            tool_version: TOOL_VERSION.to_string(),
            seed,
            config,
            inputs: Vec::new(),
            subsample: BTreeMap::new(),
        }
    }

    fn add_input(&mut self, path: &Path, bytes: &[u8]) {
        self.inputs.push(InputDigest { path: path.display().to_string(), sha256: hex::encode(Sha256::digest(bytes)) });
    }
}

fn read_input(path: &Path, manifest: &mut RunManifest) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    manifest.add_input(path, &bytes);
    String::from_utf8(bytes).map_err(|_| CliError::Input(format!("{}: not valid UTF-8", path.display())))
}

/// One sentence per line; blank lines are rejected by line number.
fn read_corpus(path: &Path, lowercase: bool, manifest: &mut RunManifest) -> Result<Vec<Vec<String>>, CliError> {
    let text = read_input(path, manifest)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let tokens = tokenize(line, lowercase);
        if tokens.is_empty() {
            return Err(CliError::Input(format!("{} line {}: empty sentence", path.display(), i + 1)));
        }
        out.push(tokens);
    }
    if out.is_empty() {
        return Err(CliError::Input(format!("{}: no sentences", path.display())));
    }
    Ok(out)
}

fn load_table(common: &CommonArgs, manifest: &mut RunManifest) -> Result<EmbeddingTable<f64>, CliError> {
    let path = common
        .embeddings
        .as_ref()
        .ok_or_else(|| CliError::Input("--embeddings PATH is required for this command".into()))?;
    let text = read_input(path, manifest)?;
    let policy = match common.oov {
        OovArg::Strict => OovPolicy::Strict,
        OovArg::Hash => OovPolicy::HashFallback,
    };
    EmbeddingTable::parse(&text, policy).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn ipot_config(common: &CommonArgs) -> Result<IpotConfig<f64>, CliError> {
    let mut cfg = IpotConfig::default();
    if let Some(g) = common.gamma {
        cfg.gamma = g;
    }
    if let Some(n) = common.outer_iters {
        cfg.outer_iters = n;
    }
    cfg.validate().map_err(|e| CliError::Input(e.to_string()))?;
    Ok(cfg)
}

fn solver_json(cfg: &IpotConfig<f64>) -> Value {
    json!({
        "gamma": cfg.gamma,
        "outer_iters": cfg.outer_iters,
        "inner_sinkhorn_iters": cfg.inner_sinkhorn_iters,
        "feasibility_tol": cfg.feasibility_tol,
    })
}

/// Rendered report: JSON text or CSV rows with a leading manifest comment.
struct Report {
    json: Value,
    table: Vec<Vec<String>>,
}

fn render(report: &Report, common: &CommonArgs, manifest: &RunManifest) -> Result<String, CliError> {
    if common.table {
        let mut out = String::new();
        let m = serde_json::to_string(manifest).map_err(|e| CliError::Internal(e.to_string()))?;
        let _ = writeln!(out, "# manifest: {m}");
        for row in &report.table {
            let _ = writeln!(out, "{}", row.iter().map(|c| csv_field(c)).collect::<Vec<_>>().join(","));
        }
        Ok(out)
    } else {
        let mut value = report.json.clone();
        value["manifest"] = serde_json::to_value(manifest).map_err(|e| CliError::Internal(e.to_string()))?;
        let mut s = serde_json::to_string_pretty(&value).map_err(|e| CliError::Internal(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn emit(text: &str, out: Option<&Path>) -> Result<(), CliError> {
    match out {
        Some(path) => fs::write(path, text).map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display()))),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes()).map_err(|e| CliError::Internal(e.to_string()))
        }
    }
}

fn fmt(x: f64) -> String {
    format!("{x}")
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn cmd_score(hyp: &Path, reference: &Path, corpus: bool, common: &CommonArgs) -> Result<(), CliError> {
    let cfg = ipot_config(common)?;
    let config = json!({
        "mode": if corpus { "corpus" } else { "pairwise" },
        "oov": common.oov,
        "lowercase": common.lowercase,
        "solver": solver_json(&cfg),
    });
    let mut manifest = RunManifest::new("score", common.seed.unwrap_or(0), config);
    let table = load_table(common, &mut manifest)?;
    let hyps = read_corpus(hyp, common.lowercase, &mut manifest)?;
    let refs = read_corpus(reference, common.lowercase, &mut manifest)?;
    if !corpus && hyps.len() != refs.len() {
        return Err(CliError::Input(format!(
            "pairwise mode needs equal line counts: {} has {}, {} has {}",
            hyp.display(),
            hyps.len(),
            reference.display(),
            refs.len()
        )));
    }
    let line_error = |i: usize, e: MatchError| -> CliError {
        match e {
            MatchError::Embedding(e) => CliError::Input(format!("{} line {}: {e}", hyp.display(), i + 1)),
            other => CliError::Internal(format!("{} line {}: {other}", hyp.display(), i + 1)),
        }
    };
    let results: Vec<(usize, f64, f64, usize)> = hyps
        .par_iter()
        .enumerate()
        .map(|(i, h)| {
            if corpus {
                let mut best: Option<(f64, f64, usize)> = None;
                for (j, r) in refs.iter().enumerate() {
                    let m = seq_match(&table, h, r, &cfg).map_err(|e| line_error(i, e))?;
                    if best.is_none_or(|(_, br, _)| m.reward > br) {
                        best = Some((m.distance, m.reward, j));
                    }
                }
                let (d, r, j) = best.expect("nonempty reference corpus");
                Ok((i, d, r, j))
            } else {
                let m = seq_match(&table, h, &refs[i], &cfg).map_err(|e| line_error(i, e))?;
                Ok((i, m.distance, m.reward, i))
            }
        })
        .collect::<Result<_, CliError>>()?;
    let pairs: Vec<Value> = results
        .iter()
        .map(|(i, d, r, j)| json!({"index": i, "ref_index": j, "w_distance": d, "w_reward": r}))
        .collect();
    let mut rows = vec![vec!["index".into(), "ref_index".into(), "w_distance".into(), "w_reward".into()]];
    rows.extend(results.iter().map(|(i, d, r, j)| vec![i.to_string(), j.to_string(), fmt(*d), fmt(*r)]));
    let report = Report {
        json: json!({
            "pairs": pairs,
            "mean_w_distance": mean(results.iter().map(|r| r.1)),
            "mean_w_reward": mean(results.iter().map(|r| r.2)),
        }),
        table: rows,
    };
    emit(&render(&report, common, &manifest)?, common.out.as_deref())
}

/// Keeps `k` of `n` items chosen with `seed`, in ascending index order.
fn subsample(n: usize, k: usize, seed: u64) -> Vec<usize> {
    if k >= n {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, n, k).into_vec();
    idx.sort_unstable();
    idx
}

fn cmd_nested(a: &Path, b: &Path, common: &CommonArgs) -> Result<(), CliError> {
    let cfg = ipot_config(common)?;
    let seed = common.seed.unwrap_or(0);
    let k = common.k.unwrap_or(5);
    let k_prime = common.k_prime.unwrap_or(5);
    if k == 0 || k_prime == 0 {
        return Err(CliError::Input("--k and --k-prime must be >= 1".into()));
    }
    let config = json!({
        "k": k,
        "k_prime": k_prime,
        "oov": common.oov,
        "lowercase": common.lowercase,
        "solver": solver_json(&cfg),
    });
    let mut manifest = RunManifest::new("nested", seed, config);
    let table = load_table(common, &mut manifest)?;
    let corpus_a = read_corpus(a, common.lowercase, &mut manifest)?;
    let corpus_b = read_corpus(b, common.lowercase, &mut manifest)?;
    // distinct streams so equal-sized corpora are not cut identically by accident
    let keep_a = subsample(corpus_a.len(), k, seed);
    let keep_b = subsample(corpus_b.len(), k_prime, seed.wrapping_add(1));
    if keep_a.len() < corpus_a.len() {
        manifest.subsample.insert("corpus_a".into(), keep_a.clone());
    }
    if keep_b.len() < corpus_b.len() {
        manifest.subsample.insert("corpus_b".into(), keep_b.clone());
    }
    let set_a: Vec<Vec<String>> = keep_a.iter().map(|&i| corpus_a[i].clone()).collect();
    let set_b: Vec<Vec<String>> = keep_b.iter().map(|&i| corpus_b[i].clone()).collect();
    let result = nested_wasserstein(&table, &set_a, &set_b, &cfg).map_err(|e| match e {
        NestedError::Inner { i, j, source: MatchError::Embedding(err) } => CliError::Input(format!(
            "{} line {} vs {} line {}: {err}",
            a.display(),
            keep_a[i] + 1,
            b.display(),
            keep_b[j] + 1
        )),
        other => other.into(),
    })?;
    let k_eff = result.num_hyps() as f64;
    let plan = &result.outer_plan;
    let per_hyp: Vec<Value> = result
        .per_hyp_reward
        .iter()
        .enumerate()
        .map(|(i, r)| json!({"index": keep_a[i], "r_ns": r, "r_ns_normalized": r * k_eff}))
        .collect();
    let matrix = |m: &ndarray::Array2<f64>| -> Vec<Vec<f64>> { m.rows().into_iter().map(|r| r.to_vec()).collect() };
    let mut rows = vec![vec!["index".into(), "r_ns".into(), "r_ns_normalized".into()]];
    rows.extend(
        result
            .per_hyp_reward
            .iter()
            .enumerate()
            .map(|(i, r)| vec![keep_a[i].to_string(), fmt(*r), fmt(r * k_eff)]),
    );
    let report = Report {
        json: json!({
            "w_nc": result.distance,
            "k": keep_a.len(),
            "k_prime": keep_b.len(),
            "outer_plan": {
                "values": matrix(&plan.values),
                "mass": plan.mass(),
                "marginal_violation": plan.marginal_violation(),
                "converged": plan.converged,
                "iterations_used": plan.iterations_used,
            },
            "seq_cost_matrix": matrix(&result.seq_cost_matrix),
            "per_hyp": per_hyp,
        }),
        table: rows,
    };
    emit(&render(&report, common, &manifest)?, common.out.as_deref())
}

fn cmd_metrics(hyp: &Path, reference: &Path, n: usize, common: &CommonArgs) -> Result<(), CliError> {
    if !(MIN_ORDER..=MAX_ORDER).contains(&n) {
        return Err(CliError::Input(format!("--n must be in {MIN_ORDER}..={MAX_ORDER}, got {n}")));
    }
    let config = json!({"n": n, "lowercase": common.lowercase});
    let mut manifest = RunManifest::new("metrics", common.seed.unwrap_or(0), config);
    let hyps = read_corpus(hyp, common.lowercase, &mut manifest)?;
    let refs = read_corpus(reference, common.lowercase, &mut manifest)?;
    let bleu = bleu_report(&hyps, &refs, n)?;
    let report = Report {
        json: serde_json::to_value(&bleu).map_err(|e| CliError::Internal(e.to_string()))?,
        table: vec![
            vec!["order".into(), "test_bleu".into(), "self_bleu".into(), "f1_bleu".into()],
            vec![bleu.order.to_string(), fmt(bleu.test_bleu), fmt(bleu.self_bleu), fmt(bleu.f1_bleu)],
        ],
    };
    emit(&render(&report, common, &manifest)?, common.out.as_deref())
}

fn cmd_compare(reference: &str, candidates: &[String], n: usize, common: &CommonArgs) -> Result<(), CliError> {
    if !(MIN_ORDER..=MAX_ORDER).contains(&n) {
        return Err(CliError::Input(format!("--n must be in {MIN_ORDER}..={MAX_ORDER}, got {n}")));
    }
    let cfg = ipot_config(common)?;
    let config = json!({
        "n": n,
        "oov": common.oov,
        "lowercase": common.lowercase,
        "reference": reference,
        "candidates": candidates,
        "solver": solver_json(&cfg),
    });
    let mut manifest = RunManifest::new("compare", common.seed.unwrap_or(0), config);
    let table = load_table(common, &mut manifest)?;
    let ref_tokens = tokenize(reference, common.lowercase);
    if ref_tokens.is_empty() {
        return Err(CliError::Input("empty reference sentence".into()));
    }
    let refs = vec![ref_tokens.clone()];
    let mut rows_json = Vec::new();
    let mut rows = vec![vec!["index".into(), "candidate".into(), "bleu".into(), "naive".into(), "w_reward".into()]];
    for (i, cand) in candidates.iter().enumerate() {
        let tokens = tokenize(cand, common.lowercase);
        if tokens.is_empty() {
            return Err(CliError::Input(format!("candidate {}: empty sentence", i + 1)));
        }
        let bleu = sentence_bleu(&tokens, &refs, n)?;
        let naive = naive_semantic_score(&table, &tokens, &ref_tokens)
            .map_err(|e| CliError::Input(format!("candidate {}: {e}", i + 1)))?;
        let w = seq_match(&table, &tokens, &ref_tokens, &cfg).map_err(|e| match e {
            MatchError::Embedding(e) => CliError::Input(format!("candidate {}: {e}", i + 1)),
            other => other.into(),
        })?;
        rows_json.push(json!({"index": i, "candidate": cand, "bleu": bleu, "naive": naive, "w_reward": w.reward}));
        rows.push(vec![i.to_string(), cand.clone(), fmt(bleu), fmt(naive), fmt(w.reward)]);
    }
    let best = |key: &str| -> usize {
        let mut best = 0;
        for (i, r) in rows_json.iter().enumerate() {
            if r[key].as_f64() > rows_json[best][key].as_f64() {
                best = i;
            }
        }
        best
    };
    let report = Report {
        json: json!({
            "reference": reference,
            "order": n,
            "candidates": rows_json,
            "best": {"bleu": best("bleu"), "naive": best("naive"), "w_reward": best("w_reward")},
        }),
        table: rows,
    };
    emit(&render(&report, common, &manifest)?, common.out.as_deref())
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))
}

fn cmd_train(
    config_path: &Path,
    overrides: &[String],
    timing: Option<&Path>,
    common: &CommonArgs,
) -> Result<(), CliError> {
    let out_dir = common
        .out
        .as_ref()
        .ok_or_else(|| CliError::Input("train needs --out DIR for its log and policy files".into()))?;
    let mut manifest = RunManifest::new("train", 0, Value::Null);
    let text = read_input(config_path, &mut manifest)?;
    let mut spec = TrainSpec::parse(&text).map_err(|e| CliError::Input(format!("{}: {e}", config_path.display())))?;
    for item in overrides {
        let (key, value) = item
            .split_once('=')
            .ok_or_else(|| CliError::Input(format!("--set expects KEY=VALUE, got `{item}`")))?;
        spec.set(key.trim(), value.trim(), 0).map_err(|e| CliError::Input(format!("--set {item}: {e}")))?;
    }
    if let Some(seed) = common.seed {
        spec.sil.seed = seed;
    }
    if let Some(k) = common.k {
        spec.sil.k = k;
    }
    if let Some(k) = common.k_prime {
        spec.sil.k_prime = k;
    }
    if let Some(g) = common.gamma {
        spec.sil.ipot.gamma = g;
    }
    if let Some(n) = common.outer_iters {
        spec.sil.ipot.outer_iters = n;
    }
    if let Some(p) = &common.embeddings {
        spec.embeddings = Some(p.display().to_string());
    }
    if spec.steps == 0 {
        return Err(CliError::Input("steps must be >= 1".into()));
    }
    let table = match &spec.embeddings {
        Some(p) => {
            let mut args = common.clone();
            args.embeddings = Some(PathBuf::from(p));
            Some(load_table(&args, &mut manifest)?)
        }
        None => None,
    };
    manifest.seed = spec.sil.seed;
    manifest.config = serde_json::to_value(&spec).map_err(|e| CliError::Internal(e.to_string()))?;
    fs::create_dir_all(out_dir).map_err(|e| CliError::Input(format!("cannot create {}: {e}", out_dir.display())))?;
    let manifest_json = serde_json::to_value(&manifest).map_err(|e| CliError::Internal(e.to_string()))?;
    let pretty = |v: &Value| -> Result<String, CliError> {
        let mut s = serde_json::to_string_pretty(v).map_err(|e| CliError::Internal(e.to_string()))?;
        s.push('\n');
        Ok(s)
    };
    write_file(&out_dir.join("manifest.json"), &pretty(&manifest_json)?)?;

    if let Some(pairs) = spec.paired_seeds {
        if pairs == 0 {
            return Err(CliError::Input("paired_seeds must be >= 1".into()));
        }
        let summary = paired_experiment(&spec, pairs, table.as_ref())?;
        let mut value = serde_json::to_value(&summary).map_err(|e| CliError::Internal(e.to_string()))?;
        value["manifest"] = manifest_json;
        return write_file(&out_dir.join("summary.json"), &pretty(&value)?);
    }

    let env = build_env(&spec, table)?;
    let policy = initial_policy(&spec, &env)?;
    let mut log = format!("{}\n", json!({ "manifest": manifest_json }));
    let mut times = String::new();
    let started = Instant::now();
    let outcome = run_training(&spec, &env, policy, |record| {
        let line = serde_json::to_string(record).map_err(|e| SilError::InvalidArgument(e.to_string()))?;
        log.push_str(&line);
        log.push('\n');
        if timing.is_some() {
            let _ = writeln!(times, "{}", json!({"step": record.step, "elapsed_ms": started.elapsed().as_secs_f64() * 1e3}));
        }
        Ok(())
    })?;
    write_file(&out_dir.join("log.ndjson"), &log)?;
    if let Some(path) = timing {
        write_file(path, &times)?;
    }
    let snapshot = json!({
        "manifest": manifest_json,
        "initial_reward": outcome.initial_reward,
        "final_reward": outcome.final_reward,
        "rl_updates": outcome.rl_updates,
        "sil_updates": outcome.sil_updates,
        "policy": outcome.policy,
    });
    write_file(&out_dir.join("policy.json"), &pretty(&snapshot)?)
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Score { hyp, reference, corpus, common } => cmd_score(hyp, reference, *corpus, common),
        Command::Nested { corpus_a, corpus_b, common } => cmd_nested(corpus_a, corpus_b, common),
        Command::Metrics { hyp, reference, n, common } => cmd_metrics(hyp, reference, *n, common),
        Command::Compare { reference, candidates, n, common } => cmd_compare(reference, candidates, *n, common),
        Command::Train { config, overrides, timing, common } => cmd_train(config, overrides, timing.as_deref(), common),
    }
}
