//! n-gram corpus metrics: test-BLEU, self-BLEU and F1-BLEU, plus the naive
//! average-embedding similarity used as a semantic baseline.
//!
//! BLEU here is unsmoothed: clipped n-gram precisions up to order `n` with
//! uniform weights and the usual brevity penalty. Every hypothesis is scored
//! against the whole reference corpus (the unconditional-generation
//! convention), so a reference n-gram may be matched by any hypothesis up to
//! its largest count in a single reference.

use std::collections::HashMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embeddings::{cosine_cost, EmbeddingError, EmbeddingTable};
use crate::scalar::Scalar;

pub const MIN_ORDER: usize = 2;
pub const MAX_ORDER: usize = 5;
/// Self-BLEU scores at most this many sentences.
pub const SELF_BLEU_CAP: usize = 1000;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("self-BLEU needs at least 2 sentences, got {0}")]
    TooFewSentences(usize),
    #[error("BLEU order must be in {MIN_ORDER}..={MAX_ORDER}, got {0}")]
    InvalidOrder(usize),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BleuReport {
    pub order: usize,
    pub test_bleu: f64,
    pub self_bleu: f64,
    pub f1_bleu: f64,
}

/// Splits on ASCII whitespace, optionally lowercasing first.
pub fn tokenize(line: &str, lowercase: bool) -> Vec<String> {
    if lowercase {
        line.to_lowercase().split_ascii_whitespace().map(String::from).collect()
    } else {
        line.split_ascii_whitespace().map(String::from).collect()
    }
}

fn check_order(n: usize) -> Result<(), MetricsError> {
    if (MIN_ORDER..=MAX_ORDER).contains(&n) {
        Ok(())
    } else {
        Err(MetricsError::InvalidOrder(n))
    }
}

fn ngram_counts<T: AsRef<str>>(tokens: &[T], k: usize) -> HashMap<Vec<&str>, usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= k {
        for w in tokens.windows(k) {
            *counts.entry(w.iter().map(AsRef::as_ref).collect()).or_insert(0) += 1;
        }
    }
    counts
}

/// Largest and second-largest per-reference count of one n-gram, so a
/// single reference can be left out without rebuilding the table.
#[derive(Debug, Clone, Copy)]
struct TopCounts {
    best: usize,
    owner: usize,
    second: usize,
}

impl TopCounts {
    fn offer(&mut self, count: usize, owner: usize) {
        if count > self.best {
            self.second = self.best;
            self.best = count;
            self.owner = owner;
        } else if count > self.second {
            self.second = count;
        }
    }

    fn excluding(&self, skip: Option<usize>) -> usize {
        if skip == Some(self.owner) {
            self.second
        } else {
            self.best
        }
    }
}

struct ReferenceStats<'a> {
    order: usize,
    tables: Vec<HashMap<Vec<&'a str>, TopCounts>>,
    lengths: Vec<usize>,
}

impl<'a> ReferenceStats<'a> {
    fn new<T: AsRef<str>>(refs: &'a [Vec<T>], order: usize) -> Self {
        let mut tables: Vec<HashMap<Vec<&str>, TopCounts>> = vec![HashMap::new(); order];
        for (idx, r) in refs.iter().enumerate() {
            for (k, table) in tables.iter_mut().enumerate() {
                for (gram, count) in ngram_counts(r, k + 1) {
                    table.entry(gram).or_insert(TopCounts { best: 0, owner: usize::MAX, second: 0 }).offer(count, idx);
                }
            }
        }
        Self { order, tables, lengths: refs.iter().map(Vec::len).collect() }
    }

    /// Reference length closest to `len`, preferring the shorter on ties.
    fn closest_length(&self, len: usize, skip: Option<usize>) -> Option<usize> {
        self.lengths
            .iter()
            .enumerate()
            .filter(|(i, _)| Some(*i) != skip)
            .map(|(_, l)| *l)
            .min_by_key(|l| (l.abs_diff(len), *l))
    }
}

#[derive(Debug, Default, Clone)]
struct BleuAccumulator {
    clipped: Vec<usize>,
    total: Vec<usize>,
    hyp_len: usize,
    ref_len: usize,
}

impl BleuAccumulator {
    fn new(order: usize) -> Self {
        Self { clipped: vec![0; order], total: vec![0; order], hyp_len: 0, ref_len: 0 }
    }

    fn add<T: AsRef<str>>(&mut self, hyp: &[T], refs: &ReferenceStats<'_>, skip: Option<usize>) {
        for k in 0..refs.order {
            for (gram, count) in ngram_counts(hyp, k + 1) {
                let max_ref = refs.tables[k].get(&gram).map_or(0, |t| t.excluding(skip));
                self.clipped[k] += count.min(max_ref);
                self.total[k] += count;
            }
        }
        self.hyp_len += hyp.len();
        self.ref_len += refs.closest_length(hyp.len(), skip).unwrap_or(0);
    }

    fn score(&self) -> f64 {
        if self.hyp_len == 0 || self.clipped.iter().zip(&self.total).any(|(c, t)| *c == 0 || *t == 0) {
            return 0.0;
        }
        let order = self.clipped.len() as f64;
        let log_precision: f64 =
            self.clipped.iter().zip(&self.total).map(|(c, t)| (*c as f64 / *t as f64).ln()).sum::<f64>() / order;
        let brevity = if self.hyp_len > self.ref_len {
            1.0
        } else {
            (1.0 - self.ref_len as f64 / self.hyp_len as f64).exp()
        };
        brevity * log_precision.exp()
    }
}

/// Corpus BLEU of `hyps` with the whole of `refs` as every hypothesis' reference set.
pub fn corpus_bleu<T: AsRef<str>>(hyps: &[Vec<T>], refs: &[Vec<T>], n: usize) -> Result<f64, MetricsError> {
    check_order(n)?;
    if hyps.is_empty() || refs.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    let stats = ReferenceStats::new(refs, n);
    let mut acc = BleuAccumulator::new(n);
    for h in hyps {
        acc.add(h, &stats, None);
    }
    Ok(acc.score())
}

/// BLEU of one sentence against a set of references.
pub fn sentence_bleu<T: AsRef<str>>(hyp: &[T], refs: &[Vec<T>], n: usize) -> Result<f64, MetricsError> {
    check_order(n)?;
    if hyp.is_empty() || refs.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    let stats = ReferenceStats::new(refs, n);
    let mut acc = BleuAccumulator::new(n);
    acc.add(hyp, &stats, None);
    Ok(acc.score())
}

/// Mean leave-one-out BLEU, on a seeded subsample above [`SELF_BLEU_CAP`].
pub fn self_bleu<T: AsRef<str>>(hyps: &[Vec<T>], n: usize) -> Result<f64, MetricsError> {
    self_bleu_with(hyps, n, SELF_BLEU_CAP, 0)
}

pub fn self_bleu_with<T: AsRef<str>>(hyps: &[Vec<T>], n: usize, cap: usize, seed: u64) -> Result<f64, MetricsError> {
    check_order(n)?;
    if hyps.len() < 2 {
        return Err(MetricsError::TooFewSentences(hyps.len()));
    }
    let corpus: Vec<&Vec<T>> = if hyps.len() > cap.max(2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked = sample(&mut rng, hyps.len(), cap.max(2)).into_vec();
        picked.sort_unstable();
        picked.into_iter().map(|i| &hyps[i]).collect()
    } else {
        hyps.iter().collect()
    };
    let owned: Vec<Vec<&str>> = corpus.iter().map(|s| s.iter().map(AsRef::as_ref).collect()).collect();
    let stats = ReferenceStats::new(&owned, n);
    let total: f64 = owned
        .iter()
        .enumerate()
        .map(|(i, h)| {
            let mut acc = BleuAccumulator::new(n);
            acc.add(h, &stats, Some(i));
            acc.score()
        })
        .sum();
    Ok(total / owned.len() as f64)
}

/// Harmonic combination of quality (`test_bleu`) and diversity (`1 - self_bleu`).
pub fn f1_bleu(test_bleu: f64, self_bleu: f64) -> f64 {
    let diversity = 1.0 - self_bleu;
    let denom = test_bleu + diversity;
    if denom > 0.0 {
        2.0 * test_bleu * diversity / denom
    } else {
        0.0
    }
}

pub fn bleu_report<T: AsRef<str>>(hyps: &[Vec<T>], refs: &[Vec<T>], n: usize) -> Result<BleuReport, MetricsError> {
    let test_bleu = corpus_bleu(hyps, refs, n)?;
    let self_bleu = self_bleu(hyps, n)?;
    Ok(BleuReport { order: n, test_bleu, self_bleu, f1_bleu: f1_bleu(test_bleu, self_bleu) })
}

/// Cosine similarity of the mean embeddings of two sentences.
pub fn naive_semantic_score<S: Scalar, T: AsRef<str>>(
    table: &EmbeddingTable<S>,
    hyp: &[T],
    reference: &[T],
) -> Result<S, MetricsError> {
    let mean = |tokens: &[T]| -> Result<Vec<S>, MetricsError> {
        let m = table.resolve(tokens)?;
        Ok(m.mean_axis(ndarray::Axis(0)).expect("nonempty").to_vec())
    };
    let a = mean(hyp)?;
    let b = mean(reference)?;
    Ok(S::one() - cosine_cost(&a, &b)?)
}
