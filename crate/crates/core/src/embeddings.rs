//! Token embedding tables, sequence resolution and cosine cost matrices.
//!
//! Tables are read from the usual pretrained-vector text layout: a header
//! line `V d` followed by one `token x_1 .. x_d` row per entry. Parsing is
//! locale independent (ASCII whitespace, `.` decimal point).

use std::borrow::Cow;
use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::scalar::Scalar;

/// Synthetic padding token used to balance sequence lengths.
pub const PAD: &str = "<PAD>";

/// Default seed mixed into the out-of-vocabulary hash.
pub const DEFAULT_HASH_SEED: u64 = 0x5eed_0f_7a61e;

#[derive(Debug, thiserror::Error)]
pub enum EmbeddingError {
    #[error("cannot read embeddings from {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed header ({reason}); expected `V d`")]
    MalformedHeader { line: usize, reason: String },
    #[error("line {line}: expected {expected} components, got {got}")]
    ArityMismatch { line: usize, expected: usize, got: usize },
    #[error("line {line}: `{value}` is not a finite decimal number")]
    InvalidNumber { line: usize, value: String },
    #[error("line {line}: zero vector (cosine cost undefined)")]
    ZeroVector { line: usize },
    #[error("line {line}: the token `{PAD}` is reserved")]
    ReservedToken { line: usize },
    #[error("unknown token `{0}`")]
    UnknownToken(String),
    #[error("zero-norm vector has no direction")]
    DegenerateVector,
    #[error("vector has dimension {got}, table dimension is {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("empty token sequence")]
    EmptySequence,
}

/// What to do with tokens missing from the table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OovPolicy {
    /// Fail with [`EmbeddingError::UnknownToken`].
    #[default]
    Strict,
    /// Map the token to a deterministic unit vector derived from a seeded hash.
    HashFallback,
}

/// Immutable token to vector map.
#[derive(Debug, Clone)]
pub struct EmbeddingTable<S> {
    dim: usize,
    entries: HashMap<String, Vec<S>>,
    oov_policy: OovPolicy,
    hash_seed: u64,
}

impl<S: Scalar> EmbeddingTable<S> {
    /// Builds a table from in-memory entries, enforcing the load-time invariants.
    pub fn from_entries<I, T>(dim: usize, entries: I, oov_policy: OovPolicy) -> Result<Self, EmbeddingError>
    where
        I: IntoIterator<Item = (T, Vec<S>)>,
        T: Into<String>,
    {
        if dim == 0 {
            return Err(EmbeddingError::MalformedHeader { line: 1, reason: "dimension must be positive".into() });
        }
        let mut map = HashMap::new();
        for (idx, (token, vector)) in entries.into_iter().enumerate() {
            let token = token.into();
            let line = idx + 2;
            if token == PAD {
                return Err(EmbeddingError::ReservedToken { line });
            }
            if vector.len() != dim {
                return Err(EmbeddingError::ArityMismatch { line, expected: dim, got: vector.len() });
            }
            if vector.iter().all(|v| v.is_zero()) {
                return Err(EmbeddingError::ZeroVector { line });
            }
            map.insert(token, vector);
        }
        Ok(Self { dim, entries: map, oov_policy, hash_seed: DEFAULT_HASH_SEED })
    }

    pub fn load(path: impl AsRef<Path>, oov_policy: OovPolicy) -> Result<Self, EmbeddingError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| EmbeddingError::Io { path: path.to_path_buf(), source })?;
        Self::parse(&text, oov_policy)
    }

    /// Parses the text layout. Duplicate tokens keep the last row.
    pub fn parse(text: &str, oov_policy: OovPolicy) -> Result<Self, EmbeddingError> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (header_line, header) = lines
            .find(|(_, l)| !l.trim().is_empty())
            .ok_or_else(|| EmbeddingError::MalformedHeader { line: 1, reason: "empty file".into() })?;
        let fields: Vec<&str> = header.split_ascii_whitespace().collect();
        let header_err = |reason: &str| EmbeddingError::MalformedHeader { line: header_line, reason: reason.into() };
        if fields.len() != 2 {
            return Err(header_err("needs exactly two integers"));
        }
        let declared: usize = fields[0].parse().map_err(|_| header_err("vocabulary size is not an integer"))?;
        let dim: usize = fields[1].parse().map_err(|_| header_err("dimension is not an integer"))?;
        if dim == 0 {
            return Err(header_err("dimension must be positive"));
        }

        let mut entries: HashMap<String, Vec<S>> = HashMap::with_capacity(declared);
        for (line, raw) in lines {
            let mut parts = raw.split_ascii_whitespace();
            let Some(token) = parts.next() else { continue };
            if token == PAD {
                return Err(EmbeddingError::ReservedToken { line });
            }
            let values: Vec<&str> = parts.collect();
            if values.len() != dim {
                return Err(EmbeddingError::ArityMismatch { line, expected: dim, got: values.len() });
            }
            let mut vector = Vec::with_capacity(dim);
            for v in values {
                let x: f64 = v
                    .parse()
                    .ok()
                    .filter(|x: &f64| x.is_finite())
                    .ok_or_else(|| EmbeddingError::InvalidNumber { line, value: v.to_string() })?;
                vector.push(S::of(x));
            }
            if vector.iter().all(|v| v.is_zero()) {
                return Err(EmbeddingError::ZeroVector { line });
            }
            if entries.insert(token.to_string(), vector).is_some() {
                log::warn!("line {line}: duplicate token `{token}`, keeping the later vector");
            }
        }
        if entries.len() != declared {
            log::warn!("header declares {declared} entries, parsed {}", entries.len());
        }
        Ok(Self { dim, entries, oov_policy, hash_seed: DEFAULT_HASH_SEED })
    }

    pub fn with_hash_seed(mut self, seed: u64) -> Self {
        self.hash_seed = seed;
        self
    }

    pub fn with_oov_policy(mut self, policy: OovPolicy) -> Self {
        self.oov_policy = policy;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn oov_policy(&self) -> OovPolicy {
        self.oov_policy
    }

    pub fn contains(&self, token: &str) -> bool {
        self.entries.contains_key(token)
    }

    /// Looks a token up, falling back to the hashed vector when allowed.
    pub fn vector(&self, token: &str) -> Result<Cow<'_, [S]>, EmbeddingError> {
        match self.entries.get(token) {
            Some(v) => Ok(Cow::Borrowed(v.as_slice())),
            None => match self.oov_policy {
                OovPolicy::Strict => Err(EmbeddingError::UnknownToken(token.to_string())),
                OovPolicy::HashFallback => Ok(Cow::Owned(self.hashed_vector(token))),
            },
        }
    }

    fn hashed_vector(&self, token: &str) -> Vec<S> {
        let mut hasher = Sha256::new();
        hasher.update(self.hash_seed.to_le_bytes());
        hasher.update(token.as_bytes());
        let digest = hasher.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest[..32]);
        let mut rng = ChaCha8Rng::from_seed(seed);
        loop {
            let raw: Vec<f64> = (0..self.dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                return raw.into_iter().map(|x| S::of(x / norm)).collect();
            }
        }
    }

    /// Stacks the embeddings of `tokens` into a `|tokens| x dim` matrix.
    pub fn resolve<T: AsRef<str>>(&self, tokens: &[T]) -> Result<Array2<S>, EmbeddingError> {
        if tokens.is_empty() {
            return Err(EmbeddingError::EmptySequence);
        }
        let mut out = Array2::zeros((tokens.len(), self.dim));
        for (mut row, token) in out.rows_mut().into_iter().zip(tokens) {
            let v = self.vector(token.as_ref())?;
            row.iter_mut().zip(v.iter()).for_each(|(dst, src)| *dst = *src);
        }
        Ok(out)
    }
}

/// Cosine distance `1 - <a,b> / (|a| |b|)`, clamped to `[0, 2]`.
pub fn cosine_cost<S: Scalar>(za: &[S], zb: &[S]) -> Result<S, EmbeddingError> {
    if za.len() != zb.len() {
        return Err(EmbeddingError::DimensionMismatch { expected: za.len(), got: zb.len() });
    }
    let dot: S = za.iter().zip(zb).map(|(a, b)| *a * *b).sum();
    let na2: S = za.iter().map(|a| *a * *a).sum();
    let nb2: S = zb.iter().map(|b| *b * *b).sum();
    if na2.is_zero() || nb2.is_zero() {
        return Err(EmbeddingError::DegenerateVector);
    }
    // sqrt(|a|^2 |b|^2) rounds back to |a|^2 when a == b, so parallel
    // copies cost exactly zero.
    let cost = S::one() - dot / (na2 * nb2).sqrt();
    Ok(cost.max(S::zero()).min(S::of(2.0)))
}

/// Square cost matrix between a hypothesis and a reference after padding.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix<S> {
    pub values: Array2<S>,
    /// `true` where at least one side of the cell is a pad token.
    pub pad_mask: Array2<bool>,
}

impl<S: Scalar> CostMatrix<S> {
    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn cols(&self) -> usize {
        self.values.ncols()
    }
}

/// Right-pads the shorter sequence with [`PAD`] and evaluates pairwise
/// cosine costs. A pad cell costs 1 against a real token and 0 against
/// another pad.
pub fn build_cost_matrix<S: Scalar, T: AsRef<str>>(
    table: &EmbeddingTable<S>,
    hyp: &[T],
    reference: &[T],
) -> Result<CostMatrix<S>, EmbeddingError> {
    if hyp.is_empty() || reference.is_empty() {
        return Err(EmbeddingError::EmptySequence);
    }
    let len = hyp.len().max(reference.len());
    let pad_to = |seq: &[T]| -> Vec<Option<String>> {
        let mut out: Vec<Option<String>> =
            seq.iter().map(|t| Some(t.as_ref().to_string()).filter(|t| t != PAD)).collect();
        out.resize(len, None);
        out
    };
    let h = pad_to(hyp);
    let r = pad_to(reference);

    let vectors = |seq: &[Option<String>]| -> Result<Vec<Option<Vec<S>>>, EmbeddingError> {
        seq.iter()
            .map(|t| t.as_deref().map(|t| table.vector(t).map(Cow::into_owned)).transpose())
            .collect()
    };
    let hv = vectors(&h)?;
    let rv = vectors(&r)?;

    let mut values = Array2::zeros((len, len));
    let mut pad_mask = Array2::from_elem((len, len), false);
    for i in 0..len {
        for j in 0..len {
            let cell = match (&h[i], &r[j]) {
                (None, None) => {
                    pad_mask[[i, j]] = true;
                    S::zero()
                }
                (None, Some(_)) | (Some(_), None) => {
                    pad_mask[[i, j]] = true;
                    S::one()
                }
                (Some(a), Some(b)) if a == b => S::zero(),
                (Some(_), Some(_)) => {
                    let (Some(za), Some(zb)) = (&hv[i], &rv[j]) else { unreachable!() };
                    cosine_cost(za, zb)?
                }
            };
            values[[i, j]] = cell;
        }
    }
    Ok(CostMatrix { values, pad_mask })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toy() -> EmbeddingTable<f64> {
        EmbeddingTable::parse("2 3\na 1 0 0\nb 0 1 0\n", OovPolicy::Strict).unwrap()
    }

    #[test]
    fn parses_text_layout() {
        let t = toy();
        assert_eq!(t.dim(), 3);
        assert_eq!(t.len(), 2);
        assert_eq!(t.vector("b").unwrap().as_ref(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn load_errors_name_the_line() {
        let zero = EmbeddingTable::<f64>::parse("1 2\na 0 0", OovPolicy::Strict).unwrap_err();
        assert!(matches!(zero, EmbeddingError::ZeroVector { line: 2 }), "{zero:?}");
        let arity = EmbeddingTable::<f64>::parse("1 3\na 1 0", OovPolicy::Strict).unwrap_err();
        assert!(matches!(arity, EmbeddingError::ArityMismatch { line: 2, expected: 3, got: 2 }), "{arity:?}");
        let header = EmbeddingTable::<f64>::parse("x 3\na 1 0 0", OovPolicy::Strict).unwrap_err();
        assert!(matches!(header, EmbeddingError::MalformedHeader { line: 1, .. }));
        let number = EmbeddingTable::<f64>::parse("1 2\na 1 nan", OovPolicy::Strict).unwrap_err();
        assert!(matches!(number, EmbeddingError::InvalidNumber { line: 2, .. }));
        let pad = EmbeddingTable::<f64>::parse("1 1\n<PAD> 1", OovPolicy::Strict).unwrap_err();
        assert!(matches!(pad, EmbeddingError::ReservedToken { line: 2 }));
        let io = EmbeddingTable::<f64>::load("/nonexistent/emb.txt", OovPolicy::Strict).unwrap_err();
        assert!(matches!(io, EmbeddingError::Io { .. }));
    }

    #[test]
    fn duplicate_token_last_wins() {
        let t = EmbeddingTable::<f64>::parse("2 2\na 1 0\na 0 1\n", OovPolicy::Strict).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.vector("a").unwrap().as_ref(), &[0.0, 1.0]);
    }

    #[test]
    fn resolve_rows_follow_tokens() {
        let m = toy().resolve(&["a", "b"]).unwrap();
        assert_eq!(m, ndarray::array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);
        let err = toy().resolve(&["z"]).unwrap_err();
        assert!(matches!(err, EmbeddingError::UnknownToken(t) if t == "z"));
        assert!(matches!(toy().resolve::<&str>(&[]), Err(EmbeddingError::EmptySequence)));
    }

    #[test]
    fn hash_fallback_is_deterministic_unit() {
        let t = toy().with_oov_policy(OovPolicy::HashFallback);
        let first = t.resolve(&["z", "z"]).unwrap();
        let again = toy().with_oov_policy(OovPolicy::HashFallback).resolve(&["z"]).unwrap();
        assert_eq!(first.row(0), first.row(1));
        assert_eq!(first.row(0), again.row(0));
        let norm: f64 = first.row(0).iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
        let other = t.resolve(&["y"]).unwrap();
        assert_ne!(first.row(0), other.row(0));
    }

    #[test]
    fn cosine_cost_reference_points() {
        assert_eq!(cosine_cost(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 0.0);
        assert_eq!(cosine_cost(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert_eq!(cosine_cost(&[1.0, 0.0], &[-1.0, 0.0]).unwrap(), 2.0);
        assert!(matches!(cosine_cost(&[0.0, 0.0], &[1.0, 0.0]), Err(EmbeddingError::DegenerateVector)));
        assert!(matches!(cosine_cost(&[1.0f32], &[1.0, 0.0]), Err(EmbeddingError::DimensionMismatch { .. })));
    }

    #[test]
    fn cost_matrix_pads_the_shorter_side() {
        let t = toy();
        let c = build_cost_matrix(&t, &["a"], &["a", "b"]).unwrap();
        let ab = cosine_cost(&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]).unwrap();
        assert_eq!(c.values, ndarray::array![[0.0, ab], [1.0, 1.0]]);
        assert_eq!(c.pad_mask, ndarray::array![[false, false], [true, true]]);

        let same = build_cost_matrix(&t, &["a", "b"], &["a", "b"]).unwrap();
        assert!(same.values.diag().iter().all(|v| *v == 0.0));
        assert_eq!(build_cost_matrix(&t, &["a"], &["a"]).unwrap().values, ndarray::array![[0.0]]);

        let both_pad = build_cost_matrix(&t, &["a", "<PAD>"], &["b"]).unwrap();
        assert_eq!(both_pad.values[[1, 1]], 0.0);
    }

    #[test]
    fn cost_matrix_works_in_single_precision() {
        let t = EmbeddingTable::<f32>::parse("2 2\na 1 0\nb 1 1\n", OovPolicy::Strict).unwrap();
        let c = build_cost_matrix(&t, &["a", "b"], &["b"]).unwrap();
        assert!((c.values[[0, 0]] - (1.0 - 1.0 / 2f32.sqrt())).abs() < 1e-6);
        assert_eq!(c.values[[1, 1]], 1.0);
    }

    fn nonzero_vec(dim: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-5.0..5.0f64, dim).prop_filter("nonzero", |v| v.iter().map(|x| x * x).sum::<f64>() > 1e-6)
    }

    proptest! {
        #[test]
        fn cosine_is_symmetric(a in nonzero_vec(4), b in nonzero_vec(4)) {
            let ab = cosine_cost(&a, &b).unwrap();
            let ba = cosine_cost(&b, &a).unwrap();
            prop_assert!((ab - ba).abs() <= 1e-12);
            prop_assert!((0.0..=2.0).contains(&ab));
        }

        #[test]
        fn cosine_is_scale_invariant(a in nonzero_vec(4), b in nonzero_vec(4), s in 0.01..100.0f64, t in 0.01..100.0f64) {
            let sa: Vec<f64> = a.iter().map(|x| x * s).collect();
            let tb: Vec<f64> = b.iter().map(|x| x * t).collect();
            prop_assert!((cosine_cost(&sa, &tb).unwrap() - cosine_cost(&a, &b).unwrap()).abs() <= 1e-9);
        }

        #[test]
        fn cost_matrix_transposes(hyp in prop::collection::vec(0usize..4, 1..7), reference in prop::collection::vec(0usize..4, 1..7)) {
            let t = EmbeddingTable::<f64>::parse("4 3\nw0 1 0 0\nw1 0.5 1 0\nw2 0 -1 2\nw3 1 1 1\n", OovPolicy::Strict).unwrap();
            let h: Vec<String> = hyp.iter().map(|i| format!("w{i}")).collect();
            let r: Vec<String> = reference.iter().map(|i| format!("w{i}")).collect();
            let ab = build_cost_matrix(&t, &h, &r).unwrap();
            let ba = build_cost_matrix(&t, &r, &h).unwrap();
            let len = h.len().max(r.len());
            prop_assert_eq!(ab.rows(), len);
            prop_assert_eq!(ab.cols(), len);
            for i in 0..len {
                for j in 0..len {
                    prop_assert_eq!(ab.pad_mask[[i, j]], ba.pad_mask[[j, i]]);
                    if !ab.pad_mask[[i, j]] {
                        prop_assert_eq!(ab.values[[i, j]], ba.values[[j, i]]);
                    }
                }
            }
        }
    }
}
