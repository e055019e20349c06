//! Sequence-level Wasserstein distance and reward.
//!
//! A sequence is a uniform distribution over its (padded) token embeddings;
//! repeated tokens contribute separate atoms. Distance and reward come from
//! the same transport plan: `W = <T, C>` and `r = <T, 1 - C>`.

use ndarray::Array2;

use crate::embeddings::{build_cost_matrix, CostMatrix, EmbeddingError, EmbeddingTable, PAD};
use crate::ot::{ipot_solve, IpotConfig, OtError, TransportPlan};
use crate::scalar::Scalar;

#[derive(Debug, thiserror::Error)]
pub enum MatchError {
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Transport(#[from] OtError),
}

/// A sequence viewed as `L` equally weighted atoms in embedding space.
#[derive(Debug, Clone)]
pub struct SeqDistribution<S> {
    pub tokens: Vec<String>,
    pub weights: Vec<S>,
    /// `L x d`; pad rows are zero since pads have no embedding.
    pub embed: Array2<S>,
}

impl<S: Scalar> SeqDistribution<S> {
    /// Builds the distribution of `tokens` right-padded to `len`.
    pub fn padded<T: AsRef<str>>(table: &EmbeddingTable<S>, tokens: &[T], len: usize) -> Result<Self, EmbeddingError> {
        if tokens.is_empty() {
            return Err(EmbeddingError::EmptySequence);
        }
        let len = len.max(tokens.len());
        let mut padded: Vec<String> = tokens.iter().map(|t| t.as_ref().to_string()).collect();
        padded.resize(len, PAD.to_string());
        let mut embed = Array2::zeros((len, table.dim()));
        for (mut row, token) in embed.rows_mut().into_iter().zip(&padded) {
            if token != PAD {
                let v = table.vector(token)?;
                row.iter_mut().zip(v.iter()).for_each(|(d, s)| *d = *s);
            }
        }
        let w = S::one() / S::of(len as f64);
        Ok(Self { tokens: padded, weights: vec![w; len], embed })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Distance, reward and the plan they share.
#[derive(Debug, Clone)]
pub struct SeqMatch<S> {
    pub distance: S,
    pub reward: S,
    pub plan: TransportPlan<S>,
    pub cost: CostMatrix<S>,
}

/// `<T, 1 - C>` for an already solved plan.
pub fn reward_from_plan<S: Scalar>(plan: &TransportPlan<S>, cost: &Array2<S>) -> S {
    plan.values.iter().zip(cost.iter()).fold(S::zero(), |acc, (t, c)| acc + *t * (S::one() - *c))
}

/// Solves the padded transport problem between two token sequences.
pub fn seq_match<S: Scalar, T: AsRef<str>>(
    table: &EmbeddingTable<S>,
    hyp: &[T],
    reference: &[T],
    config: &IpotConfig<S>,
) -> Result<SeqMatch<S>, MatchError> {
    let cost = build_cost_matrix(table, hyp, reference)?;
    let plan = ipot_solve(cost.values.view(), config)?;
    // Plan mass is 1 up to rounding; keep both values inside their ranges.
    let reward = reward_from_plan(&plan, &cost.values).max(-S::one()).min(S::one());
    let distance = plan.cost.max(S::zero()).min(S::of(2.0));
    Ok(SeqMatch { distance, reward, plan, cost })
}

pub fn seq_wasserstein<S: Scalar, T: AsRef<str>>(
    table: &EmbeddingTable<S>,
    hyp: &[T],
    reference: &[T],
    config: &IpotConfig<S>,
) -> Result<(S, TransportPlan<S>), MatchError> {
    let m = seq_match(table, hyp, reference, config)?;
    Ok((m.distance, m.plan))
}

pub fn wasserstein_reward<S: Scalar, T: AsRef<str>>(
    table: &EmbeddingTable<S>,
    hyp: &[T],
    reference: &[T],
    config: &IpotConfig<S>,
) -> Result<S, MatchError> {
    Ok(seq_match(table, hyp, reference, config)?.reward)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embeddings::OovPolicy;
    use proptest::prelude::*;

    fn table() -> EmbeddingTable<f64> {
        EmbeddingTable::parse(
            "5 4\na 1 0 0 0\nb 0 1 0 0\nc 0.6 0.8 0 0\nd 0.2 -0.3 0.9 0.1\ne -0.5 0.1 0.2 1\n",
            OovPolicy::Strict,
        )
        .unwrap()
    }

    fn cfg() -> IpotConfig<f64> {
        IpotConfig::default()
    }

    #[test]
    fn identical_and_permuted() {
        let t = table();
        let (d, _) = seq_wasserstein(&t, &["a", "b"], &["a", "b"], &cfg()).unwrap();
        assert!(d.abs() <= 1e-3);
        let (d, _) = seq_wasserstein(&t, &["a", "b"], &["b", "a"], &cfg()).unwrap();
        assert!(d.abs() <= 1e-3);
        let (d, _) = seq_wasserstein(&t, &["a"], &["b"], &cfg()).unwrap();
        assert!((d - 1.0).abs() <= 1e-3);
    }

    #[test]
    fn reward_examples() {
        let t = table();
        assert!((wasserstein_reward(&t, &["a", "c", "d"], &["a", "c", "d"], &cfg()).unwrap() - 1.0).abs() <= 1e-3);
        assert!(wasserstein_reward(&t, &["a"], &["b"], &cfg()).unwrap().abs() <= 1e-3);
    }

    #[test]
    fn distribution_is_uniform_and_padded() {
        let d = SeqDistribution::padded(&table(), &["a", "a"], 3).unwrap();
        assert_eq!(d.tokens, vec!["a", "a", PAD]);
        assert!(d.weights.iter().all(|w| *w == 1.0 / 3.0));
        assert_eq!(d.embed.nrows(), 3);
        assert!(d.embed.row(2).iter().all(|x| *x == 0.0));
    }

    #[test]
    fn errors_propagate() {
        let err = seq_wasserstein(&table(), &["zz"], &["a"], &cfg()).unwrap_err();
        assert!(matches!(err, MatchError::Embedding(EmbeddingError::UnknownToken(_))));
        let err = seq_wasserstein::<f64, &str>(&table(), &[], &["a"], &cfg()).unwrap_err();
        assert!(matches!(err, MatchError::Embedding(EmbeddingError::EmptySequence)));
    }

    fn seq() -> impl Strategy<Value = Vec<String>> {
        prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d", "e"]), 1..9)
            .prop_map(|v| v.into_iter().map(String::from).collect())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn identity_reward(y in seq()) {
            let r = wasserstein_reward(&table(), &y, &y, &cfg()).unwrap();
            prop_assert!((r - 1.0).abs() <= 1e-3);
        }

        #[test]
        fn symmetric_and_bounded(y in seq(), z in seq()) {
            let t = table();
            let ab = seq_match(&t, &y, &z, &cfg()).unwrap();
            let ba = seq_match(&t, &z, &y, &cfg()).unwrap();
            prop_assert!((ab.distance - ba.distance).abs() <= 2e-3);
            prop_assert!((ab.reward + ab.distance - 1.0).abs() <= 1e-9);
            prop_assert!((0.0..=2.0).contains(&ab.distance));
            prop_assert!((-1.0..=1.0).contains(&ab.reward));
        }

        #[test]
        fn order_invariant(y in seq(), z in seq(), shift in 0usize..8) {
            let t = table();
            let mut rotated = y.clone();
            let k = shift % rotated.len();
            rotated.rotate_left(k);
            let mut reversed = z.clone();
            reversed.reverse();
            let base = seq_match(&t, &y, &z, &cfg()).unwrap().distance;
            let moved = seq_match(&t, &rotated, &reversed, &cfg()).unwrap().distance;
            prop_assert!((base - moved).abs() <= 1e-3);
        }
    }
}
