//! Discrete optimal transport with uniform marginals.
//!
//! [`ipot_solve`] runs the inexact proximal point method: every outer step
//! solves `min <T, C> + gamma * KL(T, T_prev)` approximately with a few
//! Sinkhorn sweeps on the kernel `exp(-C / gamma) ⊙ T_prev`. Rows carry mass
//! `1/n`, columns `1/m`.
//!
//! [`exact_ot_oracle`] enumerates permutation matrices and is only meant for
//! checking the solver on small square problems.

use std::fmt;

use ndarray::{Array1, Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OtError {
    #[error("cost matrix is empty")]
    EmptyCost,
    #[error("cost entry ({row}, {col}) is not finite")]
    NonFiniteCost { row: usize, col: usize },
    #[error("cost entry ({row}, {col}) is negative")]
    NegativeCost { row: usize, col: usize },
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error("exact oracle needs a square matrix, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("exact oracle supports n <= {max}, got {n}")]
    OracleTooLarge { n: usize, max: usize },
}

/// Largest size the permutation oracle accepts (8! = 40320 candidates).
pub const ORACLE_MAX_N: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IpotConfig<S> {
    /// Proximal weight; the step size is `1 / gamma`.
    pub gamma: S,
    pub outer_iters: usize,
    pub inner_sinkhorn_iters: usize,
    /// Early exit once both the marginal violation and the L1 change of the
    /// plan between outer steps fall below this value.
    pub feasibility_tol: S,
    /// Denominator clamp, raised to the type's smallest normal if needed.
    pub epsilon_floor: f64,
}

impl<S: Scalar> Default for IpotConfig<S> {
    fn default() -> Self {
        Self {
            gamma: S::of(0.1),
            outer_iters: 200,
            inner_sinkhorn_iters: 3,
            feasibility_tol: S::of(1e-6),
            epsilon_floor: 1e-300,
        }
    }
}

impl<S: Scalar> IpotConfig<S> {
    pub fn validate(&self) -> Result<(), OtError> {
        if !(self.gamma > S::zero() && self.gamma.is_finite()) {
            return Err(OtError::InvalidConfig(format!("gamma must be positive, got {}", self.gamma)));
        }
        if self.outer_iters == 0 {
            return Err(OtError::InvalidConfig("outer_iters must be >= 1".into()));
        }
        if self.inner_sinkhorn_iters == 0 {
            return Err(OtError::InvalidConfig("inner_sinkhorn_iters must be >= 1".into()));
        }
        if !(self.feasibility_tol > S::zero()) {
            return Err(OtError::InvalidConfig("feasibility_tol must be positive".into()));
        }
        if !(self.epsilon_floor > 0.0) {
            return Err(OtError::InvalidConfig("epsilon_floor must be positive".into()));
        }
        Ok(())
    }
}

/// Coupling matrix together with its transport cost.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransportPlan<S> {
    pub values: Array2<S>,
    /// `<values, C>` for the cost matrix the plan was solved against.
    pub cost: S,
    pub converged: bool,
    pub iterations_used: usize,
}

impl<S: Scalar> TransportPlan<S> {
    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn cols(&self) -> usize {
        self.values.ncols()
    }

    pub fn row_marginal(&self) -> S {
        S::one() / S::of(self.rows() as f64)
    }

    pub fn col_marginal(&self) -> S {
        S::one() / S::of(self.cols() as f64)
    }

    /// Total mass of the plan.
    pub fn mass(&self) -> S {
        self.values.iter().copied().sum()
    }

    pub fn marginal_violation(&self) -> S {
        marginal_violation(self)
    }
}

/// One line of the optional solver trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord<S> {
    pub iter: usize,
    pub violation: S,
    pub cost: S,
}

impl<S: Scalar> fmt::Display for IterationRecord<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{:e},{}", self.iter, self.violation, self.cost)
    }
}

fn check_cost<S: Scalar>(cost: &ArrayView2<S>) -> Result<(), OtError> {
    if cost.is_empty() {
        return Err(OtError::EmptyCost);
    }
    for ((row, col), c) in cost.indexed_iter() {
        if !c.is_finite() {
            return Err(OtError::NonFiniteCost { row, col });
        }
        if *c < S::zero() {
            return Err(OtError::NegativeCost { row, col });
        }
    }
    Ok(())
}

/// `<plan, cost>` by direct summation.
pub fn transport_cost<S: Scalar>(plan: &ArrayView2<S>, cost: &ArrayView2<S>) -> S {
    Zip::from(plan).and(cost).fold(S::zero(), |acc, t, c| acc + *t * *c)
}

fn violation_of<S: Scalar>(values: &ArrayView2<S>) -> S {
    let (n, m) = values.dim();
    let row_target = S::one() / S::of(n as f64);
    let col_target = S::one() / S::of(m as f64);
    let rows: S = values.rows().into_iter().map(|r| (r.sum() - row_target).abs()).sum();
    let cols: S = values.columns().into_iter().map(|c| (c.sum() - col_target).abs()).sum();
    rows + cols
}

/// L1 norm of the row- and column-marginal deviations.
pub fn marginal_violation<S: Scalar>(plan: &TransportPlan<S>) -> S {
    violation_of(&plan.values.view())
}

pub fn ipot_solve<S: Scalar>(cost: ArrayView2<S>, config: &IpotConfig<S>) -> Result<TransportPlan<S>, OtError> {
    ipot_solve_traced(cost, config, |_| {})
}

/// [`ipot_solve`] reporting every outer iteration to `trace`.
pub fn ipot_solve_traced<S: Scalar>(
    cost: ArrayView2<S>,
    config: &IpotConfig<S>,
    mut trace: impl FnMut(IterationRecord<S>),
) -> Result<TransportPlan<S>, OtError> {
    config.validate()?;
    check_cost(&cost)?;
    let (n, m) = cost.dim();
    let floor = S::clamp_floor(config.epsilon_floor);
    let n_s = S::of(n as f64);
    let m_s = S::of(m as f64);

    let kernel = cost.mapv(|c| (-c / config.gamma).exp());
    let mut plan = Array2::<S>::from_elem((n, m), S::one());
    let mut sigma = Array1::<S>::from_elem(m, S::one() / m_s);
    let mut delta = Array1::<S>::zeros(n);
    let mut converged = false;
    let mut iterations_used = 0;

    for iter in 1..=config.outer_iters {
        let q = &kernel * &plan;
        for _ in 0..config.inner_sinkhorn_iters {
            let q_sigma = q.dot(&sigma);
            Zip::from(&mut delta).and(&q_sigma).for_each(|d, qs| *d = S::one() / (n_s * *qs).max(floor));
            let qt_delta = q.t().dot(&delta);
            Zip::from(&mut sigma).and(&qt_delta).for_each(|s, qd| *s = S::one() / (m_s * *qd).max(floor));
        }
        let mut next = q;
        Zip::indexed(&mut next).for_each(|(i, j), v| *v = delta[i] * *v * sigma[j]);

        let change = Zip::from(&next).and(&plan).fold(S::zero(), |acc, a, b| acc + (*a - *b).abs());
        plan = next;
        iterations_used = iter;
        let violation = violation_of(&plan.view());
        trace(IterationRecord { iter, violation, cost: transport_cost(&plan.view(), &cost) });
        if violation < config.feasibility_tol && change < config.feasibility_tol {
            converged = true;
            break;
        }
    }

    let total = transport_cost(&plan.view(), &cost);
    Ok(TransportPlan { values: plan, cost: total, converged, iterations_used })
}

/// Exact uniform-marginal OT on a square matrix by enumerating the `n!`
/// scaled permutation matrices (the vertices of the Birkhoff polytope).
/// Ties resolve to the lexicographically smallest permutation.
pub fn exact_ot_oracle<S: Scalar>(cost: ArrayView2<S>) -> Result<(S, TransportPlan<S>), OtError> {
    let (n, m) = cost.dim();
    if n != m {
        return Err(OtError::NotSquare { rows: n, cols: m });
    }
    if n > ORACLE_MAX_N {
        return Err(OtError::OracleTooLarge { n, max: ORACLE_MAX_N });
    }
    check_cost(&cost)?;

    let mut perm: Vec<usize> = (0..n).collect();
    let mut best_perm = perm.clone();
    let mut best = S::infinity();
    loop {
        let total: S = perm.iter().enumerate().map(|(i, &j)| cost[[i, j]]).sum();
        if total < best {
            best = total;
            best_perm.clone_from(&perm);
        }
        if !next_permutation(&mut perm) {
            break;
        }
    }

    let mass = S::one() / S::of(n as f64);
    let mut values = Array2::zeros((n, n));
    for (i, &j) in best_perm.iter().enumerate() {
        values[[i, j]] = mass;
    }
    let total = transport_cost(&values.view(), &cost);
    Ok((total, TransportPlan { values, cost: total, converged: true, iterations_used: 0 }))
}

fn next_permutation(p: &mut [usize]) -> bool {
    let Some(i) = p.windows(2).rposition(|w| w[0] < w[1]) else {
        return false;
    };
    let j = p.iter().rposition(|&x| x > p[i]).expect("pivot has a larger successor");
    p.swap(i, j);
    p[i + 1..].reverse();
    true
}
