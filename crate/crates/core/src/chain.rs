//! Token transition rules, the averaged chain `Qbar = E[Q(A(t))]`,
//! irreducibility and hitting-time tails.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{is_strongly_connected, next_adjacency, Adjacency, GraphProcessSpec};

/// Maps an adjacency matrix to a row-stochastic token transition matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum TransitionRule {
    /// `1/outdeg(i)` on each out-neighbour; isolated holders keep the token.
    OutDegreeReciprocal,
    /// Keeps the token with probability `delta_self`, otherwise moves to a
    /// uniformly chosen out-neighbour.
    Lazy { delta_self: f64 },
    /// Uniform over all nodes, ignoring the graph. Breaks the support
    /// constraint; only useful to exercise the verification checks.
    Unconstrained,
}

impl TransitionRule {
    pub fn lazy(delta_self: f64) -> Result<Self> {
        if !(delta_self > 0.0 && delta_self < 1.0) {
            return Err(Error::Config(format!("delta_self must lie in (0, 1), got {delta_self}")));
        }
        Ok(Self::Lazy { delta_self })
    }

    /// `Lazy` with the default self-mass `1/n`.
    pub fn lazy_default(n: usize) -> Self {
        Self::Lazy { delta_self: 1.0 / n.max(2) as f64 }
    }

    /// Smallest positive entry the rule can produce on an `n`-node graph.
    pub fn floor(&self, n: usize) -> f64 {
        let max_deg = n.saturating_sub(1).max(1) as f64;
        match *self {
            Self::OutDegreeReciprocal => 1.0 / max_deg,
            Self::Lazy { delta_self } => delta_self.min((1.0 - delta_self) / max_deg),
            Self::Unconstrained => 1.0 / n.max(1) as f64,
        }
    }

    /// Whether every diagonal entry is bounded below by the floor.
    pub fn has_self_loops(&self) -> bool {
        matches!(self, Self::Lazy { .. })
    }

    /// Sparse row `i` of `Q(A)` written into `out` as `(column, probability)`.
    pub fn row(&self, a: &Adjacency, i: usize, out: &mut Vec<(usize, f64)>) {
        out.clear();
        let n = a.n();
        match *self {
            Self::Unconstrained => out.extend((0..n).map(|j| (j, 1.0 / n as f64))),
            Self::OutDegreeReciprocal | Self::Lazy { .. } => {
                let deg = a.out_degree(i);
                if deg == 0 {
                    out.push((i, 1.0));
                    return;
                }
                let stay = match *self {
                    Self::Lazy { delta_self } => delta_self,
                    _ => 0.0,
                };
                if stay > 0.0 {
                    out.push((i, stay));
                }
                let w = (1.0 - stay) / deg as f64;
                out.extend(a.out_neighbors(i).map(|j| (j, w)));
            }
        }
    }

    /// Draws the next holder from row `i` of `Q(A)`.
    pub fn sample_next<R: Rng + ?Sized>(&self, a: &Adjacency, i: usize, rng: &mut R) -> usize {
        match *self {
            Self::Unconstrained => rng.random_range(0..a.n()),
            Self::OutDegreeReciprocal | Self::Lazy { .. } => {
                let deg = a.out_degree(i);
                if deg == 0 {
                    return i;
                }
                if let Self::Lazy { delta_self } = *self {
                    if rng.random::<f64>() < delta_self {
                        return i;
                    }
                }
                let k = rng.random_range(0..deg);
                a.out_neighbors(i).nth(k).expect("k < out-degree")
            }
        }
    }

    /// Per-neighbour weight when `k >= 1` edges are present, and the
    /// diagonal mass for a row with `k` present edges.
    fn weights(&self, k: usize) -> (f64, f64) {
        if k == 0 {
            return (0.0, 1.0);
        }
        match *self {
            Self::OutDegreeReciprocal => (1.0 / k as f64, 0.0),
            Self::Lazy { delta_self } => ((1.0 - delta_self) / k as f64, delta_self),
            Self::Unconstrained => unreachable!("unconstrained rows do not depend on the graph"),
        }
    }
}

pub fn apply_rule(rule: &TransitionRule, a: &Adjacency) -> DMatrix<f64> {
    let n = a.n();
    let mut q = DMatrix::zeros(n, n);
    let mut row = Vec::new();
    for i in 0..n {
        rule.row(a, i, &mut row);
        for &(j, p) in &row {
            q[(i, j)] += p;
        }
    }
    q
}

/// Largest `|sum_j Q_ij - 1|` over rows.
pub fn row_sum_error(q: &DMatrix<f64>) -> f64 {
    q.row_iter().map(|r| (r.sum() - 1.0).abs()).fold(0.0, f64::max)
}

/// First off-diagonal `(i, j)` with `Q_ij > 0` but no edge in `a`.
pub fn support_violation(q: &DMatrix<f64>, a: &Adjacency) -> Option<(usize, usize)> {
    let n = a.n();
    (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .find(|&(i, j)| i != j && q[(i, j)] > 0.0 && !a.has_edge(i, j))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenPosition {
    pub node: usize,
    pub t: usize,
}

/// Moves the token one tick along `Q(A)`. Any move that is neither an edge of
/// `a` nor a self-hold is reported as [`Error::SupportViolation`].
pub fn step_token<R: Rng + ?Sized>(
    pos: TokenPosition,
    a: &Adjacency,
    rule: &TransitionRule,
    rng: &mut R,
) -> Result<TokenPosition> {
    let next = rule.sample_next(a, pos.node, rng);
    if next != pos.node && !a.has_edge(pos.node, next) {
        return Err(Error::SupportViolation { from: pos.node, to: next });
    }
    Ok(TokenPosition { node: next, t: pos.t + 1 })
}

/// `Qbar`: exact for static graphs, a Monte Carlo average over `samples`
/// draws for i.i.d. failures.
pub fn mean_transition_matrix<R: Rng + ?Sized>(
    spec: &GraphProcessSpec,
    rule: &TransitionRule,
    samples: usize,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    match spec {
        GraphProcessSpec::Static(a) => Ok(apply_rule(rule, a)),
        GraphProcessSpec::DeterministicSequence { .. } => Err(Error::UnsupportedProcess),
        GraphProcessSpec::IidFailure { .. } => {
            let samples = samples.max(1);
            let n = spec.n();
            let mut acc = DMatrix::zeros(n, n);
            for t in 0..samples {
                acc += apply_rule(rule, &next_adjacency(spec, t, rng)?);
            }
            Ok(acc / samples as f64)
        }
    }
}

/// Exact `Qbar` for i.i.d. failures. Rows are independent and each depends
/// only on how many backbone out-edges survive, so row `i` is a binomial
/// mixture over its `d_i` backbone edges.
pub fn mean_transition_matrix_exact(spec: &GraphProcessSpec, rule: &TransitionRule) -> Result<DMatrix<f64>> {
    let (backbone, p_fail) = match spec {
        GraphProcessSpec::Static(a) => return Ok(apply_rule(rule, a)),
        GraphProcessSpec::DeterministicSequence { .. } => return Err(Error::UnsupportedProcess),
        GraphProcessSpec::IidFailure { backbone, p_fail } => (backbone, *p_fail),
    };
    if matches!(rule, TransitionRule::Unconstrained) {
        return Ok(apply_rule(rule, backbone));
    }
    let n = backbone.n();
    let keep = 1.0 - p_fail;
    let mut q = DMatrix::zeros(n, n);
    for i in 0..n {
        let d = backbone.out_degree(i);
        let mut diag = 0.0;
        let mut per_neighbor = 0.0;
        for k in 0..=d {
            let (w, stay) = rule.weights(k);
            diag += binomial_pmf(d, k, keep) * stay;
            if k >= 1 {
                // P(edge j present and k - 1 of the other d - 1 present).
                per_neighbor += keep * binomial_pmf(d - 1, k - 1, keep) * w;
            }
        }
        q[(i, i)] = diag;
        for j in backbone.out_neighbors(i) {
            q[(i, j)] = per_neighbor;
        }
    }
    Ok(q)
}

fn binomial_pmf(n: usize, k: usize, p: f64) -> f64 {
    let mut coeff = 1.0;
    for r in 0..k {
        coeff = coeff * (n - r) as f64 / (r + 1) as f64;
    }
    coeff * p.powi(k as i32) * (1.0 - p).powi((n - k) as i32)
}

/// Largest backbone for which [`mean_transition_matrix_enumerated`] runs.
pub const MAX_ENUMERATED_EDGES: usize = 20;

/// `Qbar` by summing `P(A) Q(A)` over all `2^|E|` failure outcomes of the
/// backbone.
pub fn mean_transition_matrix_enumerated(spec: &GraphProcessSpec, rule: &TransitionRule) -> Result<DMatrix<f64>> {
    let (backbone, p_fail) = match spec {
        GraphProcessSpec::Static(a) => return Ok(apply_rule(rule, a)),
        GraphProcessSpec::DeterministicSequence { .. } => return Err(Error::UnsupportedProcess),
        GraphProcessSpec::IidFailure { backbone, p_fail } => (backbone, *p_fail),
    };
    let edges: Vec<_> = backbone.edges().collect();
    if edges.len() > MAX_ENUMERATED_EDGES {
        return Err(Error::InvalidGraph(format!(
            "{} backbone edges exceed the enumeration limit of {MAX_ENUMERATED_EDGES}",
            edges.len()
        )));
    }
    let n = backbone.n();
    let mut q = DMatrix::zeros(n, n);
    for mask in 0u64..(1u64 << edges.len()) {
        let mut a = Adjacency::empty(n);
        let mut prob = 1.0;
        for (k, &(i, j)) in edges.iter().enumerate() {
            if mask >> k & 1 == 1 {
                a.set_edge(i, j, true);
                prob *= 1.0 - p_fail;
            } else {
                prob *= p_fail;
            }
        }
        if prob > 0.0 {
            q += apply_rule(rule, &a) * prob;
        }
    }
    Ok(q)
}

/// Picks the full outcome enumeration when the backbone is small enough and
/// the row-factorized formula otherwise.
pub fn exact_mean_transition_matrix(spec: &GraphProcessSpec, rule: &TransitionRule) -> Result<DMatrix<f64>> {
    match spec {
        GraphProcessSpec::IidFailure { backbone, .. } if backbone.edge_count() <= MAX_ENUMERATED_EDGES => {
            mean_transition_matrix_enumerated(spec, rule)
        }
        _ => mean_transition_matrix_exact(spec, rule),
    }
}

/// Support digraph of `q` (off-diagonal positive entries).
pub fn support_graph(q: &DMatrix<f64>) -> Adjacency {
    let n = q.nrows();
    let mut a = Adjacency::empty(n);
    for i in 0..n {
        for j in 0..n {
            if i != j && q[(i, j)] > 0.0 {
                a.set_edge(i, j, true);
            }
        }
    }
    a
}

/// A stochastic matrix is irreducible iff its support digraph is strongly
/// connected.
pub fn is_irreducible(q: &DMatrix<f64>) -> bool {
    q.is_square() && is_strongly_connected(&support_graph(q))
}

/// Smallest positive off-diagonal entry: the per-step floor along any path
/// of the chain.
pub fn transition_floor(q: &DMatrix<f64>) -> f64 {
    let n = q.nrows();
    let mut floor = f64::INFINITY;
    for i in 0..n {
        for j in 0..n {
            if i != j && q[(i, j)] > 0.0 {
                floor = floor.min(q[(i, j)]);
            }
        }
    }
    if floor.is_finite() {
        floor
    } else {
        1.0
    }
}

/// Stationary distribution `pi Q = pi`, `sum pi = 1`, by a linear solve with
/// one balance equation replaced by normalization.
pub fn stationary_distribution(q: &DMatrix<f64>) -> Option<DVector<f64>> {
    let n = q.nrows();
    let mut m = (DMatrix::identity(n, n) - q).transpose();
    let mut rhs = DVector::zeros(n);
    for j in 0..n {
        m[(n - 1, j)] = 1.0;
    }
    rhs[n - 1] = 1.0;
    m.lu().solve(&rhs)
}

/// Empirical survival function of the first entry time into `target`.
///
/// The token sits at `start` at time `t0`; entry `s` of the result is the
/// fraction of `trials` trajectories with `T > t0 + s`, for
/// `s = 0..=horizon`.
#[allow(clippy::too_many_arguments)]
pub fn hitting_time_samples<R: Rng + ?Sized>(
    spec: &GraphProcessSpec,
    rule: &TransitionRule,
    target: &[usize],
    t0: usize,
    start: usize,
    trials: usize,
    horizon: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let n = spec.n();
    if target.is_empty() || target.iter().any(|&v| v >= n) || start >= n {
        return Err(Error::Config("hitting target must be a nonempty set of valid nodes".into()));
    }
    let mut in_target = vec![false; n];
    for &v in target {
        in_target[v] = true;
    }
    // survivors[s] counts trajectories with T > t0 + s.
    let mut survivors = vec![0usize; horizon + 1];
    let mut a = Adjacency::empty(n);
    for _ in 0..trials {
        let mut pos = TokenPosition { node: start, t: t0 };
        for s in 0..=horizon {
            if s > 0 {
                crate::graph::next_adjacency_into(spec, pos.t, rng, &mut a)?;
                pos = step_token(pos, &a, rule, rng)?;
            }
            if in_target[pos.node] {
                break;
            }
            survivors[s] += 1;
        }
    }
    Ok(survivors.into_iter().map(|c| c as f64 / trials.max(1) as f64).collect())
}

/// Geometric tail constants from a one-window hitting floor: if the target is
/// entered within `m` steps with probability at least `epsilon` from any
/// state, then `P(T > t) <= (1 - epsilon)^(t/m - 1) = c1 exp(-c2 t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailConstants {
    pub epsilon: f64,
    pub m: usize,
}

impl TailConstants {
    /// i.i.d. graphs: `m = n`, `epsilon = delta^n`.
    pub fn iid(n: usize, delta: f64) -> Self {
        Self { epsilon: delta.powi(n as i32), m: n.max(1) }
    }

    /// Window-connected deterministic graphs with self-loops:
    /// `m = (n-1)b`, `epsilon = delta^m`.
    pub fn windowed(n: usize, b: usize, delta: f64) -> Self {
        let m = (n.saturating_sub(1) * b).max(1);
        Self { epsilon: delta.powi(m as i32), m }
    }

    /// `c1 = (1 - epsilon)^-1`.
    pub fn c1(&self) -> f64 {
        1.0 / (1.0 - self.epsilon)
    }

    /// `c2 = -ln(1 - epsilon) / m`, positive so the bound decays.
    pub fn c2(&self) -> f64 {
        -(1.0 - self.epsilon).ln() / self.m as f64
    }

    /// `min(1, (1 - epsilon)^((t - t0)/m - 1))`.
    pub fn tail_bound(&self, elapsed: f64) -> f64 {
        let base = 1.0 - self.epsilon;
        if base <= 0.0 {
            return if elapsed > 0.0 { 0.0 } else { 1.0 };
        }
        base.powf(elapsed / self.m as f64 - 1.0).min(1.0)
    }

    /// The alternative constant `1 - delta^((n-1)b)` that appears alongside
    /// the windowed rate; exposed for comparison only, it is not a valid
    /// prefactor for the bound above.
    pub fn windowed_alternative_c1(n: usize, b: usize, delta: f64) -> f64 {
        1.0 - delta.powi((n.saturating_sub(1) * b) as i32)
    }
}

/// `(1 - delta^n)^((t - t0)/n - 1)`, clipped to at most 1.
pub fn hitting_tail_bound(n: usize, delta: f64, t: usize, t0: usize) -> f64 {
    TailConstants::iid(n, delta).tail_bound(t.saturating_sub(t0) as f64)
}
