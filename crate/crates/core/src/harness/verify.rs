//! Pass/fail checks of the structural and probabilistic guarantees:
//! hitting-time tail dominance, irreducibility of the averaged chain, the
//! window-connectivity property, the incremental token state, and the support
//! constraint of the transition rule.

use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::chain::{
    apply_rule, exact_mean_transition_matrix, is_irreducible, row_sum_error, step_token, support_violation,
    transition_floor, TailConstants, TokenPosition, TransitionRule,
};
use crate::error::{Error, Result};
use crate::graph::{
    window_connectivity_search, next_adjacency_into, window_union_connected, Adjacency, GraphProcessSpec, SearchMode,
};
use crate::observation::{sample_measurements_into, GlobalModel, MeasurementBatch};
use crate::rng::{derive_stream, Purpose, TrialStreams};
use crate::token::{AlphaSchedule, RoamingToken};

/// Row sums of `Q(A)` must equal one within this.
pub const ROW_SUM_TOLERANCE: f64 = 1e-12;
/// Incremental `(d, K)` must match the recomputation within this (scaled by
/// `max(1, |value|)`).
pub const STATE_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        Self { name: name.to_string(), passed, detail: detail.into() }
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

#[derive(Debug, Clone, Default)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
    pub tail: Option<TailReport>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

#[derive(Debug, Clone)]
pub struct TailCheckConfig<'a> {
    pub spec: &'a GraphProcessSpec,
    pub rule: TransitionRule,
    pub start: usize,
    pub trajectories: usize,
    pub horizon: usize,
    pub seed: u64,
    /// Window length `b` for deterministic sequences.
    pub window: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TailViolation {
    /// `node i` or `incomplete`.
    pub curve: String,
    pub t: usize,
    pub empirical: f64,
    pub bound: f64,
    pub allowance: f64,
}

#[derive(Debug, Clone)]
pub struct TailReport {
    pub delta: f64,
    pub constants: TailConstants,
    pub trajectories: usize,
    /// Ticks `0..=horizon`.
    pub times: Vec<usize>,
    /// `P(i not in S(t))` per node.
    pub node_tails: Vec<Vec<f64>>,
    /// `min(1, c1 exp(-c2 t))`.
    pub node_bound: Vec<f64>,
    /// `P(S(t) != V)`.
    pub incomplete_tail: Vec<f64>,
    /// `min(1, n c1 exp(-c2 t))`.
    pub incomplete_bound: Vec<f64>,
    pub violation: Option<TailViolation>,
}

impl TailReport {
    pub fn passed(&self) -> bool {
        self.violation.is_none()
    }

    /// `t,empirical_tail,analytic_bound` for `P(S(t) != V)`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
        w.write_record(["t", "empirical_tail", "analytic_bound"]).map_err(|e| Error::csv(path, e))?;
        for (k, t) in self.times.iter().enumerate() {
            w.write_record([t.to_string(), self.incomplete_tail[k].to_string(), self.incomplete_bound[k].to_string()])
                .map_err(|e| Error::csv(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// `3 sqrt(p(1-p)/N)`.
pub fn binomial_allowance(p: f64, trials: usize) -> f64 {
    3.0 * (p * (1.0 - p) / trials as f64).sqrt()
}

/// Floor `delta` and geometric constants for the process, or `None` when the
/// hitting-time argument does not apply (reducible averaged chain, missing
/// window, or no self-loops on a deterministic sequence).
pub fn tail_constants(
    spec: &GraphProcessSpec,
    rule: &TransitionRule,
    window: Option<usize>,
) -> Result<Option<(f64, TailConstants)>> {
    let n = spec.n();
    match spec {
        GraphProcessSpec::IidFailure { .. } | GraphProcessSpec::Static(_) => {
            let q = exact_mean_transition_matrix(spec, rule)?;
            if !is_irreducible(&q) {
                return Ok(None);
            }
            let delta = transition_floor(&q);
            Ok(Some((delta, TailConstants::iid(n, delta))))
        }
        GraphProcessSpec::DeterministicSequence { frames, .. } => {
            let Some(b) = window else { return Ok(None) };
            if !rule.has_self_loops() || !window_union_connected(frames, b) {
                return Ok(None);
            }
            let delta = rule.floor(n);
            Ok(Some((delta, TailConstants::windowed(n, b, delta))))
        }
    }
}

/// Simulates token trajectories from `start` and compares the empirical
/// `P(i not in S(t))` and `P(S(t) != V)` with the geometric bounds plus a
/// three-sigma binomial allowance.
pub fn verify_tail_bounds(cfg: &TailCheckConfig<'_>) -> Result<Option<TailReport>> {
    let n = cfg.spec.n();
    if cfg.start >= n || cfg.trajectories == 0 {
        return Err(Error::Config("tail check needs a valid start node and at least one trajectory".into()));
    }
    let Some((delta, constants)) = tail_constants(cfg.spec, &cfg.rule, cfg.window)? else {
        return Ok(None);
    };
    let horizon = cfg.horizon;
    let never = horizon + 1;
    let first_visits: Vec<Vec<usize>> = (0..cfg.trajectories as u64)
        .into_par_iter()
        .map(|k| {
            let mut streams = TrialStreams::new(cfg.seed, k);
            let mut first = vec![never; n];
            first[cfg.start] = 0;
            let mut remaining = n - 1;
            let mut pos = TokenPosition { node: cfg.start, t: 0 };
            let mut a = Adjacency::empty(n);
            while remaining > 0 && pos.t < horizon {
                next_adjacency_into(cfg.spec, pos.t, &mut streams.graph, &mut a)?;
                pos = step_token(pos, &a, &cfg.rule, &mut streams.walk)?;
                if first[pos.node] == never {
                    first[pos.node] = pos.t;
                    remaining -= 1;
                }
            }
            Ok(first)
        })
        .collect::<Result<_>>()?;

    // survive[i][t] counts trajectories with first visit of i after t.
    let mut survive = vec![vec![0i64; horizon + 2]; n + 1];
    for first in &first_visits {
        let all = *first.iter().max().expect("n >= 1");
        for (i, &f) in first.iter().chain(std::iter::once(&all)).enumerate() {
            survive[i][0] += 1;
            survive[i][f.min(never)] -= 1;
        }
    }
    let r = cfg.trajectories as f64;
    let curves: Vec<Vec<f64>> = survive
        .iter()
        .map(|diff| {
            let mut acc = 0i64;
            diff[..=horizon]
                .iter()
                .map(|&d| {
                    acc += d;
                    acc as f64 / r
                })
                .collect()
        })
        .collect();
    let times: Vec<usize> = (0..=horizon).collect();
    let node_bound: Vec<f64> = times.iter().map(|&t| constants.tail_bound(t as f64)).collect();
    let incomplete_bound: Vec<f64> = node_bound.iter().map(|b| (n as f64 * b).min(1.0)).collect();
    let mut curves = curves;
    let incomplete_tail = curves.pop().expect("incomplete curve");
    let node_tails = curves;

    let mut violation = None;
    'outer: for &t in &times {
        let named = node_tails
            .iter()
            .enumerate()
            .map(|(i, c)| (format!("node {i}"), c[t], node_bound[t]))
            .chain(std::iter::once(("incomplete".to_string(), incomplete_tail[t], incomplete_bound[t])));
        for (curve, p, bound) in named {
            let allowance = binomial_allowance(p, cfg.trajectories);
            if p > bound + allowance {
                violation = Some(TailViolation { curve, t, empirical: p, bound, allowance });
                break 'outer;
            }
        }
    }
    Ok(Some(TailReport {
        delta,
        constants,
        trajectories: cfg.trajectories,
        times,
        node_tails,
        node_bound,
        incomplete_tail,
        incomplete_bound,
        violation,
    }))
}

pub fn tail_check_result(report: Option<&TailReport>) -> CheckResult {
    const NAME: &str = "tail bounds";
    match report {
        None => CheckResult::new(NAME, true, "not applicable: the hitting-time assumptions do not hold for this process"),
        Some(r) => match &r.violation {
            None => CheckResult::new(
                NAME,
                true,
                format!(
                    "{} trajectories, delta={:.4}, c1={:.4}, c2={:.4e}",
                    r.trajectories,
                    r.delta,
                    r.constants.c1(),
                    r.constants.c2()
                ),
            ),
            Some(v) => CheckResult::new(
                NAME,
                false,
                format!(
                    "{}: empirical {} > bound {} + allowance {} at t={}",
                    v.curve, v.empirical, v.bound, v.allowance, v.t
                ),
            ),
        },
    }
}

/// Irreducibility of the exact averaged chain, or the window condition for
/// deterministic sequences.
pub fn check_irreducibility(spec: &GraphProcessSpec, rule: &TransitionRule, window: Option<usize>) -> Result<CheckResult> {
    const NAME: &str = "irreducibility";
    Ok(match spec {
        GraphProcessSpec::DeterministicSequence { frames, .. } => match window {
            Some(b) => {
                let ok = window_union_connected(frames, b);
                CheckResult::new(NAME, ok, format!("every {b}-frame union strongly connected: {ok}"))
            }
            None => CheckResult::new(NAME, true, "not applicable: no averaged chain and no window given"),
        },
        _ => {
            let q = exact_mean_transition_matrix(spec, rule)?;
            let err = row_sum_error(&q);
            let irreducible = is_irreducible(&q);
            let ok = irreducible && err <= 1e-9;
            CheckResult::new(NAME, ok, format!("averaged chain irreducible: {irreducible}, row-sum error {err:.2e}"))
        }
    })
}

/// Window-connectivity brute force on `n <= 4`, `b <= 2`: exhaustive where
/// affordable, otherwise `samples` random sequences.
pub fn check_window_connectivity(seed: u64, samples: usize) -> CheckResult {
    const NAME: &str = "window connectivity";
    let mut rng = derive_stream(seed, 0, Purpose::Aux);
    let mut checked = 0u64;
    for n in 1..=4 {
        for b in 1..=2 {
            let mode = if n <= 3 { SearchMode::Exhaustive } else { SearchMode::Sampled { samples, rng: &mut rng } };
            let report = window_connectivity_search(n, b, mode);
            checked += report.sequences_checked;
            if let Some(cx) = report.counterexample {
                return CheckResult::new(
                    NAME,
                    false,
                    format!("n={n}, b={b}: no path {} -> {} in {:?}", cx.from, cx.to, cx.frames),
                );
            }
        }
    }
    CheckResult::new(NAME, true, format!("{checked} sequences, zero counterexamples"))
}

/// First mismatch between the incremental payload and its recomputation.
#[derive(Debug, Clone, PartialEq)]
pub struct StateMismatch {
    pub episode: usize,
    pub t: usize,
    pub error: f64,
}

/// Drives the token step by step and compares `(d, K)` after every visit
/// with sums rebuilt from raw measurement totals at each agent's last visit.
#[allow(clippy::too_many_arguments)]
pub fn state_identity_episode(
    model: &GlobalModel,
    spec: &GraphProcessSpec,
    rule: &TransitionRule,
    schedule: &AlphaSchedule,
    start: usize,
    horizon: usize,
    streams: &mut TrialStreams,
) -> Result<Option<(usize, f64)>> {
    let n = model.n();
    let dim = model.dim();
    let mut sim = RoamingToken::new(model, *rule, *schedule, start)?;
    let mut batch = MeasurementBatch::zeros(model);
    let mut a = Adjacency::empty(n);
    let mut totals: Vec<DVector<f64>> = model.agents().iter().map(|ag| DVector::zeros(ag.rows())).collect();
    let mut logged: Vec<Option<(usize, DVector<f64>)>> = vec![None; n];
    for t in 0..=horizon {
        sample_measurements_into(model, t, &mut streams.noise, &mut batch);
        for (tot, y) in totals.iter_mut().zip(&batch.y) {
            *tot += y;
        }
        sim.measure(&batch);
        sim.visit_and_estimate()?;
        let p = sim.holder();
        logged[p] = Some((t, totals[p].clone()));

        let mut d = DVector::zeros(dim);
        let mut k = DMatrix::zeros(dim, dim);
        for (agent, entry) in model.agents().iter().zip(&logged) {
            if let Some((tau, total)) = entry {
                d += agent.gain() * (total / (*tau + 1) as f64);
                k += agent.b();
            }
        }
        let payload = sim.payload();
        let err_d = (&payload.d - &d).amax() / d.amax().max(1.0);
        let err_k = (&payload.k - &k).amax() / k.amax().max(1.0);
        let err = err_d.max(err_k);
        let visited_ok = (0..n).all(|i| payload.is_visited(i) == logged[i].is_some());
        if err > STATE_TOLERANCE || !visited_ok || !err.is_finite() {
            return Ok(Some((t, if visited_ok { err } else { f64::INFINITY })));
        }
        if t < horizon {
            next_adjacency_into(spec, t, &mut streams.graph, &mut a)?;
            sim.move_token(&a, &mut streams.walk)?;
        }
    }
    Ok(None)
}

#[allow(clippy::too_many_arguments)]
pub fn check_state_identity(
    model: &GlobalModel,
    spec: &GraphProcessSpec,
    rule: &TransitionRule,
    schedule: &AlphaSchedule,
    start: usize,
    episodes: usize,
    horizon: usize,
    seed: u64,
) -> Result<CheckResult> {
    const NAME: &str = "token state identity";
    let results: Vec<Option<(usize, f64)>> = (0..episodes as u64)
        .into_par_iter()
        .map(|k| state_identity_episode(model, spec, rule, schedule, start, horizon, &mut TrialStreams::new(seed, k)))
        .collect::<Result<_>>()?;
    Ok(match results.iter().enumerate().find_map(|(e, r)| r.map(|(t, err)| StateMismatch { episode: e, t, error: err })) {
        None => CheckResult::new(NAME, true, format!("{episodes} episodes x {} ticks, zero mismatches", horizon + 1)),
        Some(m) => CheckResult::new(
            NAME,
            false,
            format!("episode {} at t={}: |incremental - recomputed| = {:.3e} > {STATE_TOLERANCE:e}", m.episode, m.t, m.error),
        ),
    })
}

/// Every `Q(A)` on `draws` sampled graphs is row-stochastic and supported on
/// `A` plus the diagonal, and every sampled token move follows an edge or
/// holds.
pub fn check_support(spec: &GraphProcessSpec, rule: &TransitionRule, draws: usize, seed: u64) -> Result<CheckResult> {
    const NAME: &str = "support constraint";
    let n = spec.n();
    let mut graph_rng = derive_stream(seed, 1, Purpose::Aux);
    let mut walk_rng = derive_stream(seed, 2, Purpose::Aux);
    let mut a = Adjacency::empty(n);
    let mut pos = TokenPosition { node: 0, t: 0 };
    for t in 0..draws {
        next_adjacency_into(spec, t, &mut graph_rng, &mut a)?;
        let q = apply_rule(rule, &a);
        let err = row_sum_error(&q);
        if err > ROW_SUM_TOLERANCE {
            return Ok(CheckResult::new(NAME, false, format!("t={t}: row-sum error {err:.3e} > {ROW_SUM_TOLERANCE:e}")));
        }
        if let Some((i, j)) = support_violation(&q, &a) {
            return Ok(CheckResult::new(NAME, false, format!("t={t}: Q[{i}][{j}] > 0 but edge {i} -> {j} is absent")));
        }
        match step_token(pos, &a, rule, &mut walk_rng) {
            Ok(next) => pos = next,
            Err(Error::SupportViolation { from, to }) => {
                return Ok(CheckResult::new(NAME, false, format!("t={t}: token moved {from} -> {to} without an edge")))
            }
            Err(e) => return Err(e),
        }
    }
    Ok(CheckResult::new(NAME, true, format!("{draws} graphs, rows sum to 1 within {ROW_SUM_TOLERANCE:e}, no off-edge moves")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::observation::AgentModel;

    fn cfg(spec: &GraphProcessSpec, rule: TransitionRule, trajectories: usize, horizon: usize) -> TailCheckConfig<'_> {
        TailCheckConfig { spec, rule, start: 0, trajectories, horizon, seed: 5, window: None }
    }

    #[test]
    fn lazy_two_node_tail_is_geometric() {
        let spec = GraphProcessSpec::Static(Adjacency::complete(2));
        let r = verify_tail_bounds(&cfg(&spec, TransitionRule::lazy(0.5).unwrap(), 20_000, 10)).unwrap().unwrap();
        assert!(r.passed());
        assert_eq!(r.delta, 0.5);
        for t in 0..=10 {
            let exact = 0.5f64.powi(t as i32);
            let p = r.node_tails[1][t];
            assert!((p - exact).abs() <= 4.0 * (exact * (1.0 - exact) / 20_000.0).sqrt() + 1e-12, "t={t}");
            assert_eq!(r.node_tails[0][t], 0.0);
            assert_eq!(r.incomplete_tail[t], p);
        }
    }

    #[test]
    fn reciprocal_two_node_tail_vanishes_after_one_step() {
        let spec = GraphProcessSpec::Static(Adjacency::complete(2));
        let r = verify_tail_bounds(&cfg(&spec, TransitionRule::OutDegreeReciprocal, 100, 5)).unwrap().unwrap();
        assert_eq!(r.node_tails[1], vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(r.passed());
    }

    #[test]
    fn single_node_is_trivially_complete() {
        let spec = GraphProcessSpec::Static(Adjacency::empty(1));
        let r = verify_tail_bounds(&cfg(&spec, TransitionRule::OutDegreeReciprocal, 10, 5)).unwrap().unwrap();
        assert!(r.incomplete_tail.iter().all(|p| *p == 0.0));
        assert!(r.passed());
    }

    #[test]
    fn reducible_chain_is_not_applicable() {
        let spec = GraphProcessSpec::Static(Adjacency::from_edges(3, &[(0, 1), (1, 2)]).unwrap());
        assert!(verify_tail_bounds(&cfg(&spec, TransitionRule::OutDegreeReciprocal, 10, 5)).unwrap().is_none());
        assert!(!check_irreducibility(&spec, &TransitionRule::OutDegreeReciprocal, None).unwrap().passed);
    }

    #[test]
    fn support_check_catches_unconstrained_rule() {
        let spec = GraphProcessSpec::iid_failure(Adjacency::from_edges(3, &[(0, 1), (1, 2), (2, 0)]).unwrap(), 0.3).unwrap();
        assert!(check_support(&spec, &TransitionRule::OutDegreeReciprocal, 200, 1).unwrap().passed);
        let bad = check_support(&spec, &TransitionRule::Unconstrained, 200, 1).unwrap();
        assert!(!bad.passed);
        assert!(bad.detail.contains("absent"));
    }

    #[test]
    fn state_identity_holds_on_small_episode() {
        let agents = (0..4)
            .map(|i| {
                let h = DMatrix::from_row_slice(2, 2, &[1.0, i as f64, 0.5, -1.0]);
                AgentModel::new(i, h, DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0])).unwrap()
            })
            .collect();
        let model = GlobalModel::new(agents, DVector::from_vec(vec![0.7, 1.3])).unwrap();
        let spec = GraphProcessSpec::iid_failure(Adjacency::complete(4), 0.6).unwrap();
        let c = check_state_identity(
            &model,
            &spec,
            &TransitionRule::OutDegreeReciprocal,
            &AlphaSchedule::Linear,
            1,
            5,
            100,
            9,
        )
        .unwrap();
        assert!(c.passed, "{c}");
    }

    #[test]
    fn window_connectivity_check_passes() {
        let c = check_window_connectivity(3, 200);
        assert!(c.passed, "{c}");
    }
}
