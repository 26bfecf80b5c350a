//! The roaming-token estimator: per-agent running statistics, the token
//! payload `(d, K)` and the regularized estimate
//! `s(t) = (I / alpha(t) + K(t))^-1 d(t)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::chain::{step_token, TokenPosition, TransitionRule};
use crate::error::{Error, Result};
use crate::graph::{next_adjacency_into, Adjacency, GraphProcessSpec};
use crate::linalg;
use crate::observation::{sample_measurements_into, AgentModel, GlobalModel, MeasurementBatch};
use crate::rng::TrialStreams;

/// Residual tolerance of the estimate solve.
pub const ESTIMATE_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct AgentLocalState {
    /// `H^T C^-1 ybar`, the running information statistic.
    pub x: DVector<f64>,
    /// Value of `x` at the last token visit.
    pub x_snapshot: DVector<f64>,
    /// Measurements absorbed so far.
    pub k: usize,
    pub last_visit: Option<usize>,
    pub last_seen_estimate: DVector<f64>,
}

impl AgentLocalState {
    pub fn new(dim: usize) -> Self {
        Self {
            x: DVector::zeros(dim),
            x_snapshot: DVector::zeros(dim),
            k: 0,
            last_visit: None,
            last_seen_estimate: DVector::zeros(dim),
        }
    }
}

/// Folds one measurement into the running mean: `x += (H^T C^-1 y - x) / k`
/// with `k` the post-increment count.
pub fn local_update(state: &mut AgentLocalState, agent: &AgentModel, y: &DVector<f64>) {
    state.k += 1;
    let inv_k = 1.0 / state.k as f64;
    state.x.gemv(inv_k, agent.gain(), y, 1.0 - inv_k);
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenPayload {
    pub d: DVector<f64>,
    pub k: DMatrix<f64>,
    pub position: usize,
    visited: Vec<bool>,
    visited_count: usize,
}

impl TokenPayload {
    pub fn new(n: usize, dim: usize, start: usize) -> Self {
        Self {
            d: DVector::zeros(dim),
            k: DMatrix::zeros(dim, dim),
            position: start,
            visited: vec![false; n],
            visited_count: 0,
        }
    }

    pub fn is_visited(&self, i: usize) -> bool {
        self.visited[i]
    }

    pub fn visited_count(&self) -> usize {
        self.visited_count
    }

    pub fn visited(&self) -> impl Iterator<Item = usize> + '_ {
        self.visited.iter().enumerate().filter_map(|(i, &v)| v.then_some(i))
    }
}

/// The holder swaps its stale contribution in `d` for its current `x`, adds
/// `B_i` to `K` on a first visit, and records the snapshot.
pub fn token_visit(payload: &mut TokenPayload, state: &mut AgentLocalState, agent: &AgentModel, t: usize) {
    debug_assert_eq!(payload.position, agent.id());
    payload.d -= &state.x_snapshot;
    payload.d += &state.x;
    let id = agent.id();
    if !payload.visited[id] {
        payload.visited[id] = true;
        payload.visited_count += 1;
        payload.k += agent.b();
    }
    state.x_snapshot.copy_from(&state.x);
    state.last_visit = Some(t);
}

/// Regularization schedule `alpha(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum AlphaSchedule {
    /// `alpha(t) = t + 1`.
    Linear,
    /// `alpha(t) = c (t + 1)^q`.
    Power { c: f64, q: f64 },
}

impl Default for AlphaSchedule {
    fn default() -> Self {
        Self::Linear
    }
}

impl AlphaSchedule {
    pub fn power(c: f64, q: f64) -> Result<Self> {
        if !(c > 0.0 && q.is_finite()) {
            return Err(Error::Config(format!("power schedule needs c > 0 and finite q, got c={c}, q={q}")));
        }
        Ok(Self::Power { c, q })
    }

    pub fn value(&self, t: usize) -> f64 {
        let t1 = (t + 1) as f64;
        match *self {
            Self::Linear => t1,
            Self::Power { c, q } => c * t1.powf(q),
        }
    }

    /// `t / alpha(t)^2 -> 0` (polynomial schedules always beat the
    /// exponential condition), i.e. `q > 1/2` for power schedules.
    pub fn meets_rate_conditions(&self) -> bool {
        match *self {
            Self::Linear => true,
            Self::Power { c, q } => c > 0.0 && q > 0.5,
        }
    }
}

/// Solves `(I / alpha(t) + K) s = d`.
pub fn estimate(payload: &TokenPayload, schedule: &AlphaSchedule, t: usize) -> Result<DVector<f64>> {
    let alpha = schedule.value(t);
    if !(alpha > 0.0) {
        return Err(Error::Config(format!("alpha({t}) = {alpha} is not positive")));
    }
    let mut m = payload.k.clone();
    for i in 0..m.nrows() {
        m[(i, i)] += 1.0 / alpha;
    }
    if payload.d.iter().all(|&v| v == 0.0) {
        return Ok(DVector::zeros(payload.d.len()));
    }
    linalg::spd_solve(&m, &payload.d, ESTIMATE_TOLERANCE)
}

/// Step-by-step driver of one estimator instance over a shared model.
#[derive(Debug, Clone)]
pub struct RoamingToken<'m> {
    model: &'m GlobalModel,
    rule: TransitionRule,
    schedule: AlphaSchedule,
    agents: Vec<AgentLocalState>,
    payload: TokenPayload,
    t: usize,
}

impl<'m> RoamingToken<'m> {
    pub fn new(model: &'m GlobalModel, rule: TransitionRule, schedule: AlphaSchedule, start: usize) -> Result<Self> {
        let n = model.n();
        if start >= n {
            return Err(Error::Config(format!("start node {start} is out of range for n={n}")));
        }
        Ok(Self {
            model,
            rule,
            schedule,
            agents: vec![AgentLocalState::new(model.dim()); n],
            payload: TokenPayload::new(n, model.dim(), start),
            t: 0,
        })
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn holder(&self) -> usize {
        self.payload.position
    }

    pub fn payload(&self) -> &TokenPayload {
        &self.payload
    }

    pub fn agents(&self) -> &[AgentLocalState] {
        &self.agents
    }

    /// Every agent absorbs its measurement for the current tick.
    pub fn measure(&mut self, batch: &MeasurementBatch) {
        for ((state, agent), y) in self.agents.iter_mut().zip(self.model.agents()).zip(&batch.y) {
            local_update(state, agent, y);
        }
    }

    /// The holder updates the payload and computes `s(t)`, which it keeps as
    /// its last-seen estimate.
    pub fn visit_and_estimate(&mut self) -> Result<DVector<f64>> {
        let p = self.payload.position;
        token_visit(&mut self.payload, &mut self.agents[p], &self.model.agents()[p], self.t);
        let s = estimate(&self.payload, &self.schedule, self.t)?;
        self.agents[p].last_seen_estimate.copy_from(&s);
        Ok(s)
    }

    /// Passes the token along `A(t)` and advances the clock.
    pub fn move_token<R: Rng + ?Sized>(&mut self, a: &Adjacency, rng: &mut R) -> Result<()> {
        let pos = TokenPosition { node: self.payload.position, t: self.t };
        let next = step_token(pos, a, &self.rule, rng)?;
        self.payload.position = next.node;
        self.t = next.t;
        Ok(())
    }

    /// `|s(tau_i) - theta|^2` averaged over visited agents.
    pub fn mean_last_seen_sq_err(&self) -> f64 {
        let theta = self.model.theta();
        let sum: f64 = self
            .payload
            .visited()
            .map(|i| (&self.agents[i].last_seen_estimate - theta).norm_squared())
            .sum();
        sum / self.payload.visited_count().max(1) as f64
    }
}

/// Which ticks an episode records.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum RecordTimes {
    #[default]
    All,
    Every(usize),
    /// Sorted tick list.
    At(Vec<usize>),
}

impl RecordTimes {
    pub fn includes(&self, t: usize) -> bool {
        match self {
            Self::All => true,
            Self::Every(k) => t % (*k).max(1) == 0,
            Self::At(ts) => ts.binary_search(&t).is_ok(),
        }
    }

    pub fn times(&self, horizon: usize) -> Vec<usize> {
        (0..=horizon).filter(|&t| self.includes(t)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RecordSpec {
    pub times: RecordTimes,
    /// Also keep per-agent `tau_i` and last-seen errors.
    pub per_agent: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EpisodeTrace {
    pub times: Vec<usize>,
    pub holder: Vec<usize>,
    pub visited_count: Vec<usize>,
    /// `|s(t) - theta|^2`.
    pub token_sq_err: Vec<f64>,
    /// Mean of `|s(tau_i(t)) - theta|^2` over visited agents.
    pub last_seen_sq_err: Vec<f64>,
    /// Per recorded tick, per agent `tau_i(t)` (empty unless requested).
    pub tau: Vec<Vec<Option<usize>>>,
    /// Per recorded tick, per agent last-seen squared error, `None` before
    /// the first visit (empty unless requested).
    pub agent_last_seen_sq_err: Vec<Vec<Option<f64>>>,
}

impl EpisodeTrace {
    pub(crate) fn record(&mut self, sim: &RoamingToken<'_>, s: &DVector<f64>, per_agent: bool) {
        let theta = sim.model.theta();
        self.times.push(sim.t);
        self.holder.push(sim.holder());
        self.visited_count.push(sim.payload.visited_count());
        self.token_sq_err.push((s - theta).norm_squared());
        self.last_seen_sq_err.push(sim.mean_last_seen_sq_err());
        if per_agent {
            self.tau.push(sim.agents.iter().map(|a| a.last_visit).collect());
            self.agent_last_seen_sq_err.push(
                sim.agents
                    .iter()
                    .map(|a| a.last_visit.map(|_| (&a.last_seen_estimate - theta).norm_squared()))
                    .collect(),
            );
        }
    }
}

/// Runs the estimator for ticks `0..=horizon`. Each tick: all agents
/// measure, the holder visits and estimates, then `A(t)` is drawn and the
/// token moves (no move after the final tick).
#[allow(clippy::too_many_arguments)]
pub fn run_episode(
    model: &GlobalModel,
    spec: &GraphProcessSpec,
    rule: &TransitionRule,
    schedule: &AlphaSchedule,
    horizon: usize,
    start_node: usize,
    record: &RecordSpec,
    streams: &mut TrialStreams,
) -> Result<EpisodeTrace> {
    if spec.n() != model.n() {
        return Err(Error::Config(format!(
            "graph has {} nodes but the model has {} agents",
            spec.n(),
            model.n()
        )));
    }
    let mut sim = RoamingToken::new(model, *rule, *schedule, start_node)?;
    let mut batch = MeasurementBatch::zeros(model);
    let mut a = Adjacency::empty(model.n());
    let mut trace = EpisodeTrace::default();
    for t in 0..=horizon {
        sample_measurements_into(model, t, &mut streams.noise, &mut batch);
        sim.measure(&batch);
        let s = sim.visit_and_estimate()?;
        if record.times.includes(t) {
            trace.record(&sim, &s, record.per_agent);
        }
        if t < horizon {
            next_adjacency_into(spec, t, &mut streams.graph, &mut a)?;
            sim.move_token(&a, &mut streams.walk)?;
        }
    }
    Ok(trace)
}
