//! Consensus+innovations baseline: every agent keeps an estimate that mixes
//! a consensus pull toward its out-neighbours with a local innovation step,
//! under decaying gains `alpha(t) = a/(t+1)^tau1`, `beta(t) = b/(t+1)^tau2`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::{next_adjacency_into, Adjacency, GraphProcessSpec};
use crate::harness::metrics::{aggregate, MetricSeries};
use crate::observation::{sample_measurements_into, GlobalModel, MeasurementBatch};
use crate::rng::TrialStreams;
use crate::token::RecordTimes;

/// Innovation gain `K_i(t)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum GainMode {
    #[default]
    Identity,
    /// One fixed `L x L` matrix per agent.
    Constant(Vec<DMatrix<f64>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CiConfig {
    pub a: f64,
    pub b: f64,
    pub tau1: f64,
    pub tau2: f64,
    pub gain_mode: GainMode,
}

impl Default for CiConfig {
    fn default() -> Self {
        Self { a: 1.0, b: 0.5, tau1: 1.0, tau2: 0.5, gain_mode: GainMode::Identity }
    }
}

impl CiConfig {
    /// Requires `a > 0`, `b >= 0` and `0 < tau2 < tau1 <= 1`.
    pub fn validate(&self, model: &GlobalModel) -> Result<()> {
        if !(self.a > 0.0) || !(self.b >= 0.0) || !self.b.is_finite() || !self.a.is_finite() {
            return Err(Error::Config(format!("ci gains need a > 0 and b >= 0, got a={}, b={}", self.a, self.b)));
        }
        if !(0.0 < self.tau2 && self.tau2 < self.tau1 && self.tau1 <= 1.0) {
            return Err(Error::Config(format!(
                "ci exponents need 0 < tau2 < tau1 <= 1, got tau1={}, tau2={}",
                self.tau1, self.tau2
            )));
        }
        if let GainMode::Constant(gains) = &self.gain_mode {
            let l = model.dim();
            if gains.len() != model.n() || gains.iter().any(|g| g.nrows() != l || g.ncols() != l) {
                return Err(Error::Config(format!("constant gain needs {} matrices of size {l}x{l}", model.n())));
            }
        }
        Ok(())
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.a / ((t + 1) as f64).powf(self.tau1)
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.b / ((t + 1) as f64).powf(self.tau2)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CiNetworkState {
    pub estimates: Vec<DVector<f64>>,
}

impl CiNetworkState {
    pub fn zeros(n: usize, dim: usize) -> Self {
        Self { estimates: vec![DVector::zeros(dim); n] }
    }

    /// `(1/n) sum_i |s_i - theta|^2`.
    pub fn network_sq_err(&self, theta: &DVector<f64>) -> f64 {
        let n = self.estimates.len().max(1) as f64;
        self.estimates.iter().map(|s| (s - theta).norm_squared()).sum::<f64>() / n
    }
}

/// One iteration
/// `s_i <- s_i - beta(t) sum_{l in out(i)} (s_i - s_l) + alpha(t) K_i H_i^T C_i^-1 (y_i - H_i s_i)`.
pub fn ci_step(
    state: &CiNetworkState,
    model: &GlobalModel,
    a: &Adjacency,
    batch: &MeasurementBatch,
    cfg: &CiConfig,
    t: usize,
) -> CiNetworkState {
    let mut next = state.clone();
    let mut scratch = CiScratch::new(model);
    ci_step_into(state, model, a, batch, cfg, t, &mut next, &mut scratch);
    next
}

#[derive(Debug, Clone)]
struct CiScratch {
    residual: Vec<DVector<f64>>,
    innovation: DVector<f64>,
    gained: DVector<f64>,
}

impl CiScratch {
    fn new(model: &GlobalModel) -> Self {
        Self {
            residual: model.agents().iter().map(|ag| DVector::zeros(ag.rows())).collect(),
            innovation: DVector::zeros(model.dim()),
            gained: DVector::zeros(model.dim()),
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn ci_step_into(
    state: &CiNetworkState,
    model: &GlobalModel,
    a: &Adjacency,
    batch: &MeasurementBatch,
    cfg: &CiConfig,
    t: usize,
    next: &mut CiNetworkState,
    scratch: &mut CiScratch,
) {
    let alpha = cfg.alpha(t);
    let beta = cfg.beta(t);
    for (i, agent) in model.agents().iter().enumerate() {
        let s_i = &state.estimates[i];
        let out = &mut next.estimates[i];
        out.copy_from(s_i);
        for l in a.out_neighbors(i) {
            // out -= beta (s_i - s_l)
            out.axpy(-beta, s_i, 1.0);
            out.axpy(beta, &state.estimates[l], 1.0);
        }
        let r = &mut scratch.residual[i];
        r.copy_from(&batch.y[i]);
        r.gemv(-1.0, agent.h(), s_i, 1.0);
        scratch.innovation.gemv(1.0, agent.gain(), r, 0.0);
        match &cfg.gain_mode {
            GainMode::Identity => out.axpy(alpha, &scratch.innovation, 1.0),
            GainMode::Constant(gains) => {
                scratch.gained.gemv(1.0, &gains[i], &scratch.innovation, 0.0);
                out.axpy(alpha, &scratch.gained, 1.0);
            }
        }
    }
}

/// Double-buffered driver used by the harness.
#[derive(Debug, Clone)]
pub struct CiRunner {
    cfg: CiConfig,
    state: CiNetworkState,
    next: CiNetworkState,
    scratch: CiScratch,
}

impl CiRunner {
    pub fn new(model: &GlobalModel, cfg: CiConfig) -> Result<Self> {
        cfg.validate(model)?;
        let state = CiNetworkState::zeros(model.n(), model.dim());
        Ok(Self { cfg, next: state.clone(), state, scratch: CiScratch::new(model) })
    }

    pub fn state(&self) -> &CiNetworkState {
        &self.state
    }

    pub fn step(&mut self, model: &GlobalModel, a: &Adjacency, batch: &MeasurementBatch, t: usize) {
        ci_step_into(&self.state, model, a, batch, &self.cfg, t, &mut self.next, &mut self.scratch);
        std::mem::swap(&mut self.state, &mut self.next);
    }
}

/// Network-average squared error of one baseline run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CiTrace {
    pub times: Vec<usize>,
    /// `(1/n) sum_i |s_i(t) - theta|^2`.
    pub network_sq_err: Vec<f64>,
}

impl CiTrace {
    /// Builds a trace from explicit per-tick, per-agent estimates.
    pub fn from_estimates(times: Vec<usize>, estimates: &[Vec<DVector<f64>>], theta: &DVector<f64>) -> Self {
        let network_sq_err = estimates
            .iter()
            .map(|agents| CiNetworkState { estimates: agents.clone() }.network_sq_err(theta))
            .collect();
        Self { times, network_sq_err }
    }
}

/// Runs the baseline for ticks `0..=horizon`, recording `s_i(t)` before the
/// update that consumes `y(t)` and `A(t)`.
pub fn run_ci(
    model: &GlobalModel,
    spec: &GraphProcessSpec,
    cfg: &CiConfig,
    horizon: usize,
    record: &RecordTimes,
    streams: &mut TrialStreams,
) -> Result<CiTrace> {
    let mut runner = CiRunner::new(model, cfg.clone())?;
    let mut batch = MeasurementBatch::zeros(model);
    let mut a = Adjacency::empty(model.n());
    let mut trace = CiTrace::default();
    for t in 0..=horizon {
        sample_measurements_into(model, t, &mut streams.noise, &mut batch);
        if record.includes(t) {
            trace.times.push(t);
            trace.network_sq_err.push(runner.state().network_sq_err(model.theta()));
        }
        if t < horizon {
            next_adjacency_into(spec, t, &mut streams.graph, &mut a)?;
            runner.step(model, &a, &batch, t);
        }
    }
    Ok(trace)
}

/// Cartesian parameter grid; points violating `0 < tau2 < tau1 <= 1` are
/// skipped.
#[derive(Debug, Clone, PartialEq)]
pub struct CiGrid {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub tau1: Vec<f64>,
    pub tau2: Vec<f64>,
    pub gain_mode: GainMode,
}

impl CiGrid {
    pub fn points(&self) -> Vec<CiConfig> {
        let mut out = Vec::new();
        for &a in &self.a {
            for &b in &self.b {
                for &tau1 in &self.tau1 {
                    for &tau2 in &self.tau2 {
                        if 0.0 < tau2 && tau2 < tau1 && tau1 <= 1.0 {
                            out.push(CiConfig { a, b, tau1, tau2, gain_mode: self.gain_mode.clone() });
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct GridSearchResult {
    pub best: CiConfig,
    /// Mean network r-MSE at the horizon for the best point.
    pub best_rmse: f64,
    /// r-MSE curve of the best point.
    pub curve: MetricSeries,
    /// Every evaluated point with its horizon r-MSE (`inf` when it diverged).
    pub evaluated: Vec<(CiConfig, f64)>,
}

/// Evaluates every grid point on the same `trials` streams and returns the
/// one with the smallest mean network r-MSE at `horizon` (first in grid order
/// on ties).
pub fn grid_search(
    model: &GlobalModel,
    spec: &GraphProcessSpec,
    grid: &CiGrid,
    trials: usize,
    horizon: usize,
    record: &RecordTimes,
    seed: u64,
) -> Result<GridSearchResult> {
    let points = grid.points();
    if points.is_empty() {
        return Err(Error::Config("ci grid has no admissible points".into()));
    }
    if trials == 0 {
        return Err(Error::Config("grid search needs at least one trial".into()));
    }
    let normalizer = crate::harness::metrics::rmse_normalizer(model.theta())?;
    let mut record = record.clone();
    if !record.includes(horizon) {
        record = match record {
            RecordTimes::At(mut ts) => {
                ts.push(horizon);
                RecordTimes::At(ts)
            }
            _ => RecordTimes::At(RecordTimes::times(&record, horizon).into_iter().chain([horizon]).collect()),
        };
    }
    let mut best: Option<(usize, f64, MetricSeries)> = None;
    let mut evaluated = Vec::with_capacity(points.len());
    for (k, cfg) in points.iter().enumerate() {
        cfg.validate(model)?;
        let traces: Vec<CiTrace> = (0..trials as u64)
            .into_par_iter()
            .map(|trial| run_ci(model, spec, cfg, horizon, &record, &mut TrialStreams::new(seed, trial)))
            .collect::<Result<_>>()?;
        let series: Vec<&[f64]> = traces.iter().map(|t| t.network_sq_err.as_slice()).collect();
        let curve = aggregate("rmse_ci", &traces[0].times, &series, 1.0 / normalizer);
        let at_horizon = *curve.values.last().expect("horizon is recorded");
        let score = if at_horizon.is_finite() && curve.values.iter().all(|v| v.is_finite()) {
            at_horizon
        } else {
            f64::INFINITY
        };
        evaluated.push((cfg.clone(), score));
        if score.is_finite() && best.as_ref().is_none_or(|(_, b, _)| score < *b) {
            best = Some((k, score, curve));
        }
    }
    let (k, best_rmse, curve) =
        best.ok_or_else(|| Error::Config("every ci grid point diverged".into()))?;
    Ok(GridSearchResult { best: points[k].clone(), best_rmse, curve, evaluated })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::observation::{AgentModel, NoiseKind};

    fn model(noise: NoiseKind) -> GlobalModel {
        let agents = vec![
            AgentModel::new(0, DMatrix::from_row_slice(1, 2, &[1.0, 0.0]), DMatrix::from_element(1, 1, 1.0)).unwrap(),
            AgentModel::new(1, DMatrix::from_row_slice(1, 2, &[0.0, 1.0]), DMatrix::from_element(1, 1, 1.0)).unwrap(),
            AgentModel::new(2, DMatrix::from_row_slice(1, 2, &[1.0, 1.0]), DMatrix::from_element(1, 1, 2.0)).unwrap(),
        ];
        GlobalModel::new(agents, DVector::from_vec(vec![1.0, -1.0])).unwrap().with_noise(noise)
    }

    #[test]
    fn equal_estimates_cancel_consensus_term() {
        let m = model(NoiseKind::Zero);
        let a = Adjacency::complete(3);
        let s = DVector::from_vec(vec![0.3, 0.7]);
        let state = CiNetworkState { estimates: vec![s.clone(); 3] };
        let zero_gain = CiConfig {
            gain_mode: GainMode::Constant(vec![DMatrix::zeros(2, 2); 3]),
            ..CiConfig::default()
        };
        let batch = MeasurementBatch { t: 0, y: vec![DVector::from_element(1, 5.0); 3] };
        let next = ci_step(&state, &m, &a, &batch, &zero_gain, 0);
        assert_eq!(next, state);
    }

    #[test]
    fn truth_is_a_fixed_point_without_noise() {
        let m = model(NoiseKind::Zero);
        let state = CiNetworkState { estimates: vec![m.theta().clone(); 3] };
        let mut streams = TrialStreams::new(1, 0);
        let mut batch = MeasurementBatch::zeros(&m);
        sample_measurements_into(&m, 0, &mut streams.noise, &mut batch);
        let next = ci_step(&state, &m, &Adjacency::complete(3), &batch, &CiConfig::default(), 0);
        for s in &next.estimates {
            assert!((s - m.theta()).norm() < 1e-15);
        }
    }

    #[test]
    fn step_matches_hand_formula() {
        let m = model(NoiseKind::Zero);
        let a = Adjacency::from_edges(3, &[(0, 1), (0, 2), (2, 1)]).unwrap();
        let state = CiNetworkState {
            estimates: vec![
                DVector::from_vec(vec![0.5, 0.0]),
                DVector::from_vec(vec![-1.0, 2.0]),
                DVector::from_vec(vec![0.25, 0.25]),
            ],
        };
        let batch = MeasurementBatch {
            t: 3,
            y: vec![DVector::from_element(1, 1.5), DVector::from_element(1, -0.5), DVector::from_element(1, 0.0)],
        };
        let cfg = CiConfig { a: 0.8, b: 0.3, tau1: 1.0, tau2: 0.5, gain_mode: GainMode::Identity };
        let next = ci_step(&state, &m, &a, &batch, &cfg, 3);
        let alpha = 0.8 / 4.0;
        let beta = 0.3 / 2.0;
        // Agent 0: neighbours 1 and 2, H = [1 0], C = 1.
        let s0 = &state.estimates[0];
        let consensus = (s0 - &state.estimates[1]) + (s0 - &state.estimates[2]);
        let innovation = DVector::from_vec(vec![1.5 - 0.5, 0.0]);
        let expected0 = s0 - consensus * beta + innovation * alpha;
        assert!((&next.estimates[0] - expected0).norm() < 1e-12);
        // Agent 1: no neighbours, H = [0 1].
        let expected1 = &state.estimates[1] + DVector::from_vec(vec![0.0, -0.5 - 2.0]) * alpha;
        assert!((&next.estimates[1] - expected1).norm() < 1e-12);
        // Agent 2: neighbour 1, H = [1 1], C = 2.
        let s2 = &state.estimates[2];
        let r = 0.0 - 0.5;
        let expected2 = s2 - (s2 - &state.estimates[1]) * beta + DVector::from_vec(vec![r / 2.0, r / 2.0]) * alpha;
        assert!((&next.estimates[2] - expected2).norm() < 1e-12);
    }

    #[test]
    fn single_agent_converges_without_noise() {
        let agent = AgentModel::new(0, DMatrix::from_element(1, 1, 1.0), DMatrix::from_element(1, 1, 1.0)).unwrap();
        let m = GlobalModel::new(vec![agent], DVector::from_element(1, 2.0)).unwrap().with_noise(NoiseKind::Zero);
        let spec = GraphProcessSpec::Static(Adjacency::empty(1));
        let cfg = CiConfig { a: 1.0, b: 0.0, tau1: 1.0, tau2: 0.5, gain_mode: GainMode::Identity };
        let trace = run_ci(&m, &spec, &cfg, 10_000, &RecordTimes::At(vec![0, 10_000]), &mut TrialStreams::new(0, 0)).unwrap();
        assert_eq!(trace.network_sq_err[0], 4.0);
        assert!(trace.network_sq_err[1].sqrt() < 1e-3);
    }

    #[test]
    fn pure_consensus_reaches_agreement() {
        // Zero innovation gain: the iteration is x <- (I - beta L) x on a
        // static strongly connected graph, which contracts disagreement.
        let m = model(NoiseKind::Zero);
        let a = Adjacency::from_edges(3, &[(0, 1), (1, 2), (2, 0)]).unwrap();
        let cfg = CiConfig {
            a: 1.0,
            b: 0.2,
            tau1: 1.0,
            tau2: 0.01,
            gain_mode: GainMode::Constant(vec![DMatrix::zeros(2, 2); 3]),
        };
        let mut state = CiNetworkState {
            estimates: vec![DVector::from_vec(vec![1.0, 0.0]), DVector::from_vec(vec![0.0, 3.0]), DVector::from_vec(vec![-2.0, 1.0])],
        };
        let batch = MeasurementBatch::zeros(&m);
        for t in 0..500 {
            state = ci_step(&state, &m, &a, &batch, &cfg, t);
        }
        let spread = state.estimates.iter().map(|s| (s - &state.estimates[0]).norm()).fold(0.0, f64::max);
        assert!(spread < 1e-6, "spread {spread}");
    }

    #[test]
    fn validation() {
        let m = model(NoiseKind::Zero);
        assert!(CiConfig::default().validate(&m).is_ok());
        assert!(CiConfig { a: 0.0, ..CiConfig::default() }.validate(&m).is_err());
        assert!(CiConfig { tau2: 1.0, ..CiConfig::default() }.validate(&m).is_err());
        assert!(CiConfig { gain_mode: GainMode::Constant(vec![]), ..CiConfig::default() }.validate(&m).is_err());
    }

    #[test]
    fn grid_search_single_point_and_dominator() {
        let m = model(NoiseKind::Gaussian);
        let spec = GraphProcessSpec::iid_failure(Adjacency::complete(3), 0.5).unwrap();
        let single = CiGrid { a: vec![1.0], b: vec![0.5], tau1: vec![1.0], tau2: vec![0.5], gain_mode: GainMode::Identity };
        let r = grid_search(&m, &spec, &single, 4, 50, &RecordTimes::All, 3).unwrap();
        assert_eq!(r.best, single.points()[0]);
        assert_eq!(r.curve.values.len(), 51);

        // A vanishing innovation gain barely moves from zero, so the
        // reasonable gain must win.
        let two = CiGrid { a: vec![1e-6, 1.0], ..single.clone() };
        let r = grid_search(&m, &spec, &two, 4, 200, &RecordTimes::Every(50), 3).unwrap();
        assert_eq!(r.best.a, 1.0);
        assert!(r.evaluated[0].1 > r.evaluated[1].1);

        let empty = CiGrid { tau2: vec![1.0], ..single };
        assert!(grid_search(&m, &spec, &empty, 1, 5, &RecordTimes::All, 0).is_err());
    }
}
