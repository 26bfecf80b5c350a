//! Monte Carlo experiment runner: paired trials of the token estimator, the
//! consensus+innovations baseline and the central estimator, aggregated into
//! relative error curves and written as CSV.

pub mod metrics;
mod output;
pub mod verify;

use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chain::TransitionRule;
use crate::ci::{CiConfig, CiRunner, CiTrace};
use crate::error::{Error, Result};
use crate::graph::{next_adjacency_into, Adjacency, GraphProcessSpec};
use crate::observation::{sample_measurements_into, CentralTracker, GlobalModel, MeasurementBatch};
use crate::rng::TrialStreams;
use crate::token::{AlphaSchedule, EpisodeTrace, RecordTimes, RoamingToken};

pub use metrics::MetricSeries;
pub use output::{write_comparison_csv, write_metrics_csv, write_trace_csv, OutputGuard};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Token,
    Ci,
    Central,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Self::Token => "token",
            Self::Ci => "ci",
            Self::Central => "central",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub model: GlobalModel,
    pub graph: GraphProcessSpec,
    pub rule: TransitionRule,
    pub schedule: AlphaSchedule,
    pub start_node: usize,
    pub ci: CiConfig,
    pub algorithms: Vec<Algorithm>,
    pub horizon: usize,
    pub trials: usize,
    pub seed: u64,
    pub record: RecordTimes,
    /// Directory for `metrics.csv`, `trace.csv` and `metadata.toml`.
    pub output: Option<PathBuf>,
    /// Configuration echoed into the metadata file.
    pub echo: Option<toml::Table>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon < 1 || self.trials < 1 {
            return Err(Error::Config("run.horizon and run.trials must be at least 1".into()));
        }
        if self.algorithms.is_empty() {
            return Err(Error::Config("run.algorithms is empty".into()));
        }
        if self.graph.n() != self.model.n() {
            return Err(Error::Config(format!(
                "graph has {} nodes but the model has {} agents",
                self.graph.n(),
                self.model.n()
            )));
        }
        if self.start_node >= self.model.n() {
            return Err(Error::Config(format!("token.start_node {} is out of range", self.start_node)));
        }
        if self.runs(Algorithm::Ci) {
            self.ci.validate(&self.model)?;
        }
        Ok(())
    }

    pub fn runs(&self, alg: Algorithm) -> bool {
        self.algorithms.contains(&alg)
    }
}

/// Everything one trial produced, on shared noise and graph draws.
#[derive(Debug, Clone, Default)]
pub struct TrialOutcome {
    pub token: Option<EpisodeTrace>,
    pub ci: Option<CiTrace>,
    /// `|thetahat_c(t) - theta|^2` at the recorded ticks.
    pub central_sq_err: Option<Vec<f64>>,
    pub times: Vec<usize>,
}

/// Runs every requested algorithm on the same measurements `y(t)` and the
/// same graphs `A(t)` of trial `trial`.
pub fn run_paired_trial(cfg: &ExperimentConfig, trial: u64) -> Result<TrialOutcome> {
    let model = &cfg.model;
    let mut streams = TrialStreams::new(cfg.seed, trial);
    let mut batch = MeasurementBatch::zeros(model);
    let mut a = Adjacency::empty(model.n());
    let mut token = if cfg.runs(Algorithm::Token) {
        Some(RoamingToken::new(model, cfg.rule, cfg.schedule, cfg.start_node)?)
    } else {
        None
    };
    let mut ci = if cfg.runs(Algorithm::Ci) { Some(CiRunner::new(model, cfg.ci.clone())?) } else { None };
    let mut central = cfg.runs(Algorithm::Central).then(|| CentralTracker::new(model));

    let mut out = TrialOutcome {
        token: token.as_ref().map(|_| EpisodeTrace::default()),
        ci: ci.as_ref().map(|_| CiTrace::default()),
        central_sq_err: central.as_ref().map(|_| Vec::new()),
        times: Vec::new(),
    };
    let theta = model.theta();
    for t in 0..=cfg.horizon {
        sample_measurements_into(model, t, &mut streams.noise, &mut batch);
        let record = cfg.record.includes(t);
        if record {
            out.times.push(t);
        }
        if let Some(sim) = token.as_mut() {
            sim.measure(&batch);
            let s = sim.visit_and_estimate()?;
            if record {
                out.token.as_mut().expect("token trace").record(sim, &s, false);
            }
        }
        if let Some(c) = central.as_mut() {
            c.absorb(model, &batch);
            if record {
                let e = (c.estimate(model) - theta).norm_squared();
                out.central_sq_err.as_mut().expect("central trace").push(e);
            }
        }
        if let (Some(r), true) = (ci.as_ref(), record) {
            let trace = out.ci.as_mut().expect("ci trace");
            trace.times.push(t);
            trace.network_sq_err.push(r.state().network_sq_err(theta));
        }
        if t < cfg.horizon {
            next_adjacency_into(&cfg.graph, t, &mut streams.graph, &mut a)?;
            if let Some(sim) = token.as_mut() {
                sim.move_token(&a, &mut streams.walk)?;
            }
            if let Some(r) = ci.as_mut() {
                r.step(model, &a, &batch, t);
            }
        }
    }
    Ok(out)
}

/// Aggregated curves of one experiment.
#[derive(Debug, Clone)]
pub struct ExperimentBundle {
    pub metrics: Vec<MetricSeries>,
    /// Trace of the first trial's token, when the token ran.
    pub first_trace: Option<EpisodeTrace>,
    /// `|theta|^2`, the r-MSE normalizer.
    pub normalizer: f64,
    pub files: Vec<PathBuf>,
}

impl ExperimentBundle {
    pub fn metric(&self, name: &str) -> Option<&MetricSeries> {
        self.metrics.iter().find(|m| m.name == name)
    }
}

/// Runs `trials` paired trials in parallel, aggregates them in trial order
/// and writes the CSV outputs when an output directory is configured. Files
/// written before a failure are removed.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentBundle> {
    cfg.validate()?;
    let normalizer = metrics::rmse_normalizer(cfg.model.theta())?;
    let outcomes: Vec<TrialOutcome> =
        (0..cfg.trials as u64).into_par_iter().map(|k| run_paired_trial(cfg, k)).collect::<Result<_>>()?;
    let mut bundle = ExperimentBundle {
        metrics: aggregate_outcomes(cfg, &outcomes)?,
        first_trace: outcomes.into_iter().next().and_then(|o| o.token),
        normalizer,
        files: Vec::new(),
    };
    for m in &bundle.metrics {
        if let Some(t) = m.first_non_finite() {
            return Err(Error::NonFinite { metric: m.name.clone(), t });
        }
    }
    if let Some(dir) = &cfg.output {
        let mut guard = OutputGuard::new(dir)?;
        guard.write("metrics.csv", |p| write_metrics_csv(p, &bundle.metrics))?;
        if let Some(trace) = &bundle.first_trace {
            guard.write("trace.csv", |p| write_trace_csv(p, trace))?;
        }
        guard.write("metadata.toml", |p| output::write_metadata(p, cfg, normalizer))?;
        bundle.files = guard.commit();
    }
    Ok(bundle)
}

fn aggregate_outcomes(cfg: &ExperimentConfig, outcomes: &[TrialOutcome]) -> Result<Vec<MetricSeries>> {
    let theta = cfg.model.theta();
    let mut out = Vec::new();
    if cfg.runs(Algorithm::Token) {
        let traces: Vec<EpisodeTrace> = outcomes.iter().filter_map(|o| o.token.clone()).collect();
        out.push(metrics::rmse_token(&traces, theta)?);
        out.push(metrics::rmse_last_seen(&traces, theta)?);
        if traces.len() >= 2 {
            out.push(metrics::token_optimality_ratio(&traces, &cfg.model)?);
        }
    }
    if cfg.runs(Algorithm::Ci) {
        let traces: Vec<CiTrace> = outcomes.iter().filter_map(|o| o.ci.clone()).collect();
        out.push(metrics::rmse_network_ci(&traces, theta)?);
    }
    if cfg.runs(Algorithm::Central) {
        let times = &outcomes[0].times;
        let series: Vec<&[f64]> = outcomes.iter().filter_map(|o| o.central_sq_err.as_deref()).collect();
        let norm = metrics::rmse_normalizer(theta)?;
        out.push(metrics::aggregate("rmse_central", times, &series, 1.0 / norm));
        if series.len() >= 2 {
            out.push(metrics::optimality_ratio("optimality_ratio_central", times, &series, &cfg.model)?);
        }
    }
    Ok(out)
}
