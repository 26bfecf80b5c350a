//! Distributed linear parameter estimation with a roaming token.
//!
//! Agents observe `y_i(t) = H_i theta + w_i(t)`. A single token hops between
//! agents along the edges of a time-varying directed graph, accumulating
//! `d = sum x_i(tau_i)` and `K = sum B_i` over visited agents, and estimates
//! `s(t) = (I/alpha(t) + K)^-1 d`. The crate also provides the central
//! estimator, a consensus+innovations baseline, graph processes, transition
//! chains with hitting-time bounds, and a Monte Carlo harness.

pub mod chain;
pub mod ci;
pub mod config;
pub mod error;
pub mod graph;
pub mod harness;
pub mod linalg;
pub mod observation;
pub mod reference;
pub mod rng;
pub mod token;

pub use chain::TransitionRule;
pub use ci::{CiConfig, GainMode};
pub use error::{Error, Result};
pub use graph::{Adjacency, GraphProcessSpec};
pub use harness::{Algorithm, ExperimentConfig, MetricSeries};
pub use observation::{AgentModel, GlobalModel, NoiseKind};
pub use token::{AlphaSchedule, RecordTimes};
