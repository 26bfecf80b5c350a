//! TOML experiment configuration: one section per component, unknown keys
//! rejected, `key=value` overrides applied on top of the file.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::chain::TransitionRule;
use crate::ci::{CiConfig, CiGrid, GainMode};
use crate::error::{Error, Result};
use crate::graph::{
    generate_geometric_backbone, generate_geometric_backbone_with_degree, read_edge_list_csv, Adjacency,
    GraphProcessSpec, MAX_RETRIES,
};
use crate::harness::{Algorithm, ExperimentConfig};
use crate::observation::{AgentModel, GlobalModel, NoiseKind, INVERTIBILITY_FLOOR};
use crate::reference::gaussian_rows_model;
use crate::rng::{derive_stream, Purpose};
use crate::token::{AlphaSchedule, RecordTimes};

/// Seed used when neither the file nor the command line provides one.
pub const DEFAULT_SEED: u64 = 0;

/// Reference for every accepted key.
pub const CONFIG_KEYS: &str = "\
CONFIG KEYS (TOML; `--set key=value` overrides any scalar or array key)

[model]
  L                 parameter dimension (required)
  kind              \"explicit\" (default) or \"gaussian_rows\"
  agents            explicit only: array of tables with
    H               measurement matrix, rows x L, list of rows
    C               noise covariance, rows x rows, symmetric positive definite
  theta             true parameter, length L (gaussian_rows default: 1..L)
  n                 gaussian_rows only: number of agents
  rows_per_agent    gaussian_rows only: rows of each H (default 1)
  noise_variance    gaussian_rows only: C = noise_variance * I (default 1)
  seed              gaussian_rows only: seed for the H entries (default 0)
  noise             \"gaussian\" (default), \"uniform\" or \"zero\"
  floor             invertibility floor on the smallest eigenvalue (default 1e-10)

[graph]
  kind              \"static\", \"iid_failure\" or \"sequence\"
  n                 node count (default: number of agents)
  adjacency         0/1 backbone matrix, list of rows
  radius            geometric backbone radius (when adjacency is absent)
  relative_degree   geometric backbone target edges / (n(n-1)) (alternative to radius)
  backbone_seed     seed for the geometric backbone (default: run seed)
  p_fail            per-edge failure probability for iid_failure (default 0)
  frames_file       sequence only: CSV with columns t,from,to
  cycle             sequence only: repeat the frames (default true)
  window            sequence only: window length b for the connectivity checks

[chain]
  rule              \"out_degree_reciprocal\" (default), \"lazy\" or \"unconstrained\"
  delta_self        lazy only: self-hold probability in (0,1) (default 1/n)

[token]
  alpha_form        \"linear\" (alpha = t+1, default) or \"power\" (alpha = c (t+1)^q)
  alpha_params      power only: [c, q]
  start_node        initial holder (default 0)

[ci]
  a, b              gain scales (defaults 1.0, 0.5)
  tau1, tau2        gain decay exponents, 0 < tau2 < tau1 <= 1 (defaults 1.0, 0.5)
  gain_mode         \"identity\" (default) or \"constant\"
  gains             constant only: one L x L matrix per agent

[gridsearch]
  a, b, tau1, tau2  candidate lists for the baseline grid search
  trials            trials per grid point (default: run.trials)

[run]
  horizon           last tick T (default 1000)
  trials            Monte Carlo trials R (default 10)
  seed              master seed (default 0, with a warning)
  algorithms        subset of [\"token\", \"ci\", \"central\"] (default [\"token\", \"central\"])
  record_every      record every k-th tick (default: every tick)
  record_at         explicit list of ticks to record
  output            output directory (default: out)

[verify]
  trajectories      token trajectories for the tail check (default 10000)
  horizon           ticks per trajectory (default 200)
  episodes          episodes for the token state check (default 100)
  episode_horizon   ticks per state-check episode (default 200)
  support_draws     sampled graphs for the support check (default 1000)
  window_samples    sampled sequences for n = 4 window check (default 10000)
";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[default]
    Explicit,
    GaussianRows,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSection {
    #[serde(rename = "H")]
    pub h: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    pub c: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(rename = "L")]
    pub l: usize,
    #[serde(default)]
    pub kind: ModelKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub agents: Vec<AgentSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rows_per_agent: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_variance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub noise: NoiseKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub floor: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphKind {
    Static,
    IidFailure,
    Sequence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSection {
    pub kind: GraphKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adjacency: Option<Vec<Vec<u8>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relative_degree: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backbone_seed: Option<u64>,
    #[serde(default)]
    pub p_fail: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frames_file: Option<PathBuf>,
    #[serde(default = "yes")]
    pub cycle: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<usize>,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleName {
    #[default]
    OutDegreeReciprocal,
    Lazy,
    Unconstrained,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSection {
    #[serde(default)]
    pub rule: RuleName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_self: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaForm {
    #[default]
    Linear,
    Power,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenSection {
    #[serde(default)]
    pub alpha_form: AlphaForm,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_params: Option<Vec<f64>>,
    #[serde(default)]
    pub start_node: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainModeName {
    #[default]
    Identity,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CiSection {
    #[serde(default = "CiSection::default_a")]
    pub a: f64,
    #[serde(default = "CiSection::default_b")]
    pub b: f64,
    #[serde(default = "CiSection::default_tau1")]
    pub tau1: f64,
    #[serde(default = "CiSection::default_tau2")]
    pub tau2: f64,
    #[serde(default)]
    pub gain_mode: GainModeName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gains: Option<Vec<Vec<Vec<f64>>>>,
}

impl CiSection {
    fn default_a() -> f64 {
        1.0
    }
    fn default_b() -> f64 {
        0.5
    }
    fn default_tau1() -> f64 {
        1.0
    }
    fn default_tau2() -> f64 {
        0.5
    }
}

impl Default for CiSection {
    fn default() -> Self {
        Self { a: 1.0, b: 0.5, tau1: 1.0, tau2: 0.5, gain_mode: GainModeName::Identity, gains: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub tau1: Vec<f64>,
    pub tau2: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trials: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default = "RunSection::default_horizon")]
    pub horizon: usize,
    #[serde(default = "RunSection::default_trials")]
    pub trials: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default = "RunSection::default_algorithms")]
    pub algorithms: Vec<Algorithm>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_every: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_at: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

impl RunSection {
    fn default_horizon() -> usize {
        1000
    }
    fn default_trials() -> usize {
        10
    }
    fn default_algorithms() -> Vec<Algorithm> {
        vec![Algorithm::Token, Algorithm::Central]
    }

    pub fn record_times(&self) -> RecordTimes {
        match (&self.record_at, self.record_every) {
            (Some(ts), _) => {
                let mut ts = ts.clone();
                ts.sort_unstable();
                ts.dedup();
                RecordTimes::At(ts)
            }
            (None, Some(k)) => RecordTimes::Every(k.max(1)),
            (None, None) => RecordTimes::All,
        }
    }
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            horizon: 1000,
            trials: 10,
            seed: None,
            algorithms: Self::default_algorithms(),
            record_every: None,
            record_at: None,
            output: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySection {
    pub trajectories: usize,
    pub horizon: usize,
    pub episodes: usize,
    pub episode_horizon: usize,
    pub support_draws: usize,
    pub window_samples: usize,
}

impl Default for VerifySection {
    fn default() -> Self {
        Self {
            trajectories: 10_000,
            horizon: 200,
            episodes: 100,
            episode_horizon: 200,
            support_draws: 1000,
            window_samples: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub model: ModelSection,
    pub graph: GraphSection,
    #[serde(default)]
    pub chain: ChainSection,
    #[serde(default)]
    pub token: TokenSection,
    #[serde(default)]
    pub ci: CiSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gridsearch: Option<GridSection>,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub verify: VerifySection,
}

/// A parsed configuration with its seed resolved and relative paths made
/// absolute.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedConfig {
    pub file: FileConfig,
    pub seed: u64,
    /// True when no seed was given and [`DEFAULT_SEED`] was used.
    pub seed_defaulted: bool,
}

/// Reads and validates a config file, applying `key=value` overrides and an
/// optional seed (which wins over `run.seed`).
pub fn load(path: &Path, overrides: &[String], seed: Option<u64>) -> Result<LoadedConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse(&text, &path.display().to_string(), &base, overrides, seed)
}

/// Parses config text. `origin` prefixes error messages; relative paths are
/// resolved against `base_dir`.
pub fn parse(
    text: &str,
    origin: &str,
    base_dir: &Path,
    overrides: &[String],
    seed: Option<u64>,
) -> Result<LoadedConfig> {
    let table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(format!("{origin}: {e}")))?;
    // A metadata file written by a run embeds its config under `config`.
    let embedded = table.contains_key("metadata") && table.get("config").is_some_and(|v| v.is_table());
    let mut table = if embedded {
        match table.get("config") {
            Some(toml::Value::Table(t)) => t.clone(),
            _ => unreachable!(),
        }
    } else {
        // Deserialize from the text first so errors carry line numbers.
        toml::from_str::<FileConfig>(text).map_err(|e| Error::Config(format!("{origin}: {e}")))?;
        table
    };
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let mut file: FileConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(format!("{origin} (after overrides): {}", e.message())))?;
    let (seed, seed_defaulted) = match (seed, file.run.seed) {
        (Some(s), _) | (None, Some(s)) => (s, false),
        (None, None) => (DEFAULT_SEED, true),
    };
    file.run.seed = Some(seed);
    if let Some(p) = &file.graph.frames_file {
        if p.is_relative() {
            file.graph.frames_file = Some(absolute(&base_dir.join(p)));
        }
    }
    Ok(LoadedConfig { file, seed, seed_defaulted })
}

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

/// Sets `a.b.c = value` in `table`, parsing `value` as a TOML value and
/// falling back to a bare string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not of the form key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override key `{key}` is malformed")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override key `{key}`: `{p}` is not a section")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

impl LoadedConfig {
    /// The resolved configuration as a TOML table, suitable for rerunning.
    pub fn echo(&self) -> Result<toml::Table> {
        toml::Table::try_from(&self.file).map_err(|e| Error::Config(format!("cannot echo config: {e}")))
    }

    pub fn model(&self) -> Result<GlobalModel> {
        build_model(&self.file.model)
    }

    pub fn graph(&self, n: usize) -> Result<GraphProcessSpec> {
        build_graph(&self.file.graph, n, self.seed)
    }

    pub fn rule(&self, n: usize) -> Result<TransitionRule> {
        build_rule(&self.file.chain, n)
    }

    pub fn schedule(&self) -> Result<AlphaSchedule> {
        build_schedule(&self.file.token)
    }

    pub fn ci(&self, model: &GlobalModel) -> Result<CiConfig> {
        let cfg = build_ci(&self.file.ci)?;
        cfg.validate(model)?;
        Ok(cfg)
    }

    pub fn grid(&self) -> Option<CiGrid> {
        self.file.gridsearch.as_ref().map(|g| CiGrid {
            a: g.a.clone(),
            b: g.b.clone(),
            tau1: g.tau1.clone(),
            tau2: g.tau2.clone(),
            gain_mode: build_ci(&self.file.ci).map(|c| c.gain_mode).unwrap_or_default(),
        })
    }

    pub fn output_dir(&self) -> PathBuf {
        self.file.run.output.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    /// Builds the harness configuration; `output` overrides `run.output`.
    pub fn experiment(&self, output: Option<PathBuf>) -> Result<ExperimentConfig> {
        let model = self.model()?;
        let graph = self.graph(model.n())?;
        let rule = self.rule(model.n())?;
        let ci = build_ci(&self.file.ci)?;
        let cfg = ExperimentConfig {
            rule,
            schedule: self.schedule()?,
            start_node: self.file.token.start_node,
            ci,
            algorithms: self.file.run.algorithms.clone(),
            horizon: self.file.run.horizon,
            trials: self.file.run.trials,
            seed: self.seed,
            record: self.file.run.record_times(),
            output: Some(output.unwrap_or_else(|| self.output_dir())),
            echo: Some(self.echo()?),
            graph,
            model,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(Error::Config(format!("{what} must be a nonempty rectangular list of rows")));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

pub fn build_model(m: &ModelSection) -> Result<GlobalModel> {
    if m.l == 0 {
        return Err(Error::Config("model.L must be at least 1".into()));
    }
    let floor = m.floor.unwrap_or(INVERTIBILITY_FLOOR);
    let model = match m.kind {
        ModelKind::Explicit => {
            if m.agents.is_empty() {
                return Err(Error::Config("model.agents is empty".into()));
            }
            let theta = m.theta.as_ref().ok_or_else(|| Error::Config("model.theta is required".into()))?;
            let agents = m
                .agents
                .iter()
                .enumerate()
                .map(|(i, a)| {
                    let h = matrix(&a.h, &format!("model.agents[{i}].H"))?;
                    let c = matrix(&a.c, &format!("model.agents[{i}].C"))?;
                    if h.ncols() != m.l {
                        return Err(Error::Config(format!("model.agents[{i}].H has {} columns, L = {}", h.ncols(), m.l)));
                    }
                    AgentModel::new(i, h, c)
                })
                .collect::<Result<Vec<_>>>()?;
            if theta.len() != m.l {
                return Err(Error::Config(format!("model.theta has length {}, L = {}", theta.len(), m.l)));
            }
            GlobalModel::with_floor(agents, DVector::from_column_slice(theta), floor)?
        }
        ModelKind::GaussianRows => {
            if !m.agents.is_empty() {
                return Err(Error::Config("model.agents is only used with kind = \"explicit\"".into()));
            }
            let n = m.n.ok_or_else(|| Error::Config("model.n is required for gaussian_rows".into()))?;
            let base = gaussian_rows_model(
                n,
                m.l,
                m.rows_per_agent.unwrap_or(1),
                m.noise_variance.unwrap_or(1.0),
                m.seed.unwrap_or(0),
            )?;
            let theta = match &m.theta {
                Some(t) if t.len() != m.l => {
                    return Err(Error::Config(format!("model.theta has length {}, L = {}", t.len(), m.l)))
                }
                Some(t) => DVector::from_column_slice(t),
                None => base.theta().clone(),
            };
            GlobalModel::with_floor(base.agents().to_vec(), theta, floor)?
        }
    };
    Ok(model.with_noise(m.noise))
}

pub fn build_graph(g: &GraphSection, agents: usize, seed: u64) -> Result<GraphProcessSpec> {
    let n = g.n.unwrap_or(agents);
    if n != agents {
        return Err(Error::Config(format!("graph.n = {n} but the model has {agents} agents")));
    }
    if g.kind == GraphKind::Sequence {
        let path = g
            .frames_file
            .as_ref()
            .ok_or_else(|| Error::Config("graph.frames_file is required for kind = \"sequence\"".into()))?;
        let frames = read_edge_list_csv(path, n)?;
        return GraphProcessSpec::deterministic(frames, g.cycle);
    }
    let backbone = match (&g.adjacency, g.radius, g.relative_degree) {
        (Some(rows), None, None) => {
            let a = Adjacency::from_rows(rows)?;
            if a.n() != n {
                return Err(Error::Config(format!("graph.adjacency is {}x{}, expected n = {n}", a.n(), a.n())));
            }
            a
        }
        (None, Some(r), None) => {
            let mut rng = derive_stream(g.backbone_seed.unwrap_or(seed), 1, Purpose::Aux);
            generate_geometric_backbone(n, r, MAX_RETRIES, &mut rng)?.adjacency
        }
        (None, None, Some(d)) => {
            let mut rng = derive_stream(g.backbone_seed.unwrap_or(seed), 1, Purpose::Aux);
            generate_geometric_backbone_with_degree(n, d, MAX_RETRIES, &mut rng)?.adjacency
        }
        _ => {
            return Err(Error::Config(
                "give exactly one of graph.adjacency, graph.radius, graph.relative_degree".into(),
            ))
        }
    };
    match g.kind {
        GraphKind::Static => Ok(GraphProcessSpec::Static(backbone)),
        GraphKind::IidFailure => GraphProcessSpec::iid_failure(backbone, g.p_fail),
        GraphKind::Sequence => unreachable!(),
    }
}

pub fn build_rule(c: &ChainSection, n: usize) -> Result<TransitionRule> {
    match (c.rule, c.delta_self) {
        (RuleName::OutDegreeReciprocal, None) => Ok(TransitionRule::OutDegreeReciprocal),
        (RuleName::Unconstrained, None) => Ok(TransitionRule::Unconstrained),
        (RuleName::Lazy, Some(d)) => TransitionRule::lazy(d),
        (RuleName::Lazy, None) => Ok(TransitionRule::lazy_default(n)),
        (_, Some(_)) => Err(Error::Config("chain.delta_self is only used with rule = \"lazy\"".into())),
    }
}

pub fn build_schedule(t: &TokenSection) -> Result<AlphaSchedule> {
    match (t.alpha_form, t.alpha_params.as_deref()) {
        (AlphaForm::Linear, None) => Ok(AlphaSchedule::Linear),
        (AlphaForm::Power, Some([c, q])) => AlphaSchedule::power(*c, *q),
        (AlphaForm::Power, _) => Err(Error::Config("token.alpha_params must be [c, q] for alpha_form = \"power\"".into())),
        (AlphaForm::Linear, Some(_)) => Err(Error::Config("token.alpha_params is only used with alpha_form = \"power\"".into())),
    }
}

pub fn build_ci(c: &CiSection) -> Result<CiConfig> {
    let gain_mode = match (c.gain_mode, &c.gains) {
        (GainModeName::Identity, None) => GainMode::Identity,
        (GainModeName::Constant, Some(gs)) => GainMode::Constant(
            gs.iter().enumerate().map(|(i, g)| matrix(g, &format!("ci.gains[{i}]"))).collect::<Result<_>>()?,
        ),
        (GainModeName::Constant, None) => return Err(Error::Config("ci.gains is required for gain_mode = \"constant\"".into())),
        (GainModeName::Identity, Some(_)) => return Err(Error::Config("ci.gains is only used with gain_mode = \"constant\"".into())),
    };
    Ok(CiConfig { a: c.a, b: c.b, tau1: c.tau1, tau2: c.tau2, gain_mode })
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIVE: &str = r#"
[model]
L = 2
theta = [1.0, -2.0]
agents = [
  { H = [[1.0, 0.0]], C = [[1.0]] },
  { H = [[0.0, 1.0]], C = [[2.0]] },
  { H = [[1.0, 1.0]], C = [[0.5]] },
]

[graph]
kind = "iid_failure"
adjacency = [[0, 1, 0], [0, 0, 1], [1, 0, 0]]
p_fail = 0.5

[run]
horizon = 20
trials = 2
seed = 4
"#;

    fn parse_str(text: &str, overrides: &[&str], seed: Option<u64>) -> Result<LoadedConfig> {
        let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
        parse(text, "test.toml", Path::new("."), &o, seed)
    }

    #[test]
    fn parses_and_builds() {
        let c = parse_str(FIVE, &[], None).unwrap();
        assert_eq!(c.seed, 4);
        assert!(!c.seed_defaulted);
        let e = c.experiment(None).unwrap();
        assert_eq!(e.model.n(), 3);
        assert_eq!(e.algorithms, vec![Algorithm::Token, Algorithm::Central]);
        assert!(matches!(e.graph, GraphProcessSpec::IidFailure { .. }));
    }

    #[test]
    fn unknown_key_is_named_with_line() {
        let text = FIVE.replace("p_fail = 0.5", "p_fial = 0.5");
        let err = parse_str(&text, &[], None).unwrap_err().to_string();
        assert!(err.contains("p_fial"), "{err}");
        assert!(err.contains("line"), "{err}");
    }

    #[test]
    fn overrides_win_and_unknown_override_fails() {
        let c = parse_str(FIVE, &["run.trials=7", "chain.rule=lazy", "chain.delta_self=0.3"], Some(9)).unwrap();
        assert_eq!(c.file.run.trials, 7);
        assert_eq!(c.seed, 9);
        assert_eq!(c.rule(3).unwrap(), TransitionRule::Lazy { delta_self: 0.3 });
        let err = parse_str(FIVE, &["run.bogus=1"], None).unwrap_err().to_string();
        assert!(err.contains("bogus"), "{err}");
    }

    #[test]
    fn missing_seed_defaults() {
        let text = FIVE.replace("seed = 4", "");
        let c = parse_str(&text, &[], None).unwrap();
        assert!(c.seed_defaulted);
        assert_eq!(c.seed, DEFAULT_SEED);
    }

    #[test]
    fn echo_round_trips() {
        let c = parse_str(FIVE, &["run.trials=3"], None).unwrap();
        let echo = c.echo().unwrap();
        let mut doc = toml::Table::new();
        doc.insert("metadata".into(), toml::Value::Table(toml::Table::new()));
        doc.insert("config".into(), toml::Value::Table(echo));
        let text = toml::to_string(&doc).unwrap();
        let again = parse_str(&text, &[], None).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn gaussian_rows_model_builds() {
        let text = r#"
[model]
L = 5
kind = "gaussian_rows"
n = 20
seed = 3

[graph]
kind = "iid_failure"
relative_degree = 0.12
p_fail = 0.5
"#;
        let c = parse_str(text, &[], None).unwrap();
        let e = c.experiment(None).unwrap();
        assert_eq!((e.model.n(), e.model.dim()), (20, 5));
        assert_eq!(e.model.theta()[4], 5.0);
    }

    #[test]
    fn builder_errors() {
        assert!(build_rule(&ChainSection { rule: RuleName::OutDegreeReciprocal, delta_self: Some(0.2) }, 3).is_err());
        assert!(build_schedule(&TokenSection { alpha_form: AlphaForm::Power, alpha_params: None, start_node: 0 }).is_err());
        assert!(build_ci(&CiSection { gain_mode: GainModeName::Constant, ..CiSection::default() }).is_err());
        let text = FIVE.replace("adjacency = [[0, 1, 0], [0, 0, 1], [1, 0, 0]]", "radius = 0.5\nadjacency = [[0]]");
        assert!(parse_str(&text, &[], None).unwrap().experiment(None).is_err());
    }
}
