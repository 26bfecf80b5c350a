//! `roamtok`: run roaming-token estimation experiments from a TOML config.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use roamtok::ci::{grid_search, GridSearchResult};
use roamtok::config::{self, LoadedConfig, CONFIG_KEYS};
use roamtok::graph::{
    generate_geometric_backbone, generate_geometric_backbone_with_degree, relative_degree, write_edge_list_csv, MAX_RETRIES,
};
use roamtok::harness::verify::{
    check_irreducibility, check_window_connectivity, check_state_identity, check_support, tail_check_result, verify_tail_bounds,
    TailCheckConfig, VerifyReport,
};
use roamtok::harness::{run_experiment, write_comparison_csv, write_metrics_csv, Algorithm, MetricSeries};
use roamtok::rng::{derive_stream, Purpose};
use roamtok::Error;

const EXIT_CONFIG: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_VERIFY: u8 = 3;

#[derive(Parser)]
#[command(name = "roamtok", version, about = "Roaming-token distributed estimation experiments")]
#[command(after_long_help = CONFIG_KEYS)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the token estimator (and any other configured algorithms); write
    /// metrics.csv, trace.csv and metadata.toml.
    #[command(after_long_help = CONFIG_KEYS)]
    Simulate(RunArgs),
    /// Paired token vs consensus+innovations run; writes compare.csv.
    #[command(after_long_help = CONFIG_KEYS)]
    Compare {
        #[command(flatten)]
        run: RunArgs,
        /// Tune the baseline over the [gridsearch] lists before comparing.
        #[arg(long)]
        gridsearch: bool,
    },
    /// Check tail bounds, averaged-chain irreducibility, window connectivity,
    /// the token state identity and the transition support.
    #[command(after_long_help = CONFIG_KEYS)]
    Verify(RunArgs),
    /// Grid search of the consensus+innovations gains; writes gridsearch.csv
    /// and the best curve.
    #[command(after_long_help = CONFIG_KEYS)]
    Gridsearch(RunArgs),
    /// Generate a strongly connected geometric backbone.
    GenGraph(GenGraphArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML configuration file (a metadata.toml from an earlier run works too).
    config: PathBuf,
    /// Override a config key, e.g. `--set run.trials=50`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Master seed; wins over run.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; wins over run.output.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenGraphArgs {
    /// Number of nodes.
    #[arg(long)]
    n: usize,
    /// Connection radius in the unit square.
    #[arg(long, conflicts_with = "degree", required_unless_present = "degree")]
    radius: Option<f64>,
    /// Target relative degree, edges / (n(n-1)).
    #[arg(long)]
    degree: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file: `.csv` writes an edge list (t,from,to), anything else a
    /// TOML [graph] section.
    #[arg(long, short)]
    out: PathBuf,
}

struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_)
            | Error::InvalidModel(_)
            | Error::SingularModel { .. }
            | Error::InvalidGraph(_)
            | Error::UnsupportedProcess => EXIT_CONFIG,
            _ => EXIT_RUNTIME,
        };
        Failure { code, error: e.into() }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Failure { code: EXIT_RUNTIME, error }
    }
}

type Outcome = Result<u8, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_CONFIG) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => simulate(&a),
        Command::Compare { run, gridsearch } => compare(&run, gridsearch),
        Command::Verify(a) => verify(&a),
        Command::Gridsearch(a) => gridsearch(&a),
        Command::GenGraph(a) => gen_graph(&a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn load(args: &RunArgs) -> Result<LoadedConfig, Failure> {
    let cfg = config::load(&args.config, &args.overrides, args.seed).map_err(|e| Failure {
        code: EXIT_CONFIG,
        error: e.into(),
    })?;
    if cfg.seed_defaulted {
        eprintln!("warning: no seed given (run.seed or --seed); using {}", config::DEFAULT_SEED);
    }
    Ok(cfg)
}

fn out_dir(args: &RunArgs, cfg: &LoadedConfig) -> PathBuf {
    args.out.clone().unwrap_or_else(|| cfg.output_dir())
}

fn print_summary(metrics: &[MetricSeries]) {
    for m in metrics {
        if let (Some(t), Some(v)) = (m.times.last(), m.values.last()) {
            println!("{:<26} t={t:<8} {v:.6e} (+/- {:.2e}, {} trials)", m.name, m.half_widths.last().unwrap(), m.trials);
        }
    }
}

fn simulate(args: &RunArgs) -> Outcome {
    let cfg = load(args)?;
    let exp = cfg.experiment(Some(out_dir(args, &cfg)))?;
    let bundle = run_experiment(&exp)?;
    print_summary(&bundle.metrics);
    println!("wrote {}", exp.output.as_ref().unwrap().display());
    Ok(0)
}

fn run_grid(cfg: &LoadedConfig) -> Result<GridSearchResult, Failure> {
    let grid = cfg.grid().ok_or_else(|| Failure::from(Error::Config("missing [gridsearch] section".into())))?;
    let model = cfg.model()?;
    let spec = cfg.graph(model.n())?;
    let trials = cfg.file.gridsearch.as_ref().and_then(|g| g.trials).unwrap_or(cfg.file.run.trials);
    // Tuning trials use their own seed so they are disjoint from the
    // evaluation trials.
    let seed = cfg.seed.wrapping_add(1);
    Ok(grid_search(&model, &spec, &grid, trials, cfg.file.run.horizon, &cfg.file.run.record_times(), seed)?)
}

fn write_grid_csv(path: &Path, result: &GridSearchResult) -> anyhow::Result<()> {
    let mut text = String::from("a,b,tau1,tau2,rmse_at_horizon\n");
    for (c, v) in &result.evaluated {
        text.push_str(&format!("{},{},{},{},{}\n", c.a, c.b, c.tau1, c.tau2, v));
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn compare(args: &RunArgs, tune: bool) -> Outcome {
    let cfg = load(args)?;
    let mut exp = cfg.experiment(Some(out_dir(args, &cfg)))?;
    if !exp.runs(Algorithm::Token) || !exp.runs(Algorithm::Ci) {
        return Err(Error::Config("compare needs run.algorithms to include \"token\" and \"ci\"".into()).into());
    }
    let dir = exp.output.clone().unwrap();
    let tuned = if tune { Some(run_grid(&cfg)?) } else { None };
    if let Some(t) = &tuned {
        println!("grid search best: a={} b={} tau1={} tau2={} (r-MSE {:.4e})", t.best.a, t.best.b, t.best.tau1, t.best.tau2, t.best_rmse);
        exp.ci = t.best.clone();
        if let Some(echo) = exp.echo.as_mut() {
            let ci = echo.entry("ci").or_insert_with(|| toml::Value::Table(Default::default()));
            if let Some(ci) = ci.as_table_mut() {
                ci.insert("a".into(), t.best.a.into());
                ci.insert("b".into(), t.best.b.into());
                ci.insert("tau1".into(), t.best.tau1.into());
                ci.insert("tau2".into(), t.best.tau2.into());
            }
        }
    }
    let bundle = run_experiment(&exp)?;
    let names = ["rmse_token", "rmse_ci", "rmse_last_seen", "rmse_central"];
    let series: Vec<&MetricSeries> = names.iter().filter_map(|n| bundle.metric(n)).collect();
    write_comparison_csv(&dir.join("compare.csv"), &series)?;
    if let Some(t) = &tuned {
        write_grid_csv(&dir.join("gridsearch.csv"), t)?;
    }
    print_summary(&bundle.metrics);
    println!("wrote {}", dir.display());
    Ok(0)
}

fn gridsearch(args: &RunArgs) -> Outcome {
    let cfg = load(args)?;
    let dir = out_dir(args, &cfg);
    let result = run_grid(&cfg)?;
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    write_grid_csv(&dir.join("gridsearch.csv"), &result)?;
    write_metrics_csv(&dir.join("metrics.csv"), std::slice::from_ref(&result.curve))?;
    println!(
        "best: a={} b={} tau1={} tau2={} r-MSE at horizon {:.6e} ({} points)",
        result.best.a,
        result.best.b,
        result.best.tau1,
        result.best.tau2,
        result.best_rmse,
        result.evaluated.len()
    );
    println!("wrote {}", dir.display());
    Ok(0)
}

fn verify(args: &RunArgs) -> Outcome {
    let cfg = load(args)?;
    let dir = out_dir(args, &cfg);
    let model = cfg.model()?;
    let spec = cfg.graph(model.n())?;
    let rule = cfg.rule(model.n())?;
    let schedule = cfg.schedule()?;
    let v = &cfg.file.verify;
    let start = cfg.file.token.start_node;
    if start >= model.n() {
        return Err(Error::Config(format!("token.start_node {start} is out of range")).into());
    }
    let window = cfg.file.graph.window;
    let mut report = VerifyReport::default();
    report.checks.push(check_support(&spec, &rule, v.support_draws, cfg.seed)?);
    report.checks.push(check_irreducibility(&spec, &rule, window)?);
    // The remaining checks move the token, which an off-edge rule cannot do.
    if report.checks[0].passed {
        let tail = verify_tail_bounds(&TailCheckConfig {
            spec: &spec,
            rule,
            start,
            trajectories: v.trajectories,
            horizon: v.horizon,
            seed: cfg.seed,
            window,
        })?;
        report.checks.push(tail_check_result(tail.as_ref()));
        report.tail = tail;
        report.checks.push(check_window_connectivity(cfg.seed, v.window_samples));
        report.checks.push(check_state_identity(
            &model,
            &spec,
            &rule,
            &schedule,
            start,
            v.episodes,
            v.episode_horizon,
            cfg.seed,
        )?);
    }
    for c in &report.checks {
        println!("{c}");
    }
    if let Some(tail) = &report.tail {
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join("tail.csv");
        tail.write_csv(&path)?;
        println!("wrote {}", path.display());
    }
    if report.passed() {
        println!("PASS");
        Ok(0)
    } else {
        println!("FAIL");
        Ok(EXIT_VERIFY)
    }
}

fn gen_graph(args: &GenGraphArgs) -> Outcome {
    let mut rng = derive_stream(args.seed, 1, Purpose::Aux);
    let g = match (args.radius, args.degree) {
        (Some(r), _) => generate_geometric_backbone(args.n, r, MAX_RETRIES, &mut rng),
        (None, Some(d)) => generate_geometric_backbone_with_degree(args.n, d, MAX_RETRIES, &mut rng),
        (None, None) => unreachable!("clap requires one of --radius or --degree"),
    }?;
    if args.out.extension().is_some_and(|e| e == "csv") {
        write_edge_list_csv(&args.out, std::slice::from_ref(&g.adjacency))?;
    } else {
        let rows: Vec<String> = g
            .adjacency
            .to_rows()
            .iter()
            .map(|r| format!("  [{}],", r.iter().map(u8::to_string).collect::<Vec<_>>().join(", ")))
            .collect();
        let text = format!(
            "# n = {}, radius = {}, relative degree = {}, seed = {}\n[graph]\nkind = \"static\"\nadjacency = [\n{}\n]\n",
            args.n,
            g.radius,
            relative_degree(&g.adjacency),
            args.seed,
            rows.join("\n")
        );
        fs::write(&args.out, text).with_context(|| format!("writing {}", args.out.display()))?;
    }
    println!(
        "n={} radius={:.4} relative_degree={:.4} attempts={} -> {}",
        args.n,
        g.radius,
        relative_degree(&g.adjacency),
        g.attempts,
        args.out.display()
    );
    Ok(0)
}
