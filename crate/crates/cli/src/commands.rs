//! Subcommand definitions and dispatch.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error (file/format/grid
//! validation), 3 algorithm failure (scenario, simulation, or learning).

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use gridsleuth_core::learn::{compute_bounds, Thresholds};
use gridsleuth_core::sim::{
    add_measurement_noise, lcpf_solve, random_candidate_superset, random_radial_topology,
    random_stats_from_loads, rng_for_seed, sample_injections, ExperimentConfig, HiddenPolicy,
};
use nalgebra::DVector;
use rand::Rng;

use crate::campaign::{
    build_trial, campaign_to_csv, learn_model, plot_script, run_campaign, score, summary_table,
    AlgorithmChoice, CampaignSpec, TableSource,
};
use crate::error::CliError;
use crate::formats::{emit_grid_json, grid_file_from_parts, parse_grid_json, GridBundle};
use crate::matpower::parse_matpower_case;
use crate::samples::samples_to_csv;

const LONG_ABOUT: &str = "\
Learn radial power-grid topology and hidden-node injection statistics from \
nodal voltage second moments, and run the simulation campaigns that \
characterize the estimators.

All numeric I/O — impedances, loads, voltage deviations — is per-unit on the \
grid file's implicit base. Commands that take --seed fall back to the \
GRIDSLEUTH_SEED environment variable, then to 0; campaigns derive one \
independent RNG substream per trial, so outputs are bit-reproducible for a \
fixed configuration and build. Set RUST_LOG=gridsleuth_core=trace to watch \
the hidden-node learners' repair walk.";

#[derive(Parser, Debug)]
#[command(name = "gridsleuth", version, about = "Grid topology and statistics learning toolkit", long_about = LONG_ABOUT)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a random radial grid file (JSON) with base loads and
    /// optional extra candidate edges.
    GenGrid(GenGridArgs),
    /// Simulate voltage samples for a grid and write them as CSV.
    Simulate(SimulateArgs),
    /// Run one learning experiment on a grid and report the result as JSON.
    Learn(LearnArgs),
    /// Run a Monte-Carlo campaign over a sample-count sweep and write the
    /// per-trial CSV.
    Campaign(CampaignArgs),
    /// Report the deviation-distance separation constants and sample-count
    /// estimate for a grid.
    Bounds(BoundsArgs),
    /// Convert a Matpower case file (matrix subset) to the grid JSON format.
    Convert(ConvertArgs),
}

/// Scenario knobs shared by the experiment commands; names mirror the
/// simulator configuration fields.
#[derive(Args, Debug, Clone)]
struct ConfigArgs {
    /// Master RNG seed (fallback: $GRIDSLEUTH_SEED, then 0).
    #[arg(long)]
    seed: Option<u64>,

    /// Injection variance per node = U[0.5, 1.5] × this × |base load|.
    #[arg(long, default_value_t = 1e-3)]
    covariance_scale: f64,

    /// Measurement noise std as a fraction of the grid-mean sample std,
    /// one fixed sensor level per measurement type (0 = noiseless;
    /// ignored with --analytic).
    #[arg(long, default_value_t = 0.0)]
    noise_variance_ratio: f64,

    /// Random non-edges added to the candidate set per scenario.
    #[arg(long, default_value_t = 0)]
    n_extra_candidate_edges: usize,

    /// Hidden-node placement: `none`, `three-hop:K` (pairwise > 2 hops
    /// apart), or `two-hop:K` (pairwise non-adjacent).
    #[arg(long, default_value = "none", value_parser = parse_hidden_policy)]
    hidden_policy: HiddenPolicy,

    /// Parent-child verification threshold (relative).
    #[arg(long, default_value_t = 0.1)]
    tau1: f64,

    /// Hidden-parent search threshold (relative).
    #[arg(long, default_value_t = 0.1)]
    tau2: f64,

    /// Triplet-clustering zero threshold (relative).
    #[arg(long, default_value_t = 0.1)]
    tau3: f64,
}

impl ConfigArgs {
    fn experiment_config(
        &self,
        n_samples: usize,
        trials: usize,
    ) -> Result<ExperimentConfig, CliError> {
        if !(self.covariance_scale > 0.0 && self.covariance_scale.is_finite()) {
            return Err(CliError::Usage("--covariance-scale must be positive".into()));
        }
        if !(self.noise_variance_ratio >= 0.0 && self.noise_variance_ratio.is_finite()) {
            return Err(CliError::Usage("--noise-variance-ratio must be non-negative".into()));
        }
        for (tau, name) in [(self.tau1, "tau1"), (self.tau2, "tau2"), (self.tau3, "tau3")] {
            if !(tau > 0.0 && tau.is_finite()) {
                return Err(CliError::Usage(format!("--{name} must be positive")));
            }
        }
        Ok(ExperimentConfig {
            seed: resolve_seed(self.seed)?,
            n_samples,
            covariance_scale: self.covariance_scale,
            noise_variance_ratio: self.noise_variance_ratio,
            n_extra_candidate_edges: self.n_extra_candidate_edges,
            hidden_policy: self.hidden_policy,
            thresholds: Thresholds { tau1: self.tau1, tau2: self.tau2, tau3: self.tau3 },
            trials,
        })
    }
}

#[derive(Args, Debug)]
struct GenGridArgs {
    /// Total node count including the substation (node 0).
    #[arg(long)]
    nodes: usize,

    /// Master RNG seed (fallback: $GRIDSLEUTH_SEED, then 0).
    #[arg(long)]
    seed: Option<u64>,

    /// Line resistance range, per-unit.
    #[arg(long, default_value_t = 0.02)]
    r_min: f64,
    #[arg(long, default_value_t = 0.2)]
    r_max: f64,

    /// Line reactance range, per-unit.
    #[arg(long, default_value_t = 0.02)]
    x_min: f64,
    #[arg(long, default_value_t = 0.16)]
    x_max: f64,

    /// Active base-load range, per-unit.
    #[arg(long, default_value_t = 0.006)]
    p_min: f64,
    #[arg(long, default_value_t = 0.03)]
    p_max: f64,

    /// Reactive base load as a fraction of the active load.
    #[arg(long, default_value_t = 0.6)]
    q_ratio: f64,

    /// Extra random candidate (non-operational) edges baked into the file.
    #[arg(long, default_value_t = 0)]
    n_extra_candidate_edges: usize,

    /// Output path (stdout if omitted).
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Grid file (JSON).
    #[arg(long)]
    grid: PathBuf,

    /// Number of voltage samples to draw.
    #[arg(long, default_value_t = 1000)]
    n_samples: usize,

    /// Master RNG seed (fallback: $GRIDSLEUTH_SEED, then 0).
    #[arg(long)]
    seed: Option<u64>,

    /// Injection variance per node = U[0.5, 1.5] × this × |base load|.
    #[arg(long, default_value_t = 1e-3)]
    covariance_scale: f64,

    /// Measurement noise std as a fraction of the grid-mean sample std,
    /// one fixed sensor level per measurement type (0 = noiseless).
    #[arg(long, default_value_t = 0.0)]
    noise_variance_ratio: f64,

    /// Output path (stdout if omitted).
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct LearnArgs {
    /// Grid file (JSON).
    #[arg(long)]
    grid: PathBuf,

    /// Which learner to run.
    #[arg(long, value_enum)]
    algorithm: AlgorithmChoice,

    /// Sample count for the empirical moment table (ignored with --analytic).
    #[arg(long, default_value_t = 1000)]
    n_samples: usize,

    /// Use exact analytic moments instead of simulated samples.
    #[arg(long)]
    analytic: bool,

    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args, Debug)]
struct CampaignArgs {
    /// Grid file (JSON).
    #[arg(long)]
    grid: PathBuf,

    /// Which learner to run.
    #[arg(long, value_enum)]
    algorithm: AlgorithmChoice,

    /// Comma-separated sample counts to sweep (one CSV block per count).
    #[arg(long, value_delimiter = ',', required = true)]
    n_samples: Vec<usize>,

    /// Trials per sample-count point.
    #[arg(long, default_value_t = 100)]
    trials: usize,

    /// Worker threads for the trial pool (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,

    #[command(flatten)]
    config: ConfigArgs,

    /// CSV output path.
    #[arg(long, short)]
    output: PathBuf,

    /// Also write a matplotlib script that re-plots the CSV.
    #[arg(long)]
    plot_script: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BoundsArgs {
    /// Grid file (JSON).
    #[arg(long)]
    grid: PathBuf,

    /// Master RNG seed for the injection statistics (fallback:
    /// $GRIDSLEUTH_SEED, then 0).
    #[arg(long)]
    seed: Option<u64>,

    /// Injection variance per node = U[0.5, 1.5] × this × |base load|.
    #[arg(long, default_value_t = 1e-3)]
    covariance_scale: f64,

    /// Failure probability budget for the sample-count estimate.
    #[arg(long, default_value_t = 0.01)]
    eta: f64,

    /// Concentration constant in the sample-count estimate (free parameter;
    /// only the scaling in grid size and depth is meaningful).
    #[arg(long, default_value_t = 1.0)]
    constant: f64,
}

#[derive(Args, Debug)]
struct ConvertArgs {
    /// Matpower .m case file (plain-matrix subset).
    #[arg(long)]
    input: PathBuf,

    /// Output path for the grid JSON (stdout if omitted).
    #[arg(long, short)]
    output: Option<PathBuf>,
}

/// Parse flags and execute; returns the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            use clap::error::ErrorKind;
            let _ = err.print();
            return if matches!(err.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                0
            } else {
                1
            };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            err.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::GenGrid(args) => gen_grid(args),
        Command::Simulate(args) => simulate(args),
        Command::Learn(args) => learn(args),
        Command::Campaign(args) => campaign(args),
        Command::Bounds(args) => bounds(args),
        Command::Convert(args) => convert(args),
    }
}

fn resolve_seed(flag: Option<u64>) -> Result<u64, CliError> {
    if let Some(seed) = flag {
        return Ok(seed);
    }
    match std::env::var("GRIDSLEUTH_SEED") {
        Ok(text) => text.trim().parse().map_err(|_| {
            CliError::Usage(format!("GRIDSLEUTH_SEED must be an unsigned integer, found {text:?}"))
        }),
        Err(std::env::VarError::NotPresent) => Ok(0),
        Err(err) => Err(CliError::Usage(format!("GRIDSLEUTH_SEED: {err}"))),
    }
}

fn parse_hidden_policy(text: &str) -> Result<HiddenPolicy, String> {
    let t = text.trim().to_ascii_lowercase();
    if t == "none" {
        return Ok(HiddenPolicy::None);
    }
    let (name, count) = t
        .split_once(':')
        .ok_or_else(|| "expected `none`, `three-hop:K`, or `two-hop:K`".to_string())?;
    let k: usize = count.parse().map_err(|_| format!("bad hidden count {count:?}"))?;
    if k == 0 {
        return Err("hidden count must be positive".into());
    }
    match name {
        "three-hop" => Ok(HiddenPolicy::ThreeHop(k)),
        "two-hop" => Ok(HiddenPolicy::TwoHop(k)),
        other => Err(format!("unknown hidden policy {other:?}")),
    }
}

fn load_bundle(path: &std::path::Path) -> Result<GridBundle, CliError> {
    let bytes = CliError::read_file(path)?;
    let (_, bundle) = parse_grid_json(&bytes, path)?;
    Ok(bundle)
}

/// Write to stdout, treating a closed pipe (e.g. `| head`) as a clean stop.
fn print_stdout(contents: &str) -> Result<(), CliError> {
    use std::io::Write;
    match std::io::stdout().write_all(contents.as_bytes()) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => std::process::exit(0),
        Err(source) => Err(CliError::Io { path: "<stdout>".into(), source }),
    }
}

fn emit_output(path: &Option<PathBuf>, contents: &str) -> Result<(), CliError> {
    match path {
        Some(p) => CliError::write_file(p, contents),
        None => print_stdout(contents),
    }
}

fn gen_grid(args: GenGridArgs) -> Result<(), CliError> {
    if args.nodes < 2 {
        return Err(CliError::Usage("--nodes must be at least 2".into()));
    }
    for (lo, hi, name) in [
        (args.r_min, args.r_max, "r"),
        (args.x_min, args.x_max, "x"),
        (args.p_min, args.p_max, "p"),
    ] {
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(CliError::Usage(format!(
                "--{name}-min/--{name}-max must satisfy 0 < min <= max"
            )));
        }
    }
    if !(args.q_ratio > 0.0 && args.q_ratio.is_finite()) {
        return Err(CliError::Usage("--q-ratio must be positive".into()));
    }

    let mut rng = rng_for_seed(resolve_seed(args.seed)?);
    let topo =
        random_radial_topology(args.nodes, (args.r_min, args.r_max), (args.x_min, args.x_max), &mut rng)?;
    let base_p =
        DVector::from_fn(args.nodes - 1, |_, _| rng.gen_range(args.p_min..=args.p_max));
    let base_q = base_p.map(|p| p * args.q_ratio);
    let candidates = random_candidate_superset(&topo, args.n_extra_candidate_edges, &mut rng);

    let file = grid_file_from_parts(&topo, &candidates, &base_p, &base_q);
    emit_output(&args.output, &emit_grid_json(&file))
}

fn simulate(args: SimulateArgs) -> Result<(), CliError> {
    if args.n_samples == 0 {
        return Err(CliError::Usage("--n-samples must be positive".into()));
    }
    if !(args.covariance_scale > 0.0 && args.covariance_scale.is_finite()) {
        return Err(CliError::Usage("--covariance-scale must be positive".into()));
    }
    if !(args.noise_variance_ratio >= 0.0 && args.noise_variance_ratio.is_finite()) {
        return Err(CliError::Usage("--noise-variance-ratio must be non-negative".into()));
    }
    let bundle = load_bundle(&args.grid)?;
    let mut rng = rng_for_seed(resolve_seed(args.seed)?);
    let stats =
        random_stats_from_loads(&bundle.base_p, &bundle.base_q, args.covariance_scale, &mut rng)?;
    let inj = sample_injections(&stats, args.n_samples, &mut rng);
    let mut volt = lcpf_solve(&bundle.topology, &inj)?;
    if args.noise_variance_ratio > 0.0 {
        add_measurement_noise(&mut volt, args.noise_variance_ratio, &mut rng);
    }
    emit_output(&args.output, &samples_to_csv(&volt))
}

fn learn(args: LearnArgs) -> Result<(), CliError> {
    if !args.analytic && args.n_samples < 2 {
        return Err(CliError::Usage("--n-samples must be at least 2".into()));
    }
    let bundle = load_bundle(&args.grid)?;
    let config = args.config.experiment_config(args.n_samples, 1)?;
    let source = if args.analytic {
        TableSource::Analytic
    } else {
        TableSource::Sampled { n_samples: args.n_samples }
    };
    let mut rng = rng_for_seed(config.seed);
    let (scenario, table) = build_trial(&bundle, &config, source, &mut rng)?;
    let model = learn_model(args.algorithm, &table, &scenario, &config.thresholds)?;
    let (topo_err, stats) = score(&model, &scenario);

    let edges: Vec<serde_json::Value> = model
        .edges
        .iter()
        .map(|&(a, b, z)| {
            let (u, v) = (a.0.min(b.0), a.0.max(b.0));
            serde_json::json!({"u": u, "v": v, "r": z.r, "x": z.x})
        })
        .collect();
    let hidden_stats: serde_json::Map<String, serde_json::Value> = model
        .hidden_stats
        .iter()
        .map(|(node, m)| {
            (
                node.to_string(),
                serde_json::json!({"var_p": m.var_p, "var_q": m.var_q, "cov_pq": m.cov_pq}),
            )
        })
        .collect();
    let mut metrics = serde_json::json!({ "topology_rel_error": topo_err });
    if let Some(s) = stats {
        metrics["mean_rel_error_var_p"] = s.var_p.into();
        metrics["mean_rel_error_var_q"] = s.var_q.into();
        metrics["mean_rel_error_cov_pq"] = s.cov_pq.into();
    }
    let report = serde_json::json!({
        "algorithm": algorithm_name(args.algorithm),
        "seed": config.seed,
        "table": if args.analytic { "analytic" } else { "sampled" },
        "n_samples": if args.analytic { serde_json::Value::Null } else { args.n_samples.into() },
        "hidden": scenario.hidden.iter().map(|h| h.0).collect::<Vec<_>>(),
        "edges": edges,
        "hidden_stats": hidden_stats,
        "unresolved": model
            .unresolved
            .iter()
            .map(|group| group.iter().map(|n| n.0).collect::<Vec<_>>())
            .collect::<Vec<_>>(),
        "metrics": metrics,
    });
    let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
    text.push('\n');
    print_stdout(&text)
}

fn algorithm_name(a: AlgorithmChoice) -> &'static str {
    match a {
        AlgorithmChoice::Alg1 => "alg1",
        AlgorithmChoice::Alg2 => "alg2",
        AlgorithmChoice::Alg3 => "alg3",
    }
}

fn campaign(args: CampaignArgs) -> Result<(), CliError> {
    if args.n_samples.iter().any(|&n| n < 2) {
        return Err(CliError::Usage("every --n-samples point must be at least 2".into()));
    }
    let bundle = load_bundle(&args.grid)?;
    let spec = CampaignSpec {
        config: args.config.experiment_config(0, args.trials)?,
        algorithm: args.algorithm,
        sweep: args.n_samples.clone(),
        jobs: args.jobs,
    };
    let result = run_campaign(&bundle, &spec)?;
    CliError::write_file(&args.output, &campaign_to_csv(&result))?;
    if let Some(script) = &args.plot_script {
        let csv_name = args
            .output
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| args.output.display().to_string());
        CliError::write_file(script, &plot_script(&csv_name))?;
    }
    print_stdout(&summary_table(&result))
}

fn bounds(args: BoundsArgs) -> Result<(), CliError> {
    if !(args.eta > 0.0 && args.eta < 1.0) {
        return Err(CliError::Usage("--eta must lie in (0, 1)".into()));
    }
    if !(args.constant > 0.0 && args.constant.is_finite()) {
        return Err(CliError::Usage("--constant must be positive".into()));
    }
    if !(args.covariance_scale > 0.0 && args.covariance_scale.is_finite()) {
        return Err(CliError::Usage("--covariance-scale must be positive".into()));
    }
    let bundle = load_bundle(&args.grid)?;
    let mut rng = rng_for_seed(resolve_seed(args.seed)?);
    let stats =
        random_stats_from_loads(&bundle.base_p, &bundle.base_q, args.covariance_scale, &mut rng)?;
    let b = compute_bounds(&bundle.topology, &stats)?;
    let report = serde_json::json!({
        "k1": b.k1,
        "k2": b.k2,
        "omega_v_max_bound": b.omega_v_max_bound,
        "depth": b.depth,
        "num_nodes": b.num_nodes,
        "eta": args.eta,
        "constant": args.constant,
        "required_samples": b.required_samples(args.eta, args.constant),
    });
    let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
    text.push('\n');
    print_stdout(&text)
}

fn convert(args: ConvertArgs) -> Result<(), CliError> {
    let bytes = CliError::read_file(&args.input)?;
    let text = String::from_utf8(bytes).map_err(|e| CliError::Parse {
        path: args.input.clone(),
        line: 0,
        column: 0,
        message: format!("not UTF-8: {e}"),
    })?;
    let (file, _) = parse_matpower_case(&text, &args.input)?;
    emit_output(&args.output, &emit_grid_json(&file))
}
