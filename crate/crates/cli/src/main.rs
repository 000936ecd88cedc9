//! Command-line front end: simulation, ensembles, fitting, the promotion
//! boundary, synthetic data generation, and the statistics report.
//!
//! Every subcommand is deterministic given its flags and seed; rerunning
//! produces byte-identical outputs. Tables go to --out (default stdout),
//! human-readable summaries and the effective configuration go to stderr.
//!
//! Exit codes: 0 success, 2 validation error, 1 solver/runtime failure.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use votedyn::fitting::{self, FitResult, ObservationSeries};
use votedyn::io::{self, RunConfig, CONFIG_ENV};
use votedyn::model::StoryParams;
use votedyn::montecarlo::{
    self, FanCountDistribution, InterestDistribution, McControls, SynthControls,
};
use votedyn::ode::{solve_story, SolveControls, SolveError};
use votedyn::stats;

#[derive(Parser)]
#[command(
    name = "votedyn",
    about = "Simulate and fit vote accumulation on a social news site",
    version
)]
struct Cli {
    /// Config file with key = value overrides (default: $VOTEDYN_CONFIG).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Write the effective configuration to this file.
    #[arg(long, global = true)]
    dump_config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the mean-field trajectory for one story.
    Simulate(SimulateArgs),
    /// Run a seeded Monte Carlo ensemble for one story.
    Mc(McArgs),
    /// Fit interest per story from an observation file.
    Fit(FitArgs),
    /// Minimal promoting interest as a function of submitter fans.
    Boundary(BoundaryArgs),
    /// Generate a synthetic observation dataset with known ground truth.
    Synth(SynthArgs),
    /// Lognormal fit, goodness of fit, and correlation report.
    Stats(StatsArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Story interest in [0, 1].
    #[arg(long)]
    r: f64,
    /// Submitter fan count.
    #[arg(long)]
    s: u64,
    /// Integration horizon in minutes.
    #[arg(long)]
    t_end: Option<f64>,
    /// Story id used in the output table.
    #[arg(long, default_value = "story")]
    id: String,
    /// Trajectory table destination (default stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the trajectory resampled at the observation cadence.
    #[arg(long)]
    obs_out: Option<PathBuf>,
}

#[derive(Args)]
struct McArgs {
    #[arg(long)]
    r: f64,
    #[arg(long)]
    s: u64,
    /// Number of independent runs.
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    t_end: Option<f64>,
    /// Spacing of the recording grid in minutes.
    #[arg(long)]
    grid_step: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    /// Observation table (story_id,t_minutes,votes).
    #[arg(long)]
    input: PathBuf,
    /// Table mapping story_id to s_fans (the synth truth file works).
    #[arg(long)]
    fans: Option<PathBuf>,
    /// Fan count for stories not covered by --fans.
    #[arg(long)]
    default_s: Option<u64>,
    /// Fit on the first K observations only.
    #[arg(long)]
    early: Option<usize>,
    /// Prediction horizon in minutes.
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BoundaryArgs {
    #[arg(long, default_value_t = 0)]
    s_min: u64,
    #[arg(long, default_value_t = 320)]
    s_max: u64,
    /// Number of fan-count grid points.
    #[arg(long, default_value_t = 9)]
    steps: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// Number of stories.
    #[arg(long)]
    n: usize,
    /// Mean of log interest.
    #[arg(long, default_value_t = -1.67)]
    r_mu: f64,
    /// Standard deviation of log interest.
    #[arg(long, default_value_t = 0.47)]
    r_sigma: f64,
    /// Use this exact interest for every story instead of sampling.
    #[arg(long, conflicts_with_all = ["r_mu", "r_sigma"])]
    r_fixed: Option<f64>,
    /// Comma-separated fan counts to draw from.
    #[arg(long, value_delimiter = ',', default_value = "5,10,20,40,80,160")]
    s_set: Vec<u64>,
    /// Use this exact fan count for every story.
    #[arg(long, conflicts_with = "s_set")]
    s_fixed: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    t_end: Option<f64>,
    /// Observation cadence in minutes.
    #[arg(long)]
    cadence: Option<f64>,
    /// Observation table destination.
    #[arg(long)]
    out: PathBuf,
    /// Ground-truth table destination.
    #[arg(long)]
    truth: PathBuf,
}

#[derive(Args)]
struct StatsArgs {
    /// Table with an r_hat, r_true or r column; s_fans enables the
    /// fans-interest correlation.
    #[arg(long)]
    input: PathBuf,
    /// Parametric bootstrap replicates for the KS test.
    #[arg(long, default_value_t = 1000)]
    bootstrap: usize,
    /// Permutations for the correlation test.
    #[arg(long, default_value_t = 10000)]
    perm: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

enum AppError {
    /// Bad flags, parameters, or input files.
    Validation(String),
    /// Solver or output failure at runtime.
    Runtime(String),
}

impl AppError {
    fn code(&self) -> u8 {
        match self {
            AppError::Validation(_) => 2,
            AppError::Runtime(_) => 1,
        }
    }
    fn message(&self) -> &str {
        match self {
            AppError::Validation(m) | AppError::Runtime(m) => m,
        }
    }
}

fn validation(e: impl std::fmt::Display) -> AppError {
    AppError::Validation(e.to_string())
}

fn solve_error(e: SolveError) -> AppError {
    match e {
        SolveError::StepSizeUnderflow { .. } => AppError::Runtime(e.to_string()),
        other => AppError::Validation(other.to_string()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, AppError> {
    let mut config = RunConfig::default();
    let path = match path {
        Some(p) => Some(p.to_path_buf()),
        None => std::env::var_os(CONFIG_ENV).map(PathBuf::from),
    };
    if let Some(p) = path {
        let text = fs::read_to_string(&p)
            .map_err(|e| validation(format!("cannot read config {}: {e}", p.display())))?;
        config.apply(&text).map_err(validation)?;
    }
    Ok(config)
}

/// Resolve an output path against the configured out_dir.
fn resolve_out(config: &RunConfig, path: &Path) -> PathBuf {
    match &config.out_dir {
        Some(dir) if path.is_relative() => Path::new(dir).join(path),
        _ => path.to_path_buf(),
    }
}

fn emit(config: &RunConfig, out: Option<&Path>, table: &str) -> Result<(), AppError> {
    match out {
        Some(path) => {
            let path = resolve_out(config, path);
            fs::write(&path, table).map_err(|e| {
                AppError::Runtime(format!("cannot write {}: {e}", path.display()))
            })
        }
        None => {
            print!("{table}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<(), AppError> {
    let config = load_config(cli.config.as_deref())?;
    if let Some(path) = &cli.dump_config {
        fs::write(path, config.dump())
            .map_err(|e| AppError::Runtime(format!("cannot write {}: {e}", path.display())))?;
    }
    eprint!("{}", config.dump());
    match cli.command {
        Command::Simulate(args) => cmd_simulate(&config, args),
        Command::Mc(args) => cmd_mc(&config, args),
        Command::Fit(args) => cmd_fit(&config, args),
        Command::Boundary(args) => cmd_boundary(&config, args),
        Command::Synth(args) => cmd_synth(&config, args),
        Command::Stats(args) => cmd_stats(&config, args),
    }
}

fn cmd_simulate(config: &RunConfig, args: SimulateArgs) -> Result<(), AppError> {
    let story = StoryParams::new(args.r, args.s).map_err(validation)?;
    let controls = SolveControls {
        t_end: args.t_end.unwrap_or(config.solve.t_end),
        ..config.solve
    };
    let traj = solve_story(&story, &config.site, &controls).map_err(solve_error)?;
    let table = io::write_trajectory(&args.id, &traj).map_err(validation)?;
    emit(config, args.out.as_deref(), &table)?;
    if let Some(obs_path) = &args.obs_out {
        let obs = io::observations_from_trajectory(
            &traj,
            &args.id,
            args.s,
            config.cadence,
            controls.t_end,
        )
        .map_err(validation)?;
        let text = io::write_observations(std::slice::from_ref(&obs)).map_err(validation)?;
        emit(config, Some(obs_path), &text)?;
    }
    match traj.promoted_at {
        Some(tp) => eprintln!(
            "final_votes = {} promoted_at_minutes = {}",
            io::fmt_sig6(traj.final_votes),
            io::fmt_sig6(tp)
        ),
        None => eprintln!(
            "final_votes = {} not promoted",
            io::fmt_sig6(traj.final_votes)
        ),
    }
    Ok(())
}

fn cmd_mc(config: &RunConfig, args: McArgs) -> Result<(), AppError> {
    let story = StoryParams::new(args.r, args.s).map_err(validation)?;
    let t_end = args.t_end.unwrap_or(config.solve.t_end);
    let grid_step = args.grid_step.unwrap_or(config.grid_step);
    if !grid_step.is_finite() || grid_step <= 0.0 {
        return Err(AppError::Validation("grid_step must be positive".into()));
    }
    let mut grid: Vec<f64> = (0..)
        .map(|k| k as f64 * grid_step)
        .take_while(|&t| t < t_end)
        .collect();
    grid.push(t_end);
    let controls = McControls {
        seed: args.seed.unwrap_or(config.seed),
        n_runs: args.runs.unwrap_or(config.n_runs),
        t_end,
        record_grid: grid,
    };
    let ens = montecarlo::simulate_ensemble(&story, &config.site, &controls).map_err(validation)?;
    emit(config, args.out.as_deref(), &io::write_ensemble(&ens))?;
    eprintln!(
        "promoted_fraction = {} mean_promotion_minutes = {}",
        io::fmt_sig6(ens.promoted_fraction),
        ens.mean_promotion_time
            .map(io::fmt_sig6)
            .unwrap_or_else(|| "none".into()),
    );
    Ok(())
}

fn cmd_fit(config: &RunConfig, args: FitArgs) -> Result<(), AppError> {
    let text = fs::read_to_string(&args.input)
        .map_err(|e| validation(format!("cannot read {}: {e}", args.input.display())))?;
    let raw = io::read_observations(&text).map_err(validation)?;
    if raw.is_empty() {
        return Err(AppError::Validation("no stories in input".into()));
    }

    let fans_map: HashMap<String, u64> = match &args.fans {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| validation(format!("cannot read {}: {e}", path.display())))?;
            io::read_fan_counts(&text).map_err(validation)?
        }
        None => HashMap::new(),
    };
    let median_fans = {
        let mut v: Vec<u64> = fans_map.values().copied().collect();
        v.sort_unstable();
        if v.is_empty() {
            None
        } else {
            Some(v[v.len() / 2])
        }
    };

    let horizon = args.horizon.unwrap_or(fitting::DEFAULT_HORIZON);
    let mut results: Vec<(String, FitResult)> = Vec::with_capacity(raw.len());
    let mut observed_finals = Vec::new();
    for group in raw {
        let fans = fans_map
            .get(&group.story_id)
            .copied()
            .or(args.default_s)
            .or(median_fans)
            .ok_or_else(|| {
                AppError::Validation(format!(
                    "story {}: no fan count; provide --fans or --default-s",
                    group.story_id
                ))
            })?;
        let obs = ObservationSeries::new(group.story_id.clone(), fans, group.points)
            .map_err(validation)?;
        let fit = match args.early {
            Some(k) => fitting::predict_from_early(&obs, &config.site, k, horizon),
            None => fitting::estimate_interest(&obs, &config.site, None),
        }
        .map_err(|e| match e {
            votedyn::fitting::FitError::Solve(s) => solve_error(s),
            other => validation(other),
        })?;
        observed_finals.push(obs.points.last().expect("validated").1 as f64);
        results.push((obs.story_id, fit));
    }

    let table = io::write_fit_results(&results).map_err(validation)?;
    emit(config, args.out.as_deref(), &table)?;

    if args.early.is_some() && results.len() >= 3 {
        // Plot-ready orientation: least-squares slope and correlation of
        // predicted against observed finals.
        let predicted: Vec<f64> = results.iter().map(|(_, f)| f.predicted_final).collect();
        if let Ok(metrics) = stats::error_metrics(&predicted, &observed_finals) {
            let n = predicted.len() as f64;
            let mean_p = predicted.iter().sum::<f64>() / n;
            let mean_o = observed_finals.iter().sum::<f64>() / n;
            let mut cov = 0.0;
            let mut var_o = 0.0;
            for (p, o) in predicted.iter().zip(&observed_finals) {
                cov += (o - mean_o) * (p - mean_p);
                var_o += (o - mean_o) * (o - mean_o);
            }
            if var_o > 0.0 {
                eprintln!(
                    "early_prediction_slope = {} correlation = {} rms_relative = {}",
                    io::fmt_sig6(cov / var_o),
                    metrics
                        .pearson
                        .map(io::fmt_sig6)
                        .unwrap_or_else(|| "none".into()),
                    io::fmt_sig6(metrics.rms_rel),
                );
            }
        }
    }
    Ok(())
}

fn cmd_boundary(config: &RunConfig, args: BoundaryArgs) -> Result<(), AppError> {
    if args.steps == 0 {
        return Err(AppError::Validation("steps must be >= 1".into()));
    }
    if args.s_max < args.s_min {
        return Err(AppError::Validation("s_max must be >= s_min".into()));
    }
    let mut grid: Vec<u64> = if args.steps == 1 {
        vec![args.s_min]
    } else {
        (0..args.steps)
            .map(|i| {
                let w = i as f64 / (args.steps - 1) as f64;
                (args.s_min as f64 + w * (args.s_max - args.s_min) as f64).round() as u64
            })
            .collect()
    };
    grid.dedup();
    let boundary = fitting::promotion_boundary(&config.site, &grid).map_err(solve_error)?;
    emit(config, args.out.as_deref(), &io::write_boundary(&boundary))
}

fn cmd_synth(config: &RunConfig, args: SynthArgs) -> Result<(), AppError> {
    let interest_dist = match args.r_fixed {
        Some(r) => InterestDistribution::Degenerate(r),
        None => InterestDistribution::LogNormal {
            mu_ln: args.r_mu,
            sigma_ln: args.r_sigma,
        },
    };
    let fan_dist = match args.s_fixed {
        Some(s) => FanCountDistribution::Fixed(s),
        None => FanCountDistribution::Choice(args.s_set.clone()),
    };
    let controls = SynthControls {
        n_stories: args.n,
        interest_dist,
        fan_dist,
        seed: args.seed.unwrap_or(config.seed),
        t_end: args.t_end.unwrap_or(config.solve.t_end),
        cadence: args.cadence.unwrap_or(config.cadence),
    };
    let stories =
        montecarlo::generate_synthetic_dataset(&config.site, &controls).map_err(validation)?;
    let series: Vec<ObservationSeries> =
        stories.iter().map(|s| s.observations.clone()).collect();
    let obs_text = io::write_observations(&series).map_err(validation)?;
    emit(config, Some(&args.out), &obs_text)?;
    let truth_text = io::write_truth(&stories).map_err(validation)?;
    emit(config, Some(&args.truth), &truth_text)?;
    let promoted = stories.iter().filter(|s| s.promoted_at.is_some()).count();
    eprintln!("stories = {} promoted = {promoted}", stories.len());
    Ok(())
}

fn cmd_stats(config: &RunConfig, args: StatsArgs) -> Result<(), AppError> {
    let text = fs::read_to_string(&args.input)
        .map_err(|e| validation(format!("cannot read {}: {e}", args.input.display())))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| AppError::Validation("empty input".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    let r_col = ["r_hat", "r_true", "r"]
        .iter()
        .find_map(|name| cols.iter().position(|c| c == name))
        .ok_or_else(|| {
            AppError::Validation("input needs an r_hat, r_true or r column".into())
        })?;
    let fans_col = cols.iter().position(|&c| c == "s_fans");

    let mut interests = Vec::new();
    let mut fans = Vec::new();
    for (i, raw) in lines.enumerate() {
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() != cols.len() {
            return Err(AppError::Validation(format!(
                "line {}: expected {} fields, got {}",
                i + 2,
                cols.len(),
                fields.len()
            )));
        }
        let r: f64 = fields[r_col]
            .parse()
            .map_err(|_| AppError::Validation(format!("line {}: bad interest value", i + 2)))?;
        interests.push(r);
        if let Some(c) = fans_col {
            let s: f64 = fields[c]
                .parse()
                .map_err(|_| AppError::Validation(format!("line {}: bad s_fans value", i + 2)))?;
            fans.push(s);
        }
    }

    let seed = args.seed.unwrap_or(config.seed);
    let fit = stats::lognormal_fit_with_gof(&interests, args.bootstrap, seed)
        .map_err(validation)?;
    let mut report = String::new();
    report.push_str(&format!("n = {}\n", fit.n));
    report.push_str(&format!("mu_ln = {}\n", io::fmt_sig6(fit.mu_ln)));
    report.push_str(&format!("sigma_ln = {}\n", io::fmt_sig6(fit.sigma_ln)));
    report.push_str(&format!(
        "ci95_mu = {} {}\n",
        io::fmt_sig6(fit.ci95_mu.0),
        io::fmt_sig6(fit.ci95_mu.1)
    ));
    report.push_str(&format!(
        "ci95_sigma = {} {}\n",
        io::fmt_sig6(fit.ci95_sigma.0),
        io::fmt_sig6(fit.ci95_sigma.1)
    ));
    report.push_str(&format!(
        "ks_stat = {}\n",
        io::fmt_sig6(fit.ks_stat.expect("gof computed"))
    ));
    report.push_str(&format!(
        "ks_p_value = {}\n",
        io::fmt_sig6(fit.p_value.expect("gof computed"))
    ));
    if !fans.is_empty() {
        let (pearson, p) =
            stats::correlation_permutation_test(&fans, &interests, args.perm, seed)
                .map_err(validation)?;
        report.push_str(&format!("fans_interest_pearson = {}\n", io::fmt_sig6(pearson)));
        report.push_str(&format!("fans_interest_p_value = {}\n", io::fmt_sig6(p)));
    }
    emit(config, args.out.as_deref(), &report)
}
