//! `fleetsense`: scenario generation, ingestion, weighting, fleet selection and evaluation.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use fleetsense::evaluation::MapeAggregation;
use fleetsense::selection::{Strategy, DEFAULT_TSUB_BETA, EXACT_MAX_VEHICLES};
use fleetsense::synth::PRESET_NAMES;
use fleetsense::weights::{WeightVariant, DEFAULT_EPSILON_FLOOR};

/// Environment variable naming the directory that default output paths live under.
pub const OUTPUT_ROOT_ENV: &str = "FLEETSENSE_OUTPUT_ROOT";

#[derive(Debug, Parser)]
#[command(name = "fleetsense", version, about = "Budgeted vehicle-fleet selection for drive-by sensing")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "FLEETSENSE_JOBS")]
    jobs: Option<usize>,

    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize)]
#[serde(rename_all = "snake_case")]
enum Command {
    /// Write a synthetic scenario directory.
    Generate(GenerateArgs),
    /// Bin trajectories into a visit model and reading aggregates.
    Ingest(IngestArgs),
    /// Build a spatiotemporal weight field from feature tables.
    Weights(WeightsArgs),
    /// Select a fleet under a budget.
    Select(SelectArgs),
    /// Score a selection against the full fleet.
    Evaluate(EvaluateArgs),
    /// Compare strategies across fleet sizes.
    Sweep(SweepArgs),
    /// Repeat a sweep under each weight variant.
    Ablation(AblationArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Generate(_) => "generate",
            Command::Ingest(_) => "ingest",
            Command::Weights(_) => "weights",
            Command::Select(_) => "select",
            Command::Evaluate(_) => "evaluate",
            Command::Sweep(_) => "sweep",
            Command::Ablation(_) => "ablation",
            Command::Replay(_) => "replay",
        }
    }

    fn output(&self) -> Option<&OutputArgs> {
        match self {
            Command::Generate(a) => Some(&a.output),
            Command::Ingest(a) => Some(&a.output),
            Command::Weights(a) => Some(&a.output),
            Command::Select(a) => Some(&a.output),
            Command::Evaluate(a) => Some(&a.output),
            Command::Sweep(a) => Some(&a.output),
            Command::Ablation(a) => Some(&a.output),
            Command::Replay(_) => None,
        }
    }

    fn output_mut(&mut self) -> Option<&mut OutputArgs> {
        match self {
            Command::Generate(a) => Some(&mut a.output),
            Command::Ingest(a) => Some(&mut a.output),
            Command::Weights(a) => Some(&mut a.output),
            Command::Select(a) => Some(&mut a.output),
            Command::Evaluate(a) => Some(&mut a.output),
            Command::Sweep(a) => Some(&mut a.output),
            Command::Ablation(a) => Some(&mut a.output),
            Command::Replay(_) => None,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
struct OutputArgs {
    /// Output directory [default: $FLEETSENSE_OUTPUT_ROOT/<subcommand>, or ./fleetsense-runs/<subcommand>].
    #[arg(short = 'o', long = "out")]
    out: Option<PathBuf>,

    /// Write into a non-empty output directory.
    #[arg(long)]
    force: bool,
}

impl OutputArgs {
    fn dir(&self, subcommand: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| {
            let root = std::env::var_os(OUTPUT_ROOT_ENV).map_or_else(|| PathBuf::from("fleetsense-runs"), PathBuf::from);
            root.join(subcommand)
        })
    }
}

#[derive(Debug, Clone, Args, Serialize)]
struct GenerateArgs {
    /// Named scenario.
    #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(PRESET_NAMES), required_unless_present = "config", conflicts_with = "config")]
    preset: Option<String>,

    /// Scenario configuration as JSON (the `config` object of a scenario.json).
    #[arg(long)]
    config: Option<PathBuf>,

    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Override the number of vehicles.
    #[arg(long)]
    vehicles: Option<usize>,

    /// Override the number of days.
    #[arg(long)]
    days: Option<u32>,

    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
struct IngestArgs {
    #[arg(long)]
    trajectories: PathBuf,

    /// Grid configuration (`key = value` lines).
    #[arg(long)]
    grid: PathBuf,

    /// `vehicle_id,cost` CSV; vehicles not listed get --default-cost.
    #[arg(long)]
    costs: Option<PathBuf>,

    #[arg(long, default_value_t = 1.0)]
    default_cost: f64,

    /// Pollutant columns to keep (default: every non-mandatory column).
    #[arg(long, value_delimiter = ',')]
    pollutants: Option<Vec<String>>,

    #[arg(long, default_value = "vehicle_id")]
    vehicle_col: String,

    #[arg(long, default_value = "timestamp")]
    timestamp_col: String,

    #[arg(long, default_value = "lat")]
    lat_col: String,

    #[arg(long, default_value = "lon")]
    lon_col: String,

    #[arg(long, default_value_t = ',')]
    delimiter: char,

    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
struct WeightsArgs {
    /// Output directory of `ingest`.
    #[arg(long)]
    ingest: PathBuf,

    /// `g,feature...` CSV.
    #[arg(long = "static")]
    static_features: PathBuf,

    /// `g,t,feature...` CSV.
    #[arg(long = "dynamic")]
    dynamic_features: PathBuf,

    /// Pollutant the features are correlated with (default: the first one).
    #[arg(long)]
    pollutant: Option<String>,

    #[arg(long, default_value = "full")]
    variant: WeightVariant,

    #[arg(long, default_value_t = DEFAULT_EPSILON_FLOOR)]
    epsilon: f64,

    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
struct SelectArgs {
    /// Output directory of `ingest`.
    #[arg(long)]
    ingest: PathBuf,

    /// Weight field CSV (default: uniform weights).
    #[arg(long)]
    weights: Option<PathBuf>,

    /// ra, tsub, optifleet, improved or exact.
    #[arg(long)]
    strategy: Strategy,

    #[arg(long)]
    budget: f64,

    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Lazy evaluation for optifleet.
    #[arg(long)]
    lazy: bool,

    #[arg(long, default_value_t = DEFAULT_TSUB_BETA)]
    tsub_beta: f64,

    /// Keep buying zero-gain vehicles while the budget lasts.
    #[arg(long)]
    spend_full_budget: bool,

    /// Largest fleet the exact strategy will enumerate.
    #[arg(long, default_value_t = EXACT_MAX_VEHICLES)]
    exact_cap: usize,

    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
struct EvaluateArgs {
    #[arg(long)]
    ingest: PathBuf,

    /// selection.json written by `select`.
    #[arg(long)]
    selection: PathBuf,

    /// per-cell or pooled.
    #[arg(long, default_value = "per-cell")]
    aggregation: MapeAggregation,

    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
struct SweepOptions {
    /// Fleet sizes: a list (`4,8,16`) or an inclusive range with optional step (`4..12`, `8..64:8`).
    #[arg(long, default_value = "4,8,16,32")]
    sizes: String,

    /// Seeds for the random baseline: 0..N.
    #[arg(long, default_value_t = 20)]
    seeds: u64,

    #[arg(long, default_value = "per-cell")]
    aggregation: MapeAggregation,

    /// Plain greedy for optifleet instead of the lazy accelerator.
    #[arg(long)]
    no_lazy: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
struct SweepArgs {
    #[arg(long)]
    ingest: PathBuf,

    #[arg(long)]
    weights: Option<PathBuf>,

    #[arg(long, value_delimiter = ',', default_value = "ra,tsub,optifleet,improved")]
    strategies: Vec<Strategy>,

    #[command(flatten)]
    options: SweepOptions,

    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
struct AblationArgs {
    #[arg(long)]
    ingest: PathBuf,

    #[arg(long = "static")]
    static_features: PathBuf,

    #[arg(long = "dynamic")]
    dynamic_features: PathBuf,

    #[arg(long)]
    pollutant: Option<String>,

    #[arg(long, value_delimiter = ',', default_value = "uniform,spatial_only,temporal_only,full")]
    variants: Vec<WeightVariant>,

    #[arg(long, value_delimiter = ',', default_value = "improved")]
    strategies: Vec<Strategy>,

    #[arg(long, default_value_t = DEFAULT_EPSILON_FLOOR)]
    epsilon: f64,

    #[command(flatten)]
    options: SweepOptions,

    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Clone, Args, Serialize)]
struct ReplayArgs {
    /// manifest.json of an earlier run.
    manifest: PathBuf,

    #[command(flatten)]
    output: OutputArgs,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build_global() {
            log::warn!("could not size the worker pool: {e}");
        }
    }
    let argv: Vec<String> = std::env::args().skip(1).collect();
    match commands::run(cli.command, argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
