use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Parser;

use fleetsense::evaluation::{
    evaluate_selection, render_table, run_ablation, sweep_fleet_sizes, write_per_cell_mape, SweepConfig,
};
use fleetsense::grid::{GridSpec, SpatiotemporalIndex};
use fleetsense::ingest::{ingest_file, ColumnMapping, ReadingAggregate};
use fleetsense::selection::{select, select_exact, FleetSelection, SelectionProblem, Strategy};
use fleetsense::synth::{generate, preset, ScenarioConfig};
use fleetsense::visit::{load_costs, VisitModel};
use fleetsense::weights::{build_weight_field, correlate_features, derive_weight_field, FeatureTable, WeightField};

use crate::manifest::{Run, RunManifest};
use crate::{
    AblationArgs, Cli, Command, EvaluateArgs, GenerateArgs, IngestArgs, ReplayArgs, SelectArgs, SweepArgs, SweepOptions,
    WeightsArgs,
};

pub const VISIT_MODEL_FILE: &str = "visit_model.json";
pub const READINGS_FILE: &str = "readings.json";
pub const GRID_FILE: &str = "grid.conf";

pub fn run(command: Command, argv: Vec<String>) -> Result<()> {
    let name = command.name();
    if let Command::Replay(args) = command {
        return replay(args);
    }
    let output = command.output().expect("non-replay commands have an output");
    let dir = output.dir(name);
    let force = output.force;
    let config = serde_json::to_value(&command)?;
    match command {
        Command::Generate(args) => cmd_generate(&args, start(&dir, force, name, argv, config, Some(args.seed), &[args.config.as_deref()])?),
        Command::Ingest(args) => {
            let inputs = [Some(args.trajectories.as_path()), Some(args.grid.as_path()), args.costs.as_deref()];
            cmd_ingest(&args, start(&dir, force, name, argv, config, None, &inputs)?)
        }
        Command::Weights(args) => {
            let inputs = ingest_inputs(&args.ingest, [Some(&args.static_features), Some(&args.dynamic_features), None]);
            cmd_weights(&args, start(&dir, force, name, argv, config, None, &as_refs(&inputs))?)
        }
        Command::Select(args) => {
            let inputs = ingest_inputs(&args.ingest, [args.weights.as_ref(), None, None]);
            cmd_select(&args, start(&dir, force, name, argv, config, Some(args.seed), &as_refs(&inputs))?)
        }
        Command::Evaluate(args) => {
            let inputs = ingest_inputs(&args.ingest, [Some(&args.selection), None, None]);
            cmd_evaluate(&args, start(&dir, force, name, argv, config, None, &as_refs(&inputs))?)
        }
        Command::Sweep(args) => {
            let inputs = ingest_inputs(&args.ingest, [args.weights.as_ref(), None, None]);
            cmd_sweep(&args, start(&dir, force, name, argv, config, None, &as_refs(&inputs))?)
        }
        Command::Ablation(args) => {
            let inputs = ingest_inputs(&args.ingest, [Some(&args.static_features), Some(&args.dynamic_features), None]);
            cmd_ablation(&args, start(&dir, force, name, argv, config, None, &as_refs(&inputs))?)
        }
        Command::Replay(_) => unreachable!(),
    }
}

fn start(
    dir: &Path,
    force: bool,
    name: &str,
    argv: Vec<String>,
    config: serde_json::Value,
    seed: Option<u64>,
    inputs: &[Option<&Path>],
) -> Result<Run> {
    let inputs: Vec<&Path> = inputs.iter().flatten().copied().collect();
    Run::start(dir, force, name, argv, config, seed, &inputs)
}

fn ingest_inputs(ingest: &Path, extra: [Option<&PathBuf>; 3]) -> Vec<PathBuf> {
    let mut inputs = vec![ingest.join(VISIT_MODEL_FILE), ingest.join(READINGS_FILE), ingest.join(GRID_FILE)];
    inputs.extend(extra.into_iter().flatten().cloned());
    inputs
}

fn as_refs(paths: &[PathBuf]) -> Vec<Option<&Path>> {
    paths.iter().map(|p| Some(p.as_path())).collect()
}

fn load_ingest(dir: &Path) -> Result<(VisitModel, Vec<ReadingAggregate>)> {
    let model = VisitModel::load(dir.join(VISIT_MODEL_FILE))
        .with_context(|| format!("cannot load the visit model from {}", dir.display()))?;
    let path = dir.join(READINGS_FILE);
    let text = fs::read_to_string(&path).with_context(|| format!("cannot read {}", path.display()))?;
    let readings: Vec<ReadingAggregate> =
        serde_json::from_str(&text).with_context(|| format!("{} is not a readings file", path.display()))?;
    Ok((model, readings))
}

fn load_weights(path: Option<&Path>, model: &VisitModel) -> Result<WeightField> {
    match path {
        Some(path) => {
            let field = WeightField::load(path).with_context(|| format!("cannot load weights from {}", path.display()))?;
            if field.n_points() != model.n_points {
                bail!(
                    "weight field covers {} points but the visit model has {}",
                    field.n_points(),
                    model.n_points
                );
            }
            Ok(field)
        }
        None => Ok(WeightField::uniform(model.n_points, 1)),
    }
}

fn pick_pollutant<'a>(readings: &'a [ReadingAggregate], name: Option<&str>) -> Result<&'a ReadingAggregate> {
    match name {
        Some(name) => readings
            .iter()
            .find(|r| r.pollutant == name)
            .with_context(|| format!("no pollutant `{name}` in the ingested readings")),
        None => readings.first().context("the ingested data has no pollutant columns"),
    }
}

fn cmd_generate(args: &GenerateArgs, mut run: Run) -> Result<()> {
    let mut config: ScenarioConfig = match (&args.preset, &args.config) {
        (Some(name), _) => preset(name, args.seed)?,
        (None, Some(path)) => {
            let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
            let value: serde_json::Value = serde_json::from_str(&text)?;
            // accept a bare config or a whole scenario.json
            let value = value.get("config").cloned().unwrap_or(value);
            serde_json::from_value(value).with_context(|| format!("{} is not a scenario config", path.display()))?
        }
        (None, None) => bail!("either --preset or --config is required"),
    };
    config.seed = args.seed;
    if let Some(n) = args.vehicles {
        config.n_vehicles = n;
    }
    if let Some(days) = args.days {
        config.grid.n_days = days;
    }
    let scenario = generate(&config)?;
    for path in scenario.write_dir(run.path(""))? {
        run.record(path);
    }
    let summary = scenario.summary();
    println!(
        "{}: {} vehicles, {} days, {} active cells, {} pings ({} in the study area)",
        config.name, config.n_vehicles, config.grid.n_days, summary.active_cells, summary.pings, summary.pings_in_domain
    );
    run.finish()?;
    Ok(())
}

fn cmd_ingest(args: &IngestArgs, mut run: Run) -> Result<()> {
    let grid = GridSpec::load(&args.grid).with_context(|| format!("invalid grid config {}", args.grid.display()))?;
    let index = SpatiotemporalIndex::build(grid.clone())?;
    if !args.delimiter.is_ascii() {
        bail!("the delimiter must be a single ASCII character");
    }
    let schema = ColumnMapping {
        vehicle_id: args.vehicle_col.clone(),
        timestamp: args.timestamp_col.clone(),
        lat: args.lat_col.clone(),
        lon: args.lon_col.clone(),
        pollutants: args.pollutants.clone(),
        delimiter: args.delimiter as u8,
    };
    let (binned, parse) = ingest_file(&args.trajectories, &schema, &index)?;
    let model = VisitModel::from_counts(&binned.visits, &grid);
    let costs = load_costs(args.costs.as_deref(), &model.vehicle_ids, args.default_cost)?;
    let model = model.with_costs(costs)?;

    let path = run.path(VISIT_MODEL_FILE);
    model.save(&path)?;
    run.record(path);
    let path = run.path(GRID_FILE);
    grid.save(&path)?;
    run.record(path);
    run.write_json(READINGS_FILE, &binned.readings)?;
    let stats = serde_json::json!({ "parse": parse, "binning": binned.stats });
    run.write_json("stats.json", &stats)?;

    println!(
        "rows {}  records {}  skipped {}  binned {}  out of bounds {}  out of window {}  vehicles {}",
        parse.rows,
        parse.records,
        parse.skipped,
        binned.stats.binned,
        binned.stats.dropped_out_of_bounds,
        binned.stats.dropped_out_of_window,
        model.n_vehicles()
    );
    for (reason, n) in &parse.skipped_by_reason {
        println!("  skipped ({reason}): {n}");
    }
    run.finish()?;
    Ok(())
}

fn load_feature_tables(grid: &GridSpec, static_path: &Path, dynamic_path: &Path) -> Result<(FeatureTable, FeatureTable)> {
    let static_features = FeatureTable::load_static(static_path, grid.n_cells())?;
    let dynamic_features = FeatureTable::load_dynamic(dynamic_path, grid.n_cells(), grid.n_intervals())?;
    Ok((static_features, dynamic_features))
}

fn cmd_weights(args: &WeightsArgs, mut run: Run) -> Result<()> {
    let (model, readings) = load_ingest(&args.ingest)?;
    let grid = load_grid(&args.ingest, &model)?;
    let target = pick_pollutant(&readings, args.pollutant.as_deref())?;
    let (static_features, dynamic_features) = load_feature_tables(&grid, &args.static_features, &args.dynamic_features)?;
    let static_r = correlate_features(&static_features, target)?;
    let dynamic_r = correlate_features(&dynamic_features, target)?;
    let field = build_weight_field(&static_features, &dynamic_features, &static_r, &dynamic_r, args.variant, args.epsilon)?;
    let path = run.path("weights.csv");
    field.save(&path)?;
    run.record(path);

    let names = |t: &FeatureTable, r: &[f64]| -> serde_json::Map<String, serde_json::Value> {
        t.feature_names.iter().cloned().zip(r.iter().map(|&x| x.into())).collect()
    };
    let correlations = serde_json::json!({
        "pollutant": target.pollutant,
        "static": names(&static_features, &static_r),
        "dynamic": names(&dynamic_features, &dynamic_r),
    });
    run.write_json("correlations.json", &correlations)?;
    let mut rows = vec![vec!["feature".to_string(), format!("r ({})", target.pollutant)]];
    for (t, r) in [(&static_features, &static_r), (&dynamic_features, &dynamic_r)] {
        for (name, r) in t.feature_names.iter().zip(r.iter()) {
            rows.push(vec![name.clone(), format!("{r:+.3}")]);
        }
    }
    print!("{}", render_table(&rows));
    run.finish()?;
    Ok(())
}

fn cmd_select(args: &SelectArgs, mut run: Run) -> Result<()> {
    let (model, _) = load_ingest(&args.ingest)?;
    let weights = load_weights(args.weights.as_deref(), &model)?;
    let mut problem = SelectionProblem::new(&model, &weights, args.budget, args.strategy).with_seed(args.seed);
    problem.tsub_beta = args.tsub_beta;
    problem.spend_full_budget = args.spend_full_budget;
    if args.lazy && args.strategy != Strategy::OptiFleet {
        bail!("--lazy applies to the optifleet strategy only");
    }
    let selection = if args.strategy == Strategy::Exact {
        select_exact(&problem, args.exact_cap)?
    } else {
        select(&problem, args.lazy)?
    };
    run.write("selection.json", &(selection.to_json()? + "\n"))?;
    run.stat("selection_wall_time_ms", selection.wall_time_ms);
    run.stat("score_evaluations", selection.evaluations);
    print_selection(&selection);
    run.finish()?;
    Ok(())
}

fn print_selection(selection: &FleetSelection) {
    let mut rows = vec![vec![
        "step".to_string(),
        "vehicle".to_string(),
        "gain".to_string(),
        "score".to_string(),
        "cost".to_string(),
    ]];
    for (i, p) in selection.picks.iter().enumerate() {
        rows.push(vec![
            (i + 1).to_string(),
            p.vehicle_id.clone(),
            format!("{:.4}", p.gain),
            format!("{:.4}", p.score),
            format!("{}", p.cost),
        ]);
    }
    print!("{}", render_table(&rows));
    println!(
        "{}: {} vehicles, cost {} of {}, utility {:.4} ({})",
        selection.strategy.label(),
        selection.len(),
        selection.total_cost,
        selection.budget,
        selection.final_utility,
        selection.stop_reason
    );
}

fn cmd_evaluate(args: &EvaluateArgs, mut run: Run) -> Result<()> {
    let (model, readings) = load_ingest(&args.ingest)?;
    let text = fs::read_to_string(&args.selection).with_context(|| format!("cannot read {}", args.selection.display()))?;
    let mut selection = FleetSelection::from_json(&text)?;
    selection.resolve(&model.vehicle_ids)?;
    let reports = evaluate_selection(&selection, &readings, args.aggregation)?;
    run.write_json("evaluation.json", &reports)?;
    let t_count = load_grid(&args.ingest, &model)?.n_intervals();
    let mut rows = vec![vec![
        "pollutant".to_string(),
        "size".to_string(),
        "rmse".to_string(),
        "mape%".to_string(),
        "coverage".to_string(),
    ]];
    for report in &reports {
        let name = format!("mape_{}.csv", file_safe(&report.pollutant));
        let path = run.path(&name);
        write_per_cell_mape(&report.scores, t_count, &path)?;
        run.record(path);
        let fmt = |x: Option<f64>, d: usize| x.map_or_else(|| "undefined".to_string(), |x| format!("{x:.d$}"));
        rows.push(vec![
            report.pollutant.clone(),
            report.fleet_size.to_string(),
            fmt(report.scores.rmse, 4),
            fmt(report.scores.mape, 3),
            format!("{:.3}", report.scores.coverage_ratio),
        ]);
    }
    print!("{}", render_table(&rows));
    run.finish()?;
    Ok(())
}

/// The grid `ingest` copied next to its outputs.
fn load_grid(ingest: &Path, model: &VisitModel) -> Result<GridSpec> {
    let path = ingest.join(GRID_FILE);
    let grid = GridSpec::load(&path).with_context(|| format!("cannot load the grid {}", path.display()))?;
    if grid.content_hash() != model.grid_hash || grid.n_points() != model.n_points {
        bail!("{} does not match the visit model", path.display());
    }
    Ok(grid)
}

fn file_safe(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' }).collect()
}

pub fn parse_sizes(spec: &str) -> Result<Vec<usize>> {
    let spec = spec.trim();
    if let Some((range, step)) = spec.split_once("..").map(|(lo, rest)| {
        let (hi, step) = rest.split_once(':').unwrap_or((rest, "1"));
        ((lo, hi), step)
    }) {
        let parse = |s: &str| s.trim().parse::<usize>().with_context(|| format!("invalid size `{s}` in `{spec}`"));
        let (lo, hi, step) = (parse(range.0)?, parse(range.1)?, parse(step)?);
        if step == 0 || lo > hi {
            bail!("empty size range `{spec}`");
        }
        return Ok((lo..=hi).step_by(step).collect());
    }
    spec.split(',')
        .map(|s| s.trim().parse::<usize>().with_context(|| format!("invalid size `{s}`")))
        .collect()
}

fn sweep_config(options: &SweepOptions, strategies: &[Strategy]) -> Result<SweepConfig> {
    let mut config = SweepConfig::new(parse_sizes(&options.sizes)?, strategies.to_vec(), (0..options.seeds).collect());
    config.lazy = !options.no_lazy;
    config.aggregation = options.aggregation;
    Ok(config)
}

fn cmd_sweep(args: &SweepArgs, mut run: Run) -> Result<()> {
    let (model, readings) = load_ingest(&args.ingest)?;
    let weights = load_weights(args.weights.as_deref(), &model)?;
    let config = sweep_config(&args.options, &args.strategies)?;
    let report = sweep_fleet_sizes(&model, &weights, &readings, &config)?;
    run.write_json("sweep.json", &report)?;
    let table = report.to_table();
    run.write("sweep.txt", &table)?;
    print!("{table}");
    for note in &report.notes {
        println!("note: {note}");
    }
    run.finish()?;
    Ok(())
}

fn cmd_ablation(args: &AblationArgs, mut run: Run) -> Result<()> {
    let (model, readings) = load_ingest(&args.ingest)?;
    let grid = load_grid(&args.ingest, &model)?;
    let target = pick_pollutant(&readings, args.pollutant.as_deref())?;
    let (static_features, dynamic_features) = load_feature_tables(&grid, &args.static_features, &args.dynamic_features)?;
    let fields = args
        .variants
        .iter()
        .map(|&v| derive_weight_field(&static_features, &dynamic_features, target, v, args.epsilon))
        .collect::<fleetsense::Result<Vec<_>>>()?;
    let config = sweep_config(&args.options, &args.strategies)?;
    let report = run_ablation(&model, &fields, &readings, &config)?;
    run.write_json("ablation.json", &report)?;
    let table = report.to_table();
    run.write("ablation.txt", &table)?;
    print!("{table}");
    run.finish()?;
    Ok(())
}

fn replay(args: ReplayArgs) -> Result<()> {
    let manifest = RunManifest::load(&args.manifest)?;
    if manifest.subcommand == "replay" {
        bail!("a replay manifest cannot be replayed");
    }
    let cli = Cli::try_parse_from(std::iter::once("fleetsense".to_string()).chain(manifest.argv.iter().cloned()))
        .context("the manifest's arguments no longer parse")?;
    let mut command = cli.command;
    let cwd = std::env::current_dir()?;
    let out = command.output_mut().expect("recorded commands have an output");
    out.out = Some(cwd.join(args.output.dir(&manifest.subcommand)));
    out.force = args.output.force;
    let mut argv = strip_output_flags(&manifest.argv);
    argv.extend(["--out".to_string(), out.out.clone().unwrap().display().to_string()]);
    if args.output.force {
        argv.push("--force".into());
    }
    std::env::set_current_dir(&manifest.cwd)
        .with_context(|| format!("cannot enter the recorded working directory {}", manifest.cwd.display()))?;
    run(command, argv)
}

/// Drops `-o`/`--out` (with their value) and `--force` from an argument list.
fn strip_output_flags(argv: &[String]) -> Vec<String> {
    let mut out = Vec::with_capacity(argv.len());
    let mut iter = argv.iter();
    while let Some(arg) = iter.next() {
        match arg.as_str() {
            "-o" | "--out" => {
                iter.next();
            }
            "--force" => {}
            a if a.starts_with("--out=") || (a.starts_with("-o") && a.len() > 2 && !a.starts_with("--")) => {}
            _ => out.push(arg.clone()),
        }
    }
    out
}
