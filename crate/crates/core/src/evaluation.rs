//! Estimation error of a selected fleet against the full fleet.
//!
//! A selection's estimate of a pollutant in cell `(g, t)` is the mean of every reading
//! its vehicles took there; the full fleet's means are the ground truth. Cells only one
//! side observes are left out of RMSE and MAPE and show up in `coverage_ratio` instead.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::ReadingAggregate;
use crate::numeric::pairwise_sum;
use crate::selection::{select, FleetSelection, SelectionProblem, Strategy};
use crate::visit::VisitModel;
use crate::weights::{WeightField, WeightVariant};

/// Per-`(g, t)` concentration; `None` marks an unobserved cell.
pub type Field = Vec<Option<f64>>;

/// How per-cell absolute percentage errors are reduced to one number.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapeAggregation {
    /// Mean of the per-cell percentages.
    #[default]
    PerCell,
    /// `sum |est - truth| / sum truth`, which weights cells by their concentration.
    Pooled,
}

impl std::str::FromStr for MapeAggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-cell" | "per_cell" => Ok(Self::PerCell),
            "pooled" => Ok(Self::Pooled),
            other => Err(Error::Config(format!("unknown MAPE aggregation {other:?} (per-cell, pooled)"))),
        }
    }
}

/// Mean readings of the selected vehicles. Vehicles are matched to the aggregate by id and
/// accumulated in aggregate order, so selecting the whole fleet reproduces
/// [`ReadingAggregate::fleet_means`] bit for bit.
pub fn estimate_field(selection: &FleetSelection, readings: &ReadingAggregate) -> Result<Field> {
    let mut vehicles = Vec::with_capacity(selection.len());
    for id in selection.selected_ids() {
        let v = readings
            .vehicle_ids
            .binary_search_by(|probe| probe.as_str().cmp(id))
            .map_err(|_| Error::Validation(format!("vehicle {id} has no entry in the {} readings", readings.pollutant)))?;
        vehicles.push(v);
    }
    vehicles.sort_unstable();
    Ok(readings.subset_means(&vehicles))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    /// `None` when no cell is observed by both fields.
    pub rmse: Option<f64>,
    /// Percent; `None` when no jointly observed cell has a positive truth.
    pub mape: Option<f64>,
    pub coverage_ratio: f64,
    pub truth_observed: usize,
    pub jointly_observed: usize,
    /// Jointly observed cells left out of MAPE because the truth there is 0.
    pub zero_truth_cells: usize,
    /// `(k, percent)` for every cell that enters MAPE, by ascending `k`.
    #[serde(skip)]
    pub per_cell_mape: Vec<(u32, f64)>,
}

impl Scores {
    pub fn is_defined(&self) -> bool {
        self.jointly_observed > 0
    }
}

pub fn score(estimate: &[Option<f64>], truth: &[Option<f64>], aggregation: MapeAggregation) -> Result<Scores> {
    if estimate.len() != truth.len() {
        return Err(Error::Dimension {
            expected: truth.len(),
            actual: estimate.len(),
        });
    }
    let mut squared = Vec::new();
    let mut abs_err = Vec::new();
    let mut truth_mass = Vec::new();
    let mut per_cell_mape = Vec::new();
    let mut truth_observed = 0;
    let mut zero_truth_cells = 0;
    for (k, (est, tru)) in estimate.iter().zip(truth).enumerate() {
        let Some(tru) = *tru else { continue };
        truth_observed += 1;
        let Some(est) = *est else { continue };
        let err = est - tru;
        squared.push(err * err);
        if tru > 0.0 {
            abs_err.push(err.abs());
            truth_mass.push(tru);
            per_cell_mape.push((k as u32, err.abs() / tru * 100.0));
        } else {
            zero_truth_cells += 1;
        }
    }
    let jointly_observed = squared.len();
    let rmse = (jointly_observed > 0).then(|| (pairwise_sum(&squared) / jointly_observed as f64).sqrt());
    let mape = (!per_cell_mape.is_empty()).then(|| match aggregation {
        MapeAggregation::PerCell => {
            let pct: Vec<f64> = per_cell_mape.iter().map(|&(_, m)| m).collect();
            pairwise_sum(&pct) / pct.len() as f64
        }
        MapeAggregation::Pooled => pairwise_sum(&abs_err) / pairwise_sum(&truth_mass) * 100.0,
    });
    let coverage_ratio = if truth_observed == 0 {
        0.0
    } else {
        jointly_observed as f64 / truth_observed as f64
    };
    Ok(Scores {
        rmse,
        mape,
        coverage_ratio,
        truth_observed,
        jointly_observed,
        zero_truth_cells,
        per_cell_mape,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub pollutant: String,
    pub fleet_size: usize,
    pub strategy: Strategy,
    pub seed: u64,
    pub utility: f64,
    #[serde(flatten)]
    pub scores: Scores,
}

/// Scores one selection against the full fleet for every pollutant.
pub fn evaluate_selection(
    selection: &FleetSelection,
    readings: &[ReadingAggregate],
    aggregation: MapeAggregation,
) -> Result<Vec<EvaluationReport>> {
    readings
        .iter()
        .map(|agg| {
            let estimate = estimate_field(selection, agg)?;
            let scores = score(&estimate, &agg.fleet_means(), aggregation)?;
            Ok(EvaluationReport {
                pollutant: agg.pollutant.clone(),
                fleet_size: selection.len(),
                strategy: selection.strategy,
                seed: selection.seed,
                utility: selection.final_utility,
                scores,
            })
        })
        .collect()
}

/// Writes `g,t,mape` rows for the cells that enter MAPE.
pub fn write_per_cell_mape(scores: &Scores, n_intervals: usize, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("g,t,mape\n");
    for &(k, m) in &scores.per_cell_mape {
        let k = k as usize;
        writeln!(out, "{},{},{m}", k / n_intervals, k % n_intervals).expect("writing to a String");
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepConfig {
    pub sizes: Vec<usize>,
    pub strategies: Vec<Strategy>,
    /// Seeds for the random baseline; deterministic strategies run once per size.
    pub seeds: Vec<u64>,
    /// Route OptiFleet through the lazy accelerator.
    pub lazy: bool,
    pub aggregation: MapeAggregation,
}

impl SweepConfig {
    pub fn new(sizes: Vec<usize>, strategies: Vec<Strategy>, seeds: Vec<u64>) -> Self {
        SweepConfig {
            sizes,
            strategies,
            seeds,
            lazy: true,
            aggregation: MapeAggregation::PerCell,
        }
    }
}

/// Mean and sample standard deviation; `sd` is 0 for a single value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Summary> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = pairwise_sum(values) / n as f64;
        let sd = if n > 1 {
            let dev: Vec<f64> = values.iter().map(|x| (x - mean) * (x - mean)).collect();
            (pairwise_sum(&dev) / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Summary { mean, sd, n })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PollutantSummary {
    pub pollutant: String,
    pub rmse: Option<Summary>,
    pub mape: Option<Summary>,
    pub coverage_ratio: Summary,
}

/// One `(strategy, size)` row, aggregated over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub strategy: Strategy,
    pub fleet_size: usize,
    pub utility: Summary,
    pub pollutants: Vec<PollutantSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub reports: Vec<EvaluationReport>,
    pub notes: Vec<String>,
}

impl SweepReport {
    pub fn row(&self, strategy: Strategy, fleet_size: usize) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.strategy == strategy && r.fleet_size == fleet_size)
    }

    /// Aligned text table: one line per row, utility then `mape ± sd` per pollutant.
    pub fn to_table(&self) -> String {
        let pollutants: Vec<&str> = self
            .rows
            .first()
            .map(|r| r.pollutants.iter().map(|p| p.pollutant.as_str()).collect())
            .unwrap_or_default();
        let mut header = vec!["strategy".to_string(), "size".to_string(), "utility".to_string()];
        header.extend(pollutants.iter().map(|p| format!("{p} rmse")));
        header.extend(pollutants.iter().map(|p| format!("{p} mape%")));
        header.push("coverage".to_string());
        let mut lines = vec![header];
        for row in &self.rows {
            let mut cells = vec![row.strategy.label().to_string(), row.fleet_size.to_string(), fmt_summary(Some(row.utility), 3)];
            cells.extend(row.pollutants.iter().map(|p| fmt_summary(p.rmse, 3)));
            cells.extend(row.pollutants.iter().map(|p| fmt_summary(p.mape, 2)));
            cells.push(
                row.pollutants
                    .first()
                    .map_or_else(|| "-".to_string(), |p| format!("{:.3}", p.coverage_ratio.mean)),
            );
            lines.push(cells);
        }
        render_table(&lines)
    }
}

fn fmt_summary(s: Option<Summary>, digits: usize) -> String {
    match s {
        None => "-".to_string(),
        Some(s) if s.n > 1 => format!("{:.digits$} ± {:.digits$}", s.mean, s.sd),
        Some(s) => format!("{:.digits$}", s.mean),
    }
}

/// Pads columns to a common width; the first two are left-aligned, the rest right-aligned.
pub fn render_table(lines: &[Vec<String>]) -> String {
    let n_cols = lines.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..n_cols)
        .map(|c| lines.iter().filter_map(|l| l.get(c)).map(|s| s.chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for line in lines {
        let padded: Vec<String> = line
            .iter()
            .enumerate()
            .map(|(c, s)| {
                let pad = widths[c] - s.chars().count();
                if c < 2 { format!("{s}{}", " ".repeat(pad)) } else { format!("{}{s}", " ".repeat(pad)) }
            })
            .collect();
        out.push_str(padded.join("  ").trim_end());
        out.push('\n');
    }
    out
}

/// Budget that buys exactly `size` vehicles; costs must be uniform.
fn budget_for(model: &VisitModel, size: usize) -> Result<f64> {
    let c = model.cost.first().copied().unwrap_or(1.0);
    if model.cost.iter().any(|&x| x != c) {
        return Err(Error::Config("fleet-size sweeps need uniform vehicle costs".into()));
    }
    Ok(size as f64 * c)
}

/// Runs every strategy at every fleet size and scores the picks for each pollutant.
/// Sizes above the fleet are skipped and noted.
pub fn sweep_fleet_sizes(
    model: &VisitModel,
    weights: &WeightField,
    readings: &[ReadingAggregate],
    config: &SweepConfig,
) -> Result<SweepReport> {
    if config.strategies.contains(&Strategy::Random) && config.seeds.is_empty() {
        return Err(Error::Config("the random baseline needs at least one seed".into()));
    }
    let mut notes = Vec::new();
    let mut jobs = Vec::new();
    for &strategy in &config.strategies {
        for &size in &config.sizes {
            if size > model.n_vehicles() {
                notes.push(format!("{strategy} size {size} skipped: the fleet has {} vehicles", model.n_vehicles()));
                continue;
            }
            if size == 0 {
                notes.push(format!("{strategy} size 0 skipped"));
                continue;
            }
            if strategy == Strategy::Random {
                jobs.extend(config.seeds.iter().map(|&seed| (strategy, size, seed)));
            } else {
                jobs.push((strategy, size, config.seeds.first().copied().unwrap_or(0)));
            }
        }
    }

    let results: Vec<Vec<EvaluationReport>> = jobs
        .par_iter()
        .map(|&(strategy, size, seed)| {
            let budget = budget_for(model, size)?;
            let problem = SelectionProblem::new(model, weights, budget, strategy).with_seed(seed);
            let selection = select(&problem, config.lazy)?;
            let mut reports = evaluate_selection(&selection, readings, config.aggregation)?;
            // report the requested size even if greedy stopped early on zero gain
            for r in &mut reports {
                r.fleet_size = size;
            }
            Ok(reports)
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    let mut i = 0;
    while i < jobs.len() {
        let (strategy, size, _) = jobs[i];
        let mut j = i;
        while j < jobs.len() && jobs[j].0 == strategy && jobs[j].1 == size {
            j += 1;
        }
        rows.push(summarize_row(strategy, size, &results[i..j], readings));
        i = j;
    }
    Ok(SweepReport {
        rows,
        reports: results.into_iter().flatten().collect(),
        notes,
    })
}

fn summarize_row(strategy: Strategy, fleet_size: usize, runs: &[Vec<EvaluationReport>], readings: &[ReadingAggregate]) -> SweepRow {
    let utilities: Vec<f64> = runs.iter().filter_map(|r| r.first().map(|x| x.utility)).collect();
    let pollutants = readings
        .iter()
        .enumerate()
        .map(|(p, agg)| {
            let of = |f: &dyn Fn(&EvaluationReport) -> Option<f64>| -> Vec<f64> { runs.iter().filter_map(|r| f(&r[p])).collect() };
            PollutantSummary {
                pollutant: agg.pollutant.clone(),
                rmse: Summary::of(&of(&|r| r.scores.rmse)),
                mape: Summary::of(&of(&|r| r.scores.mape)),
                coverage_ratio: Summary::of(&of(&|r| Some(r.scores.coverage_ratio))).unwrap_or(Summary { mean: 0.0, sd: 0.0, n: 0 }),
            }
        })
        .collect();
    SweepRow {
        strategy,
        fleet_size,
        utility: Summary::of(&utilities).unwrap_or(Summary { mean: 0.0, sd: 0.0, n: 0 }),
        pollutants,
    }
}

/// Change of a variant's mean metrics relative to the uniform variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationDelta {
    pub variant: WeightVariant,
    pub strategy: Strategy,
    pub fleet_size: usize,
    pub pollutant: String,
    pub mape_delta: Option<f64>,
    pub rmse_delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub variants: Vec<(WeightVariant, SweepReport)>,
    pub deltas: Vec<AblationDelta>,
}

impl AblationReport {
    pub fn sweep(&self, variant: WeightVariant) -> Option<&SweepReport> {
        self.variants.iter().find(|(v, _)| *v == variant).map(|(_, s)| s)
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        for (variant, sweep) in &self.variants {
            writeln!(out, "[{variant}]").expect("writing to a String");
            out.push_str(&sweep.to_table());
            out.push('\n');
        }
        let mut lines = vec![vec![
            "variant".to_string(),
            "size".to_string(),
            "pollutant".to_string(),
            "Δmape%".to_string(),
            "Δrmse".to_string(),
        ]];
        for d in &self.deltas {
            lines.push(vec![
                d.variant.to_string(),
                d.fleet_size.to_string(),
                d.pollutant.clone(),
                d.mape_delta.map_or("-".into(), |x| format!("{x:+.3}")),
                d.rmse_delta.map_or("-".into(), |x| format!("{x:+.4}")),
            ]);
        }
        out.push_str(&render_table(&lines));
        out
    }
}

/// Repeats the sweep under each weight field. `fields` pairs every variant with its field;
/// deltas are taken against the uniform variant when it is present.
pub fn run_ablation(
    model: &VisitModel,
    fields: &[WeightField],
    readings: &[ReadingAggregate],
    config: &SweepConfig,
) -> Result<AblationReport> {
    let variants = fields
        .iter()
        .map(|field| Ok((field.variant, sweep_fleet_sizes(model, field, readings, config)?)))
        .collect::<Result<Vec<_>>>()?;
    let mut deltas = Vec::new();
    if let Some((_, base)) = variants.iter().find(|(v, _)| *v == WeightVariant::Uniform) {
        for (variant, sweep) in variants.iter().filter(|(v, _)| *v != WeightVariant::Uniform) {
            for row in &sweep.rows {
                let Some(base_row) = base.row(row.strategy, row.fleet_size) else { continue };
                for (p, b) in row.pollutants.iter().zip(&base_row.pollutants) {
                    let diff = |a: Option<Summary>, b: Option<Summary>| Some(a?.mean - b?.mean);
                    deltas.push(AblationDelta {
                        variant: *variant,
                        strategy: row.strategy,
                        fleet_size: row.fleet_size,
                        pollutant: p.pollutant.clone(),
                        mape_delta: diff(p.mape, b.mape),
                        rmse_delta: diff(p.rmse, b.rmse),
                    });
                }
            }
        }
    }
    Ok(AblationReport { variants, deltas })
}
