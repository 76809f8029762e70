//! Budget-constrained fleet selection.
//!
//! All strategies share the same problem description and output record. Greedy
//! strategies pick `argmax score(u) / c_u` over affordable candidates, break ties by
//! the smaller vehicle id, and stop once the best score is not positive (unless
//! `spend_full_budget` is set) or nothing affordable remains.

mod baselines;
mod exact;
mod greedy;
mod lazy;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::utility::{coverage_probability, sensing_utility};
use crate::visit::VisitModel;
use crate::weights::WeightField;

pub use baselines::{select_random, select_tsub, tsub_increment, DEFAULT_TSUB_BETA};
pub use exact::{select_exact, EXACT_MAX_VEHICLES};
pub use greedy::{select_improved_optifleet, select_optifleet};
pub use lazy::lazy_greedy_accelerator;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "ra")]
    Random,
    #[serde(rename = "tsub")]
    Tsub,
    #[serde(rename = "optifleet")]
    OptiFleet,
    #[serde(rename = "improved")]
    ImprovedOptiFleet,
    #[serde(rename = "exact")]
    Exact,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Random,
        Strategy::Tsub,
        Strategy::OptiFleet,
        Strategy::ImprovedOptiFleet,
        Strategy::Exact,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Random => "ra",
            Strategy::Tsub => "tsub",
            Strategy::OptiFleet => "optifleet",
            Strategy::ImprovedOptiFleet => "improved",
            Strategy::Exact => "exact",
        }
    }

    /// Human label used in report tables.
    pub fn label(self) -> &'static str {
        match self {
            Strategy::Random => "RA",
            Strategy::Tsub => "TSUB",
            Strategy::OptiFleet => "OptiFleet",
            Strategy::ImprovedOptiFleet => "Improved OptiFleet",
            Strategy::Exact => "Exact",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ra" | "random" => Ok(Strategy::Random),
            "tsub" => Ok(Strategy::Tsub),
            "optifleet" => Ok(Strategy::OptiFleet),
            "improved" | "improved-optifleet" | "improved_optifleet" => Ok(Strategy::ImprovedOptiFleet),
            "exact" => Ok(Strategy::Exact),
            _ => Err(Error::Config(format!(
                "unknown strategy `{s}` (expected ra, tsub, optifleet, improved or exact)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SelectionProblem<'a> {
    pub model: &'a VisitModel,
    pub weights: &'a WeightField,
    pub budget: f64,
    pub strategy: Strategy,
    pub rng_seed: u64,
    pub tsub_beta: f64,
    /// Keep selecting zero-score vehicles until the budget is spent.
    pub spend_full_budget: bool,
}

impl<'a> SelectionProblem<'a> {
    pub fn new(model: &'a VisitModel, weights: &'a WeightField, budget: f64, strategy: Strategy) -> Self {
        SelectionProblem {
            model,
            weights,
            budget,
            strategy,
            rng_seed: 0,
            tsub_beta: DEFAULT_TSUB_BETA,
            spend_full_budget: false,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng_seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.budget.is_finite() && self.budget > 0.0) {
            return Err(Error::Config(format!("budget must be positive, got {}", self.budget)));
        }
        if !(self.tsub_beta.is_finite() && self.tsub_beta > 0.0) {
            return Err(Error::Config(format!("tsub_beta must be positive, got {}", self.tsub_beta)));
        }
        if self.weights.n_points() != self.model.n_points {
            return Err(Error::Dimension {
                expected: self.model.n_points,
                actual: self.weights.n_points(),
            });
        }
        Ok(())
    }

    pub(crate) fn w(&self) -> &[f64] {
        self.weights.values()
    }

    /// Position of each vehicle when sorted by id, used for tie-breaking.
    pub(crate) fn id_rank(&self) -> Vec<usize> {
        let ids = &self.model.vehicle_ids;
        let mut order: Vec<usize> = (0..ids.len()).collect();
        order.sort_by(|&a, &b| ids[a].cmp(&ids[b]));
        let mut rank = vec![0; ids.len()];
        for (r, v) in order.into_iter().enumerate() {
            rank[v] = r;
        }
        rank
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// No unselected vehicle fits in the remaining budget.
    BudgetExhausted,
    /// Every vehicle was selected.
    AllSelected,
    /// The best affordable candidate would add nothing.
    NoPositiveScore,
    /// Not even the cheapest vehicle fits in the budget.
    NoAffordableVehicle,
    /// Exhaustive search finished.
    Optimal,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let text = match self {
            StopReason::BudgetExhausted => "budget exhausted",
            StopReason::AllSelected => "all vehicles selected",
            StopReason::NoPositiveScore => "no remaining candidate adds value",
            StopReason::NoAffordableVehicle => "budget is smaller than every vehicle cost",
            StopReason::Optimal => "exhaustive search complete",
        };
        f.write_str(text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pick {
    pub vehicle_id: String,
    /// Marginal gain in sensing utility at the time of the pick.
    pub gain: f64,
    /// Per-unit-cost score the strategy ranked candidates by.
    pub score: f64,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetSelection {
    pub strategy: Strategy,
    pub seed: u64,
    pub budget: f64,
    pub picks: Vec<Pick>,
    pub total_cost: f64,
    pub final_utility: f64,
    pub stop_reason: StopReason,
    /// Left out of the JSON form so that repeated runs serialize identically.
    #[serde(skip)]
    pub wall_time_ms: f64,
    /// Model indices of the picks, in pick order.
    #[serde(skip)]
    pub indices: Vec<usize>,
    /// Number of candidate score evaluations performed.
    #[serde(skip)]
    pub evaluations: u64,
}

impl FleetSelection {
    pub fn selected_ids(&self) -> Vec<&str> {
        self.picks.iter().map(|p| p.vehicle_id.as_str()).collect()
    }

    pub fn per_step_gain(&self) -> Vec<f64> {
        self.picks.iter().map(|p| p.gain).collect()
    }

    pub fn per_step_score(&self) -> Vec<f64> {
        self.picks.iter().map(|p| p.score).collect()
    }

    pub fn len(&self) -> usize {
        self.picks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.picks.is_empty()
    }

    /// Recovers model indices from vehicle ids, e.g. after loading from JSON.
    pub fn resolve(&mut self, vehicle_ids: &[String]) -> Result<()> {
        self.indices = self
            .picks
            .iter()
            .map(|p| {
                vehicle_ids
                    .iter()
                    .position(|id| *id == p.vehicle_id)
                    .ok_or_else(|| Error::Validation(format!("selected vehicle `{}` is not in the model", p.vehicle_id)))
            })
            .collect::<Result<_>>()?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Accumulates picks and assembles the final record.
pub(crate) struct SelectionBuilder<'a> {
    problem: &'a SelectionProblem<'a>,
    started: Instant,
    picks: Vec<Pick>,
    indices: Vec<usize>,
    total_cost: f64,
    pub(crate) evaluations: u64,
}

impl<'a> SelectionBuilder<'a> {
    pub(crate) fn new(problem: &'a SelectionProblem<'a>) -> Self {
        SelectionBuilder {
            problem,
            started: Instant::now(),
            picks: Vec::new(),
            indices: Vec::new(),
            total_cost: 0.0,
            evaluations: 0,
        }
    }

    /// Whether `v` fits next to what has been spent so far.
    pub(crate) fn affordable(&self, v: usize) -> bool {
        self.total_cost + self.problem.model.cost[v] <= self.problem.budget
    }

    pub(crate) fn push(&mut self, v: usize, gain: f64, score: f64) {
        let cost = self.problem.model.cost[v];
        self.total_cost += cost;
        self.indices.push(v);
        self.picks.push(Pick {
            vehicle_id: self.problem.model.vehicle_ids[v].clone(),
            gain,
            score,
            cost,
        });
    }

    /// Stop reason when the candidate pool ran dry.
    pub(crate) fn exhausted_reason(&self, is_selected: impl Fn(usize) -> bool) -> StopReason {
        let n = self.problem.model.n_vehicles();
        if (0..n).all(&is_selected) {
            StopReason::AllSelected
        } else if self.picks.is_empty() {
            StopReason::NoAffordableVehicle
        } else {
            StopReason::BudgetExhausted
        }
    }

    pub(crate) fn finish(self, stop_reason: StopReason) -> FleetSelection {
        let model = self.problem.model;
        let layers: Vec<_> = self.indices.iter().map(|&v| &model.q[v]).collect();
        let coverage = coverage_probability(&layers, model.n_points);
        let final_utility = sensing_utility(&coverage, self.problem.w()).expect("validated dimensions");
        FleetSelection {
            strategy: self.problem.strategy,
            seed: self.problem.rng_seed,
            budget: self.problem.budget,
            picks: self.picks,
            total_cost: self.total_cost,
            final_utility,
            stop_reason,
            wall_time_ms: self.started.elapsed().as_secs_f64() * 1e3,
            indices: self.indices,
            evaluations: self.evaluations,
        }
    }
}

/// Runs the problem's strategy. `lazy` routes OptiFleet through the lazy accelerator.
pub fn select(problem: &SelectionProblem<'_>, lazy: bool) -> Result<FleetSelection> {
    match problem.strategy {
        Strategy::Random => select_random(problem),
        Strategy::Tsub => select_tsub(problem),
        Strategy::OptiFleet if lazy => lazy_greedy_accelerator(problem),
        Strategy::OptiFleet => select_optifleet(problem),
        Strategy::ImprovedOptiFleet => select_improved_optifleet(problem),
        Strategy::Exact => select_exact(problem, EXACT_MAX_VEHICLES),
    }
}
