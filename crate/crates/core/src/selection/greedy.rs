use rayon::prelude::*;

use super::{FleetSelection, SelectionBuilder, SelectionProblem, StopReason};
use crate::error::Result;
use crate::utility::{effective_entropy_of, marginal_gain, CoverageState};

/// A greedy objective scored against the current fleet coverage.
pub(crate) trait GreedyObjective: Sync {
    /// Raw (cost-agnostic) score of adding `u`.
    fn score(&self, coverage: &CoverageState, u: usize) -> f64;

    /// Called after `u` joins the fleet.
    fn accept(&mut self, _u: usize) {}
}

pub(crate) struct MarginalGain<'a> {
    pub problem: &'a SelectionProblem<'a>,
}

impl GreedyObjective for MarginalGain<'_> {
    fn score(&self, coverage: &CoverageState, u: usize) -> f64 {
        marginal_gain(coverage, &self.problem.model.q[u], self.problem.w())
    }
}

pub(crate) struct EffectiveEntropy<'a> {
    pub problem: &'a SelectionProblem<'a>,
}

impl GreedyObjective for EffectiveEntropy<'_> {
    fn score(&self, coverage: &CoverageState, u: usize) -> f64 {
        effective_entropy_of(&self.problem.model.q[u], coverage, self.problem.w())
    }
}

/// Plain greedy: every affordable candidate is rescored at every step.
pub(crate) fn run_greedy<O: GreedyObjective>(problem: &SelectionProblem<'_>, mut objective: O) -> Result<FleetSelection> {
    problem.validate()?;
    let model = problem.model;
    let w = problem.w();
    let rank = problem.id_rank();
    let mut builder = SelectionBuilder::new(problem);
    let mut coverage = CoverageState::new(model.n_points);

    let stop = loop {
        let candidates: Vec<usize> = (0..model.n_vehicles())
            .filter(|&v| !coverage.contains(v) && builder.affordable(v))
            .collect();
        if candidates.is_empty() {
            break builder.exhausted_reason(|v| coverage.contains(v));
        }
        let scores: Vec<f64> = candidates
            .par_iter()
            .map(|&u| objective.score(&coverage, u) / model.cost[u])
            .collect();
        builder.evaluations += candidates.len() as u64;

        let mut best = 0;
        for i in 1..candidates.len() {
            let (s, b) = (scores[i], scores[best]);
            if s > b || (s == b && rank[candidates[i]] < rank[candidates[best]]) {
                best = i;
            }
        }
        let (u, score) = (candidates[best], scores[best]);
        if (score.is_nan() || score <= 0.0) && !problem.spend_full_budget {
            break StopReason::NoPositiveScore;
        }
        let gain = coverage.add(u, &model.q[u], w)?;
        objective.accept(u);
        builder.push(u, gain, score);
    };
    Ok(builder.finish(stop))
}

/// Greedy on marginal sensing-utility gain per unit cost.
pub fn select_optifleet(problem: &SelectionProblem<'_>) -> Result<FleetSelection> {
    run_greedy(problem, MarginalGain { problem })
}

/// Greedy on effective entropy per unit cost. Scores are recomputed for every
/// candidate each step since effective entropy carries no submodularity guarantee.
pub fn select_improved_optifleet(problem: &SelectionProblem<'_>) -> Result<FleetSelection> {
    run_greedy(problem, EffectiveEntropy { problem })
}
