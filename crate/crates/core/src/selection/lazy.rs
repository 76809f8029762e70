//! Lazy greedy evaluation for OptiFleet.
//!
//! Under submodularity a candidate's gain per unit cost can only shrink as the fleet
//! grows, so a score computed at an earlier step is an upper bound. Candidates sit in
//! a max-heap keyed by their last score (ties: smaller id first); only the top is
//! rescored, and it is accepted once it is on top with a score from the current step.
//! Heap order matches the plain greedy's argmax and tie-breaking, so both produce the
//! same picks in the same order.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::{FleetSelection, SelectionBuilder, SelectionProblem, StopReason, Strategy};
use crate::error::{Error, Result};
use crate::utility::{marginal_gain, CoverageState};

#[derive(Debug, Clone, Copy)]
struct Entry {
    score: f64,
    rank: usize,
    vehicle: usize,
    /// Fleet size when `score` was computed.
    round: usize,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then_with(|| other.rank.cmp(&self.rank))
    }
}

pub fn lazy_greedy_accelerator(problem: &SelectionProblem<'_>) -> Result<FleetSelection> {
    if problem.strategy != Strategy::OptiFleet {
        return Err(Error::Config(format!(
            "lazy evaluation applies to optifleet only, not {}",
            problem.strategy
        )));
    }
    problem.validate()?;
    let model = problem.model;
    let w = problem.w();
    let rank = problem.id_rank();
    let mut builder = SelectionBuilder::new(problem);
    let mut coverage = CoverageState::new(model.n_points);

    let mut heap: BinaryHeap<Entry> = (0..model.n_vehicles())
        .filter(|&v| builder.affordable(v))
        .map(|v| Entry {
            score: marginal_gain(&coverage, &model.q[v], w) / model.cost[v],
            rank: rank[v],
            vehicle: v,
            round: 0,
        })
        .collect();
    builder.evaluations += heap.len() as u64;

    let stop = loop {
        let Some(mut top) = heap.pop() else {
            break builder.exhausted_reason(|v| coverage.contains(v));
        };
        // The remaining budget only shrinks, so an unaffordable vehicle stays unaffordable.
        if !builder.affordable(top.vehicle) {
            continue;
        }
        let round = coverage.selected().len();
        if top.round != round {
            top.score = marginal_gain(&coverage, &model.q[top.vehicle], w) / model.cost[top.vehicle];
            top.round = round;
            builder.evaluations += 1;
            heap.push(top);
            continue;
        }
        if (top.score.is_nan() || top.score <= 0.0) && !problem.spend_full_budget {
            break StopReason::NoPositiveScore;
        }
        let gain = coverage.add(top.vehicle, &model.q[top.vehicle], w)?;
        builder.push(top.vehicle, gain, top.score);
    };
    Ok(builder.finish(stop))
}
