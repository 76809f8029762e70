//! Reference strategies: random assignment and the distinct-visitor (TSUB) utility.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::greedy::{run_greedy, GreedyObjective};
use super::{FleetSelection, SelectionBuilder, SelectionProblem};
use crate::error::Result;
use crate::utility::{marginal_gain, CoverageState};

pub const DEFAULT_TSUB_BETA: f64 = 1.85;

/// Shuffles the fleet with the problem seed and takes vehicles in that order while they fit.
pub fn select_random(problem: &SelectionProblem<'_>) -> Result<FleetSelection> {
    problem.validate()?;
    let model = problem.model;
    let w = problem.w();
    let mut order: Vec<usize> = (0..model.n_vehicles()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(problem.rng_seed);
    order.shuffle(&mut rng);

    let mut builder = SelectionBuilder::new(problem);
    let mut coverage = CoverageState::new(model.n_points);
    for v in order {
        if !builder.affordable(v) {
            continue;
        }
        let gain = marginal_gain(&coverage, &model.q[v], w);
        coverage.add(v, &model.q[v], w)?;
        builder.push(v, gain, gain / model.cost[v]);
    }
    let stop = builder.exhausted_reason(|v| coverage.contains(v));
    Ok(builder.finish(stop))
}

/// `ξ(n + 1) - ξ(n)` with `ξ(n) = n^β`.
pub fn tsub_increment(n: u32, beta: f64) -> f64 {
    f64::from(n + 1).powf(beta) - f64::from(n).powf(beta)
}

/// Greedy on `U(S) = sum w (N(S))^β`, where `N` counts selected vehicles seen in a cell.
struct DistinctVisitors<'a> {
    problem: &'a SelectionProblem<'a>,
    visitors: Vec<u32>,
    /// `increments[n] = ξ(n + 1) - ξ(n)`.
    increments: Vec<f64>,
}

impl GreedyObjective for DistinctVisitors<'_> {
    fn score(&self, _coverage: &CoverageState, u: usize) -> f64 {
        let w = self.problem.w();
        self.problem.model.q[u]
            .idx
            .iter()
            .map(|&k| w[k as usize] * self.increments[self.visitors[k as usize] as usize])
            .sum()
    }

    fn accept(&mut self, u: usize) {
        for &k in &self.problem.model.q[u].idx {
            self.visitors[k as usize] += 1;
        }
    }
}

/// Greedy per-unit-cost selection on the TSUB objective. The reported utility and
/// per-step gains are still measured with the coverage utility.
pub fn select_tsub(problem: &SelectionProblem<'_>) -> Result<FleetSelection> {
    problem.validate()?;
    let n = problem.model.n_vehicles() as u32;
    let objective = DistinctVisitors {
        problem,
        visitors: vec![0; problem.model.n_points],
        increments: (0..=n).map(|i| tsub_increment(i, problem.tsub_beta)).collect(),
    };
    run_greedy(problem, objective)
}
