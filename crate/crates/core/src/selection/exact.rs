//! Exhaustive search for small fleets, used as an optimality reference.

use super::{FleetSelection, SelectionBuilder, SelectionProblem, StopReason};
use crate::error::{Error, Result};
use crate::utility::{marginal_gain, CoverageState};

/// Largest fleet the exhaustive search accepts.
pub const EXACT_MAX_VEHICLES: usize = 20;

/// Utilities closer than this are treated as equal.
const TIE_TOLERANCE: f64 = 1e-12;

struct Search<'a> {
    problem: &'a SelectionProblem<'a>,
    /// Vehicles in id order.
    order: Vec<usize>,
    /// `bound[i]`: sum of solo gains of `order[i..]`, an upper bound on what they can add.
    bound: Vec<f64>,
    coverage: Vec<f64>,
    path: Vec<usize>,
    best: Vec<usize>,
    best_value: f64,
    visited: u64,
}

impl Search<'_> {
    /// Better utility wins; within tolerance, fewer vehicles, then the smaller id sequence.
    fn consider(&mut self, value: f64) {
        let better = if value > self.best_value + TIE_TOLERANCE * self.best_value.abs().max(1.0) {
            true
        } else if value >= self.best_value - TIE_TOLERANCE * self.best_value.abs().max(1.0) {
            // `order` is sorted by id, so comparing positions compares ids
            (self.path.len(), &self.path) < (self.best.len(), &self.best)
        } else {
            false
        };
        if better {
            self.best.clone_from(&self.path);
            self.best_value = value;
        }
    }

    fn dfs(&mut self, from: usize, value: f64, spent: f64) {
        self.visited += 1;
        self.consider(value);
        let slack = TIE_TOLERANCE * self.best_value.abs().max(1.0);
        for i in from..self.order.len() {
            if value + self.bound[i] < self.best_value - slack {
                return;
            }
            let v = self.order[i];
            let cost = self.problem.model.cost[v];
            if spent + cost > self.problem.budget {
                continue;
            }
            let q = &self.problem.model.q[v];
            let w = self.problem.w();
            let saved: Vec<f64> = q.idx.iter().map(|&k| self.coverage[k as usize]).collect();
            let mut gain = 0.0;
            for (k, qk) in q.iter() {
                let p = self.coverage[k];
                let inc = qk * (1.0 - p);
                gain += w[k] * inc;
                self.coverage[k] = p + inc;
            }
            self.path.push(i);
            self.dfs(i + 1, value + gain, spent + cost);
            self.path.pop();
            for (&k, p) in q.idx.iter().zip(saved) {
                self.coverage[k as usize] = p;
            }
        }
    }
}

/// Maximises the coverage utility over every subset within budget. Refuses fleets
/// larger than `max_vehicles`, which itself may not exceed [`EXACT_MAX_VEHICLES`].
pub fn select_exact(problem: &SelectionProblem<'_>, max_vehicles: usize) -> Result<FleetSelection> {
    problem.validate()?;
    if max_vehicles > EXACT_MAX_VEHICLES {
        return Err(Error::Config(format!(
            "exact search is limited to {EXACT_MAX_VEHICLES} vehicles, got a cap of {max_vehicles}"
        )));
    }
    let model = problem.model;
    let n = model.n_vehicles();
    if n > max_vehicles {
        return Err(Error::TooManyVehicles { cap: max_vehicles, actual: n });
    }
    let w = problem.w();
    let rank = problem.id_rank();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&v| rank[v]);

    let empty = CoverageState::new(model.n_points);
    let solo: Vec<f64> = order.iter().map(|&v| marginal_gain(&empty, &model.q[v], w)).collect();
    let mut bound = vec![0.0; n + 1];
    for i in (0..n).rev() {
        bound[i] = bound[i + 1] + solo[i];
    }

    let mut search = Search {
        problem,
        order,
        bound,
        coverage: vec![0.0; model.n_points],
        path: Vec::new(),
        best: Vec::new(),
        best_value: 0.0,
        visited: 0,
    };
    search.dfs(0, 0.0, 0.0);

    let mut builder = SelectionBuilder::new(problem);
    let mut state = CoverageState::new(model.n_points);
    for &i in &search.best {
        let v = search.order[i];
        let gain = state.add(v, &model.q[v], w)?;
        builder.push(v, gain, gain / model.cost[v]);
    }
    builder.evaluations = search.visited;
    Ok(builder.finish(StopReason::Optimal))
}
