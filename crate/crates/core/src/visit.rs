//! Probabilistic views of per-vehicle visit counts.
//!
//! A vehicle's visits are used in two incompatible roles:
//!
//! * `q[v][g][t]` is a Bernoulli coverage probability, the fraction of observation days
//!   on which `v` visited `(g, t)`. It feeds the "at least one vehicle covers" product and
//!   is bounded in `[0, 1]` per cell, but does not sum to one.
//! * `pi[v][g][t]` is `v`'s share of its own visits landing in `(g, t)`. It sums to one
//!   over the whole space and is what trajectory entropy is computed from.
//!
//! Keeping them apart lets each formula receive the object it is defined on.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::ingest::VisitCounts;
use crate::layer::SparseLayer;

pub const CACHE_FORMAT: &str = "fleetsense-visit-model";
pub const CACHE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisitModel {
    pub grid_hash: String,
    pub n_points: usize,
    pub vehicle_ids: Vec<String>,
    pub q: Vec<SparseLayer>,
    pub pi: Vec<SparseLayer>,
    pub cost: Vec<f64>,
}

impl VisitModel {
    pub fn from_counts(counts: &VisitCounts, grid: &GridSpec) -> Self {
        VisitModel {
            grid_hash: grid.content_hash(),
            n_points: counts.n_points,
            vehicle_ids: counts.vehicle_ids.clone(),
            q: derive_coverage_prob(counts),
            pi: derive_trajectory_dist(counts),
            cost: vec![1.0; counts.n_vehicles()],
        }
    }

    pub fn n_vehicles(&self) -> usize {
        self.vehicle_ids.len()
    }

    pub fn vehicle_index(&self, id: &str) -> Option<usize> {
        self.vehicle_ids.iter().position(|v| v == id)
    }

    /// Vehicles with no in-bounds record.
    pub fn is_degenerate(&self, v: usize) -> bool {
        self.pi[v].is_empty()
    }

    pub fn with_costs(mut self, cost: Vec<f64>) -> Result<Self> {
        if cost.len() != self.n_vehicles() {
            return Err(Error::Dimension {
                expected: self.n_vehicles(),
                actual: cost.len(),
            });
        }
        if let Some(c) = cost.iter().find(|c| !(c.is_finite() && **c > 0.0)) {
            return Err(Error::Validation(format!("vehicle costs must be positive, got {c}")));
        }
        self.cost = cost;
        Ok(self)
    }

    /// Restricts the model to a subset of vehicles, preserving their relative order.
    pub fn subset(&self, vehicles: &[usize]) -> Self {
        VisitModel {
            grid_hash: self.grid_hash.clone(),
            n_points: self.n_points,
            vehicle_ids: vehicles.iter().map(|&v| self.vehicle_ids[v].clone()).collect(),
            q: vehicles.iter().map(|&v| self.q[v].clone()).collect(),
            pi: vehicles.iter().map(|&v| self.pi[v].clone()).collect(),
            cost: vehicles.iter().map(|&v| self.cost[v]).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_vehicles();
        if self.q.len() != n || self.pi.len() != n || self.cost.len() != n {
            return Err(Error::Validation("visit model arrays disagree on vehicle count".into()));
        }
        for v in 0..n {
            if self.q[v].val.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
                return Err(Error::Validation(format!("q out of [0,1] for {}", self.vehicle_ids[v])));
            }
            let total = self.pi[v].sum();
            if !self.pi[v].is_empty() && (total - 1.0).abs() > 1e-9 {
                return Err(Error::Validation(format!(
                    "trajectory distribution of {} sums to {total}",
                    self.vehicle_ids[v]
                )));
            }
            if !(self.cost[v].is_finite() && self.cost[v] > 0.0) {
                return Err(Error::Validation(format!("non-positive cost for {}", self.vehicle_ids[v])));
            }
            for layer in [&self.q[v], &self.pi[v]] {
                if layer.max_index().is_some_and(|k| k >= self.n_points) || layer.idx.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::Validation(format!("malformed layer for {}", self.vehicle_ids[v])));
                }
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let cache = CacheRef {
            format: CACHE_FORMAT,
            version: CACHE_VERSION,
            model: self,
        };
        serde_json::to_writer(BufWriter::new(file), &cache)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let cache: CacheOwned = serde_json::from_reader(BufReader::new(file))?;
        if cache.format != CACHE_FORMAT || cache.version != CACHE_VERSION {
            return Err(Error::Validation(format!(
                "{} is not a version {CACHE_VERSION} visit model cache (found {} v{})",
                path.display(),
                cache.format,
                cache.version
            )));
        }
        cache.model.validate()?;
        Ok(cache.model)
    }
}

#[derive(Serialize)]
struct CacheRef<'a> {
    format: &'a str,
    version: u32,
    #[serde(flatten)]
    model: &'a VisitModel,
}

#[derive(Deserialize)]
struct CacheOwned {
    format: String,
    version: u32,
    #[serde(flatten)]
    model: VisitModel,
}

/// `q = day_presence / n_days` per `(v, g, t)`.
pub fn derive_coverage_prob(counts: &VisitCounts) -> Vec<SparseLayer> {
    let n_days = f64::from(counts.n_days.max(1));
    counts
        .entries
        .iter()
        .map(|row| SparseLayer::from_sorted(row.iter().map(|e| (e.k, (f64::from(e.days) / n_days).min(1.0)))))
        .collect()
}

/// `pi = count / total count` per vehicle; empty for vehicles without in-bounds records.
pub fn derive_trajectory_dist(counts: &VisitCounts) -> Vec<SparseLayer> {
    counts
        .entries
        .iter()
        .map(|row| {
            let total: u64 = row.iter().map(|e| u64::from(e.count)).sum();
            if total == 0 {
                return SparseLayer::new();
            }
            let total = total as f64;
            SparseLayer::from_sorted(row.iter().map(|e| (e.k, f64::from(e.count) / total)))
        })
        .collect()
}

/// Per-vehicle costs from a `vehicle_id,cost` CSV. Vehicles absent from the file get `default`.
/// Unknown ids are logged and ignored.
pub fn load_costs(path: Option<&Path>, vehicle_ids: &[String], default: f64) -> Result<Vec<f64>> {
    if !(default.is_finite() && default > 0.0) {
        return Err(Error::Validation(format!("default cost must be positive, got {default}")));
    }
    let mut cost = vec![default; vehicle_ids.len()];
    let Some(path) = path else {
        return Ok(cost);
    };
    let lookup: HashMap<&str, usize> = vehicle_ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    for row in reader.records() {
        let row = row?;
        if row.len() < 2 {
            return Err(Error::Validation(format!("{}: malformed cost row {:?}", path.display(), row)));
        }
        let id = &row[0];
        let value: f64 = row[1]
            .parse()
            .map_err(|_| Error::Validation(format!("{}: invalid cost `{}` for {id}", path.display(), &row[1])))?;
        if !(value.is_finite() && value > 0.0) {
            return Err(Error::Validation(format!("cost for {id} must be positive, got {value}")));
        }
        match lookup.get(id) {
            Some(&v) => cost[v] = value,
            None => warn!("cost file names unknown vehicle `{id}`, ignoring"),
        }
    }
    Ok(cost)
}
