//! Sensing-utility kernels over the flattened `G × T` space.
//!
//! Candidate layers are sparse, the fleet coverage `P` is dense. All reductions use
//! pairwise summation so that incremental and from-scratch evaluations agree to well
//! below `1e-9` even on ~10^5 cells.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::layer::SparseLayer;
use crate::numeric::{entropy_term, pairwise_sum, PairwiseSum};

/// Above this many members the coverage product is evaluated in log space.
const LOG_SPACE_THRESHOLD: usize = 32;

/// `P = 1 - prod_v (1 - q_v)` for every cell. An empty fleet covers nothing.
pub fn coverage_probability(layers: &[&SparseLayer], n_points: usize) -> Vec<f64> {
    if layers.len() <= LOG_SPACE_THRESHOLD {
        let mut miss = vec![1.0; n_points];
        for layer in layers {
            for (k, q) in layer.iter() {
                miss[k] *= 1.0 - q;
            }
        }
        return miss.into_iter().map(|m| 1.0 - m).collect();
    }
    // sum of log1p(-q) with certain coverage (q = 1) tracked separately
    let mut log_miss = vec![0.0; n_points];
    let mut certain = vec![false; n_points];
    for layer in layers {
        for (k, q) in layer.iter() {
            if q >= 1.0 {
                certain[k] = true;
            } else {
                log_miss[k] += (-q).ln_1p();
            }
        }
    }
    log_miss
        .into_iter()
        .zip(certain)
        .map(|(l, c)| if c { 1.0 } else { -l.exp_m1() })
        .collect()
}

/// `f = sum w * P`.
pub fn sensing_utility(p: &[f64], w: &[f64]) -> Result<f64> {
    if p.len() != w.len() {
        return Err(Error::Dimension {
            expected: w.len(),
            actual: p.len(),
        });
    }
    let products: Vec<f64> = p.iter().zip(w).map(|(p, w)| p * w).collect();
    Ok(pairwise_sum(&products))
}

/// Coverage of the currently selected fleet, with its cached utility.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageState {
    p: Vec<f64>,
    selected: Vec<usize>,
    members: BTreeSet<usize>,
    utility: f64,
}

impl CoverageState {
    pub fn new(n_points: usize) -> Self {
        CoverageState {
            p: vec![0.0; n_points],
            selected: Vec::new(),
            members: BTreeSet::new(),
            utility: 0.0,
        }
    }

    pub fn coverage(&self) -> &[f64] {
        &self.p
    }

    /// Selected vehicles in insertion order.
    pub fn selected(&self) -> &[usize] {
        &self.selected
    }

    pub fn contains(&self, v: usize) -> bool {
        self.members.contains(&v)
    }

    /// Cached `f(S)`, maintained by summing marginal gains.
    pub fn utility(&self) -> f64 {
        self.utility
    }

    pub fn n_points(&self) -> usize {
        self.p.len()
    }

    /// Coverage after adding `u`, without modifying the state:
    /// `P' = 1 - (1 - P)(1 - q_u)`, evaluated as `P + q_u (1 - P)`.
    pub fn incremental_coverage(&self, u: usize, q_u: &SparseLayer) -> Result<Vec<f64>> {
        if self.contains(u) {
            return Err(Error::DuplicateVehicle(u.to_string()));
        }
        let mut next = self.p.clone();
        for (k, q) in q_u.iter() {
            next[k] += q * (1.0 - next[k]);
        }
        Ok(next)
    }

    /// Adds `u` to the fleet and returns its marginal gain.
    pub fn add(&mut self, u: usize, q_u: &SparseLayer, w: &[f64]) -> Result<f64> {
        if self.contains(u) {
            return Err(Error::DuplicateVehicle(u.to_string()));
        }
        let gain = marginal_gain(self, q_u, w);
        for (k, q) in q_u.iter() {
            self.p[k] += q * (1.0 - self.p[k]);
        }
        self.selected.push(u);
        self.members.insert(u);
        self.utility += gain;
        Ok(gain)
    }
}

/// `Δ_u = sum w (P' - P)`, evaluated as `sum w q_u (1 - P)` over the support of `q_u`.
pub fn marginal_gain(state: &CoverageState, q_u: &SparseLayer, w: &[f64]) -> f64 {
    let p = state.coverage();
    q_u.iter()
        .map(|(k, q)| w[k] * q * (1.0 - p[k]))
        .collect::<PairwiseSum>()
        .total()
}

/// Shannon entropy in bits of a trajectory distribution; 0 for the all-zero layer.
pub fn trajectory_entropy(pi: &SparseLayer) -> f64 {
    pi.val.iter().map(|&x| entropy_term(x)).collect::<PairwiseSum>().total()
}

/// `p̃ = q_u (1 - P) w`: the part of `u`'s coverage not already provided by the fleet, weighted.
pub fn effective_coverage(q_u: &SparseLayer, state: &CoverageState, w: &[f64]) -> SparseLayer {
    let p = state.coverage();
    SparseLayer::from_sorted(q_u.iter().map(|(k, q)| (k as u32, q * (1.0 - p[k]) * w[k])))
}

/// `-sum p̃ log2 p̃`, applied entrywise without renormalizing `p̃`.
pub fn effective_entropy(p_tilde: &SparseLayer) -> f64 {
    p_tilde.val.iter().map(|&x| entropy_term(x)).collect::<PairwiseSum>().total()
}

/// Fused [`effective_coverage`] + [`effective_entropy`] without the intermediate layer.
pub fn effective_entropy_of(q_u: &SparseLayer, state: &CoverageState, w: &[f64]) -> f64 {
    let p = state.coverage();
    q_u.iter()
        .map(|(k, q)| entropy_term(q * (1.0 - p[k]) * w[k]))
        .collect::<PairwiseSum>()
        .total()
}

/// Writes a coverage layer as `g,t,p` rows, skipping zero cells.
pub fn dump_coverage_csv(p: &[f64], grid: &GridSpec, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    let mut write = || -> std::io::Result<()> {
        writeln!(out, "g,t,p")?;
        for (k, &value) in p.iter().enumerate() {
            if value > 0.0 {
                let (g, t) = grid.unflat(k);
                writeln!(out, "{g},{t},{value}")?;
            }
        }
        out.flush()
    };
    write().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layer(values: &[f64]) -> SparseLayer {
        SparseLayer::from_dense(values)
    }

    #[test]
    fn two_half_probabilities_cover_three_quarters() {
        let a = layer(&[0.5, 0.0]);
        let b = layer(&[0.5, 0.0]);
        assert_eq!(coverage_probability(&[&a, &b], 2), vec![0.75, 0.0]);
    }

    #[test]
    fn empty_fleet_and_absorbing_member() {
        assert_eq!(coverage_probability(&[], 3), vec![0.0; 3]);
        let a = layer(&[1.0, 0.3]);
        let b = layer(&[0.2, 0.3]);
        assert_eq!(coverage_probability(&[&a, &b], 2)[0], 1.0);
        let many: Vec<SparseLayer> = (0..40).map(|_| layer(&[0.1, 0.0])).chain([layer(&[1.0, 0.0])]).collect();
        let refs: Vec<&SparseLayer> = many.iter().collect();
        assert_eq!(coverage_probability(&refs, 2), vec![1.0, 0.0]);
    }

    #[test]
    fn log_space_matches_product() {
        let many: Vec<SparseLayer> = (0..50).map(|i| layer(&[0.01 * (i % 7) as f64, 0.02])).collect();
        let refs: Vec<&SparseLayer> = many.iter().collect();
        let log_route = coverage_probability(&refs, 2);
        let mut miss = [1.0f64; 2];
        for l in &many {
            miss[0] *= 1.0 - l.get(0);
            miss[1] *= 1.0 - l.get(1);
        }
        assert!((log_route[0] - (1.0 - miss[0])).abs() < 1e-12);
        assert!((log_route[1] - (1.0 - miss[1])).abs() < 1e-12);
    }

    #[test]
    fn utility_is_weighted_sum() {
        assert_eq!(sensing_utility(&vec![1.0; 384], &vec![1.0; 384]).unwrap(), 384.0);
        assert_eq!(sensing_utility(&[0.0, 0.0], &[1.0, 0.5]).unwrap(), 0.0);
        assert_eq!(sensing_utility(&[0.5, 1.0], &[1.0, 0.5]).unwrap(), 1.0);
        assert!(matches!(sensing_utility(&[0.5], &[1.0, 0.5]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn incremental_update_examples() {
        let w = [1.0; 2];
        let mut state = CoverageState::new(2);
        state.add(0, &layer(&[0.5, 0.0]), &w).unwrap();
        state.add(1, &layer(&[0.5, 0.0]), &w).unwrap();
        assert_eq!(state.coverage()[0], 0.75);
        assert_eq!(state.incremental_coverage(2, &layer(&[0.5, 0.0])).unwrap()[0], 0.875);
        assert_eq!(state.incremental_coverage(2, &layer(&[0.0, 0.0])).unwrap(), state.coverage());
        assert!(matches!(state.incremental_coverage(0, &layer(&[0.5, 0.0])), Err(Error::DuplicateVehicle(_))));

        let fresh = CoverageState::new(2);
        assert_eq!(fresh.incremental_coverage(0, &layer(&[0.3, 0.0])).unwrap(), vec![0.3, 0.0]);
    }

    #[test]
    fn marginal_gain_examples() {
        let w = [1.0, 0.5, 1.0];
        let q = layer(&[0.4, 0.8, 0.0]);
        let empty = CoverageState::new(3);
        let solo = sensing_utility(&coverage_probability(&[&q], 3), &w).unwrap();
        assert!((marginal_gain(&empty, &q, &w) - solo).abs() < 1e-15);
        assert_eq!(marginal_gain(&empty, &layer(&[0.0; 3]), &w), 0.0);

        let mut state = CoverageState::new(3);
        state.add(0, &q, &w).unwrap();
        let duplicate_gain = marginal_gain(&state, &q, &w);
        assert!(duplicate_gain < solo);
        // 0.4*0.6 + 0.5*0.8*0.2
        assert!((duplicate_gain - 0.32).abs() < 1e-15);
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(trajectory_entropy(&layer(&[0.25; 4])), 2.0);
        assert_eq!(trajectory_entropy(&layer(&[0.0, 1.0, 0.0])), 0.0);
        // -(0.75 log2 0.75 + 0.25 log2 0.25), evaluated by hand: 0.311278 + 0.5
        assert!((trajectory_entropy(&layer(&[0.75, 0.25])) - 0.811_278_124_459_132_9).abs() < 1e-12);
        assert_eq!(trajectory_entropy(&SparseLayer::new()), 0.0);
    }

    #[test]
    fn effective_coverage_examples() {
        let mut state = CoverageState::new(2);
        state.add(0, &layer(&[1.0, 0.5]), &[1.0, 1.0]).unwrap();
        let p_tilde = effective_coverage(&layer(&[0.9, 0.8]), &state, &[1.0, 0.5]);
        assert_eq!(p_tilde.get(0), 0.0);
        assert!((p_tilde.get(1) - 0.2).abs() < 1e-15);

        let empty = CoverageState::new(2);
        let q = layer(&[0.3, 0.7]);
        assert_eq!(effective_coverage(&q, &empty, &[1.0, 1.0]), q);
    }

    #[test]
    fn effective_entropy_examples() {
        assert_eq!(effective_entropy(&SparseLayer::new()), 0.0);
        assert_eq!(effective_entropy(&layer(&[0.5])), 0.5);
        assert_eq!(effective_entropy(&layer(&[0.5, 0.5])), 1.0);
        let q = layer(&[0.5, 0.25, 0.0, 0.9]);
        let state = CoverageState::new(4);
        let w = [1.0, 0.3, 1.0, 0.7];
        assert_eq!(effective_entropy(&effective_coverage(&q, &state, &w)), effective_entropy_of(&q, &state, &w));
    }

    #[test]
    fn dump_writes_nonzero_cells() {
        let grid = GridSpec::new(23.0, 113.0, 500.0, 1, 2, 720, 1).unwrap();
        let file = tempfile::NamedTempFile::new().unwrap();
        dump_coverage_csv(&[0.0, 0.5, 0.0, 1.0], &grid, file.path()).unwrap();
        let text = std::fs::read_to_string(file.path()).unwrap();
        assert_eq!(text, "g,t,p\n0,1,0.5\n1,1,1\n");
    }
}
