//! Random instances shared by the integration tests.
#![allow(dead_code)]

use fleetsense::layer::SparseLayer;
use fleetsense::weights::WeightVariant;
use fleetsense::{VisitModel, WeightField};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A model built straight from dense q layers; pi is q renormalized.
pub fn model_from_q(q: &[Vec<f64>], cost: Vec<f64>) -> VisitModel {
    let n_points = q.first().map_or(0, Vec::len);
    let q: Vec<SparseLayer> = q.iter().map(|row| SparseLayer::from_dense(row)).collect();
    let pi = q
        .iter()
        .map(|layer| {
            let total = layer.sum();
            SparseLayer::from_sorted(layer.iter().map(|(k, v)| (k as u32, v / total)))
        })
        .collect();
    VisitModel {
        grid_hash: String::new(),
        n_points,
        vehicle_ids: (0..q.len()).map(|i| format!("v{i:03}")).collect(),
        q,
        pi,
        cost,
    }
}

pub fn weights(w: Vec<f64>) -> WeightField {
    WeightField {
        n_cells: w.len(),
        n_intervals: 1,
        w,
        variant: WeightVariant::Full,
        epsilon_floor: 0.01,
    }
}

/// Sparse q rows: each entry is nonzero with probability `density`, occasionally exactly 1.
pub fn random_q(rng: &mut ChaCha8Rng, n_vehicles: usize, n_points: usize, density: f64) -> Vec<Vec<f64>> {
    (0..n_vehicles)
        .map(|_| {
            (0..n_points)
                .map(|_| {
                    if rng.random::<f64>() >= density {
                        0.0
                    } else if rng.random::<f64>() < 0.05 {
                        1.0
                    } else {
                        // multiples of 1/7 mimic day fractions
                        rng.random_range(1..=7) as f64 / 7.0
                    }
                })
                .collect()
        })
        .collect()
}

pub fn random_weights(rng: &mut ChaCha8Rng, n_points: usize) -> Vec<f64> {
    (0..n_points).map(|_| rng.random_range(0.01..=1.0)).collect()
}

pub struct Instance {
    pub model: VisitModel,
    pub weights: WeightField,
}

/// A uniform-cost instance in the desk-small size range.
pub fn random_instance(seed: u64, n_vehicles: usize, n_points: usize) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let density = rng.random_range(0.05..0.4);
    let q = random_q(&mut rng, n_vehicles, n_points, density);
    let w = random_weights(&mut rng, n_points);
    Instance {
        model: model_from_q(&q, vec![1.0; n_vehicles]),
        weights: weights(w),
    }
}
