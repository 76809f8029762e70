use serde::{Deserialize, Serialize};

/// Sparse values over the flattened `G × T` space, indices strictly increasing.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseLayer {
    pub idx: Vec<u32>,
    pub val: Vec<f64>,
}

impl SparseLayer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a layer from `(k, value)` pairs sorted by `k`. Zero values are dropped.
    pub fn from_sorted<I: IntoIterator<Item = (u32, f64)>>(pairs: I) -> Self {
        let mut layer = SparseLayer::new();
        for (k, v) in pairs {
            debug_assert!(layer.idx.last().is_none_or(|&last| last < k), "indices must increase");
            if v != 0.0 {
                layer.idx.push(k);
                layer.val.push(v);
            }
        }
        layer
    }

    pub fn from_dense(values: &[f64]) -> Self {
        Self::from_sorted(values.iter().enumerate().map(|(k, &v)| (k as u32, v)))
    }

    pub fn to_dense(&self, n_points: usize) -> Vec<f64> {
        let mut dense = vec![0.0; n_points];
        for (k, v) in self.iter() {
            dense[k] = v;
        }
        dense
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.idx.iter().zip(&self.val).map(|(&k, &v)| (k as usize, v))
    }

    pub fn get(&self, k: usize) -> f64 {
        self.idx
            .binary_search(&(k as u32))
            .map_or(0.0, |i| self.val[i])
    }

    pub fn len(&self) -> usize {
        self.idx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.idx.is_empty()
    }

    pub fn max_index(&self) -> Option<usize> {
        self.idx.last().map(|&k| k as usize)
    }

    pub fn sum(&self) -> f64 {
        crate::numeric::pairwise_sum(&self.val)
    }
}
