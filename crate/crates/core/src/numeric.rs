//! Summation helpers for the large `G × T` reductions.

const BLOCK: usize = 32;

/// Pairwise (cascade) sum of a slice. Error grows as `O(log n)` rather than `O(n)`.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= BLOCK {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Streaming pairwise summation.
///
/// Values are summed naively in blocks of 32; completed blocks are combined like a
/// binary counter so that only partial sums of equal size are ever added together.
#[derive(Debug, Clone, Default)]
pub struct PairwiseSum {
    block: f64,
    block_len: usize,
    /// `levels[i]` holds a partial sum of `2^i` blocks, if occupied.
    levels: Vec<Option<f64>>,
}

impl PairwiseSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, value: f64) {
        self.block += value;
        self.block_len += 1;
        if self.block_len == BLOCK {
            let mut carry = std::mem::take(&mut self.block);
            self.block_len = 0;
            for level in self.levels.iter_mut() {
                match level.take() {
                    Some(existing) => carry += existing,
                    None => {
                        *level = Some(carry);
                        return;
                    }
                }
            }
            self.levels.push(Some(carry));
        }
    }

    pub fn total(&self) -> f64 {
        let mut acc = self.block;
        for level in self.levels.iter().flatten() {
            acc += level;
        }
        acc
    }
}

impl FromIterator<f64> for PairwiseSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut sum = PairwiseSum::new();
        for v in iter {
            sum.add(v);
        }
        sum
    }
}

/// `-x log2 x` with `0 log 0 = 0`.
pub fn entropy_term(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        -x * x.log2()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_exact_integer_sums() {
        for n in [0usize, 1, 31, 32, 33, 1000, 4097] {
            let values: Vec<f64> = (0..n).map(|i| i as f64).collect();
            let expected = (n * n.saturating_sub(1) / 2) as f64;
            assert_eq!(pairwise_sum(&values), expected);
            assert_eq!(values.iter().copied().collect::<PairwiseSum>().total(), expected);
        }
    }

    #[test]
    fn small_drift_on_many_tenths() {
        let values = vec![0.1; 1_000_000];
        let streamed: PairwiseSum = values.iter().copied().collect();
        assert!((pairwise_sum(&values) - 100_000.0).abs() < 1e-8);
        assert!((streamed.total() - 100_000.0).abs() < 1e-8);
    }

    #[test]
    fn entropy_term_convention() {
        assert_eq!(entropy_term(0.0), 0.0);
        assert_eq!(entropy_term(1.0), 0.0);
        assert_eq!(entropy_term(0.5), 0.5);
    }
}
