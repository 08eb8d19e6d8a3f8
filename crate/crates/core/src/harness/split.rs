use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::rng;

/// Trajectory indices of each partition, each list ascending.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Partition sizes: train and validation are rounded, test takes the rest.
pub fn split_counts(n: usize, fractions: [f64; 3]) -> (usize, usize, usize) {
    let train = (num_traits::Float::round(n as f64 * fractions[0]) as usize).min(n);
    let val = (num_traits::Float::round(n as f64 * fractions[1]) as usize).min(n - train);
    (train, val, n - train - val)
}

/// Seeded shuffle of `0..n`, cut into train/val/test. The stream is keyed by
/// the dataset name so a dataset splits the same way in every experiment.
pub fn split_dataset(n: usize, fractions: [f64; 3], seed: u64, name: &str) -> Split {
    let mut order: Vec<usize> = (0..n).collect();
    rng::shuffle(&mut rng::named_stream(seed, &format!("split/{name}")), &mut order);
    let (a, b, _) = split_counts(n, fractions);
    let part = |r: core::ops::Range<usize>| {
        let mut v = order[r].to_vec();
        v.sort_unstable();
        v
    };
    Split {
        train: part(0..a),
        val: part(a..a + b),
        test: part(a + b..n),
    }
}
