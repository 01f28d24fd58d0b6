use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{PartitionAssignment, PartitionSpec};
use crate::embed::{dot, Embedding};
use crate::error::Result;

/// Number of sign bits needed to address `m` buckets.
fn code_bits(m: usize) -> usize {
    (usize::BITS - (m.max(1) - 1).leading_zeros()) as usize
}

/// Random-hyperplane LSH: each vector's ⌈log₂ M⌉-bit sign code, taken
/// modulo M, is its partition.
pub fn partition_randomization(vectors: &[Embedding], spec: &PartitionSpec) -> Result<PartitionAssignment> {
    spec.validate(vectors.len())?;
    let bits = code_bits(spec.m);
    let dim = vectors.first().map_or(0, Embedding::dim);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let planes: Vec<Vec<f64>> = (0..bits).map(|_| (0..dim).map(|_| rng.sample(StandardNormal)).collect()).collect();
    let labels: Vec<usize> = vectors
        .iter()
        .map(|v| {
            let code = planes
                .iter()
                .enumerate()
                .fold(0usize, |acc, (b, plane)| if dot(plane, v.values()) >= 0.0 { acc | (1 << b) } else { acc });
            code % spec.m
        })
        .collect();
    Ok(PartitionAssignment::from_labels(spec.m, &labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partition::Strategy;

    fn random_units(n: usize, d: usize, seed: u64) -> Vec<Embedding> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| Embedding::normalized((0..d).map(|_| rng.sample(StandardNormal)).collect())).collect()
    }

    #[test]
    fn bit_counts() {
        assert_eq!(code_bits(1), 0);
        assert_eq!(code_bits(2), 1);
        assert_eq!(code_bits(3), 2);
        assert_eq!(code_bits(4), 2);
        assert_eq!(code_bits(5), 3);
    }

    #[test]
    fn single_partition() {
        let v = random_units(20, 8, 0);
        let a = partition_randomization(&v, &PartitionSpec::new(Strategy::Randomization, 1, 3)).unwrap();
        assert!(a.assignments.iter().all(|p| p == &vec![0]));
    }

    #[test]
    fn identical_vectors_share_a_partition() {
        let mut v = random_units(50, 16, 1);
        v.push(v[7].clone());
        let a = partition_randomization(&v, &PartitionSpec::new(Strategy::Randomization, 4, 5)).unwrap();
        assert_eq!(a.assignments[7], a.assignments[50]);
    }

    #[test]
    fn four_partitions_none_empty() {
        let v = random_units(1000, 32, 2);
        let a = partition_randomization(&v, &PartitionSpec::new(Strategy::Randomization, 4, 42)).unwrap();
        assert!(a.sizes().iter().all(|&s| s > 0), "{:?}", a.sizes());
    }
}
