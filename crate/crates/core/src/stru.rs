//! Structural program embeddings.
//!
//! A program's functions are classified to centroid labels, the labels are
//! deduplicated, and the label set is folded into an m-bit vector by signed
//! feature hashing: every label `k` adds `sign(k)` at position `position(k)`,
//! and a bit is set iff its accumulated sum is nonzero. Two labels that
//! collide with opposite signs therefore cancel.

use crate::corpus::{ProgramRecord, StructuralEmbedding};
use crate::error::{Error, Result};
use crate::kmeans::CentroidModel;

pub const DEFAULT_M: u32 = 1 << 16;
pub const MIN_M: u32 = 1 << 10;
pub const MAX_M: u32 = 1 << 18;
pub const DEFAULT_SEED_POSITION: u64 = 0x9E37_79B9_7F4A_7C15;
pub const DEFAULT_SEED_SIGN: u64 = 0xBF58_476D_1CE4_E5B9;

/// The splitmix64 output finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Position and sign hashes for folding labels into `m` bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureHasher {
    m: u32,
    seed_position: u64,
    seed_sign: u64,
}

impl Default for FeatureHasher {
    fn default() -> Self {
        Self {
            m: DEFAULT_M,
            seed_position: DEFAULT_SEED_POSITION,
            seed_sign: DEFAULT_SEED_SIGN,
        }
    }
}

impl FeatureHasher {
    pub fn new(m: u32, seed_position: u64, seed_sign: u64) -> Result<Self> {
        if !m.is_power_of_two() || !(MIN_M..=MAX_M).contains(&m) {
            return Err(Error::config(format!(
                "hashed length m={m} must be a power of two in [2^10, 2^18]"
            )));
        }
        Ok(Self {
            m,
            seed_position,
            seed_sign,
        })
    }

    pub fn with_m(m: u32) -> Result<Self> {
        Self::new(m, DEFAULT_SEED_POSITION, DEFAULT_SEED_SIGN)
    }

    pub fn m(&self) -> u32 {
        self.m
    }

    #[inline]
    pub fn position(&self, label: u64) -> u32 {
        (mix64(label ^ self.seed_position) & u64::from(self.m - 1)) as u32
    }

    #[inline]
    pub fn sign(&self, label: u64) -> i32 {
        if mix64(label ^ self.seed_sign) & 1 == 1 {
            1
        } else {
            -1
        }
    }

    /// Folds a label set into a bit-vector. Repeated labels count once.
    pub fn fold<I: IntoIterator<Item = u64>>(&self, labels: I) -> StructuralEmbedding {
        let mut labels: Vec<u64> = labels.into_iter().collect();
        labels.sort_unstable();
        labels.dedup();

        let mut slots: Vec<(u32, i32)> = labels
            .iter()
            .map(|&k| (self.position(k), self.sign(k)))
            .collect();
        slots.sort_unstable_by_key(|&(pos, _)| pos);

        let mut out = StructuralEmbedding::zeroed(self.m).expect("m validated at construction");
        for run in slots.chunk_by(|a, b| a.0 == b.0) {
            let sum: i64 = run.iter().map(|&(_, s)| i64::from(s)).sum();
            if sum != 0 {
                out.set(run[0].0);
            }
        }
        out
    }
}

/// Folds an already-deduplicated label set.
pub fn labels_to_bitvector<I: IntoIterator<Item = u64>>(
    labels: I,
    hasher: &FeatureHasher,
) -> StructuralEmbedding {
    hasher.fold(labels)
}

/// Classifies every function of `program` and folds the distinct labels.
/// A function-less program maps to the all-zero vector.
pub fn hash_program(
    program: &ProgramRecord,
    model: &CentroidModel,
    hasher: &FeatureHasher,
) -> Result<StructuralEmbedding> {
    let embeddings: Vec<&[f32]> = program.embeddings().collect();
    let assignment = model
        .classify(&embeddings)
        .map_err(|e| Error::Validation(format!("program {:?}: {e}", program.program_id)))?;
    Ok(hasher.fold(assignment.labels.into_iter().map(u64::from)))
}

/// `|a AND b| / |a OR b|`, or 1.0 when both vectors are all-zero.
pub fn jaccard(a: &StructuralEmbedding, b: &StructuralEmbedding) -> Result<f64> {
    if a.m() != b.m() {
        return Err(Error::validation(format!(
            "cannot compare m={} with m={}",
            a.m(),
            b.m()
        )));
    }
    Ok(jaccard_words(a.words(), b.words()))
}

/// Packed-word Jaccard kernel. Slices must have equal length.
#[inline]
pub fn jaccard_words(a: &[u64], b: &[u64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut inter = 0u64;
    let mut union = 0u64;
    for (x, y) in a.iter().zip(b) {
        inter += u64::from((x & y).count_ones());
        union += u64::from((x | y).count_ones());
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Number of differing bits. Kept for contrast with [`jaccard`]; search
/// never ranks by it.
pub fn hamming(a: &StructuralEmbedding, b: &StructuralEmbedding) -> Result<u32> {
    if a.m() != b.m() {
        return Err(Error::validation(
            "cannot compare embeddings of different m",
        ));
    }
    Ok(a.words()
        .iter()
        .zip(b.words())
        .map(|(x, y)| (x ^ y).count_ones())
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::FunctionRecord;

    #[test]
    fn splitmix_reference_values() {
        // first outputs of splitmix64 seeded with 0: state advances by the
        // golden gamma before each finalizer call
        let gamma = 0x9E37_79B9_7F4A_7C15u64;
        assert_eq!(mix64(gamma), 0xE220_A839_7B1D_CDAF);
        assert_eq!(mix64(gamma.wrapping_mul(2)), 0x6E78_9E6A_A1B9_65F4);
    }

    #[test]
    fn empty_set_folds_to_zero() {
        let h = FeatureHasher::default();
        assert!(h.fold(std::iter::empty()).is_zero());
    }

    #[test]
    fn single_label_sets_its_position() {
        let h = FeatureHasher::with_m(1 << 12).unwrap();
        for k in [0u64, 1, 17, 123_456, u64::MAX] {
            let v = h.fold([k]);
            assert_eq!(v.count_ones(), 1);
            assert!(v.get(h.position(k)));
        }
    }

    #[test]
    fn collisions_cancel_or_reinforce_by_sign() {
        let h = FeatureHasher::with_m(1 << 10).unwrap();
        let mut opposite = None;
        let mut same = None;
        let base = 5u64;
        for k in 6..100_000u64 {
            if h.position(k) != h.position(base) {
                continue;
            }
            if h.sign(k) == h.sign(base) {
                same.get_or_insert(k);
            } else {
                opposite.get_or_insert(k);
            }
            if same.is_some() && opposite.is_some() {
                break;
            }
        }
        let (same, opposite) = (same.unwrap(), opposite.unwrap());
        assert!(h.fold([base, opposite]).is_zero());
        let v = h.fold([base, same]);
        assert_eq!(v.count_ones(), 1);
        assert!(v.get(h.position(base)));
    }

    #[test]
    fn duplicates_are_consolidated() {
        let h = FeatureHasher::default();
        assert_eq!(h.fold([3, 3, 3, 9]), h.fold([9, 3]));
    }

    #[test]
    fn rejects_out_of_range_m() {
        assert!(FeatureHasher::with_m(1 << 9).is_err());
        assert!(FeatureHasher::with_m(1 << 19).is_err());
        assert!(FeatureHasher::with_m(3000).is_err());
        assert!(FeatureHasher::with_m(1 << 18).is_ok());
    }

    #[test]
    fn empty_program_hashes_to_zero() {
        let model = CentroidModel::from_directions(vec![vec![1.0, 0.0]]).unwrap();
        let p = ProgramRecord::new("p", vec![]);
        assert!(hash_program(&p, &model, &FeatureHasher::default())
            .unwrap()
            .is_zero());
    }

    #[test]
    fn program_in_one_cluster_has_popcount_one() {
        let model = CentroidModel::from_directions(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let fns = (0..10)
            .map(|i| FunctionRecord::new(format!("f{i}"), vec![1.0, 0.01 * i as f32], 1, 0))
            .collect();
        let v = hash_program(
            &ProgramRecord::new("p", fns),
            &model,
            &FeatureHasher::default(),
        )
        .unwrap();
        assert_eq!(v.count_ones(), 1);
    }

    #[test]
    fn jaccard_basics() {
        let h = FeatureHasher::default();
        let a = h.fold(0..50);
        assert_eq!(jaccard(&a, &a).unwrap(), 1.0);
        let zero = StructuralEmbedding::zeroed(DEFAULT_M).unwrap();
        assert_eq!(jaccard(&zero, &zero).unwrap(), 1.0);
        assert_eq!(jaccard(&a, &zero).unwrap(), 0.0);
        let small = StructuralEmbedding::zeroed(1024).unwrap();
        assert!(jaccard(&a, &small).is_err());
    }

    #[test]
    fn jaccard_is_proportional_where_hamming_is_absolute() {
        // A has 10K set bits, B is a 4K subset of A, C has 4 bits of B
        let m = DEFAULT_M;
        let mut a = StructuralEmbedding::zeroed(m).unwrap();
        let mut b = StructuralEmbedding::zeroed(m).unwrap();
        let mut c = StructuralEmbedding::zeroed(m).unwrap();
        for i in 0..10_000 {
            a.set(i);
            if i < 4_000 {
                b.set(i);
            }
            if i < 4 {
                c.set(i);
            }
        }
        assert_eq!(jaccard(&a, &b).unwrap(), 0.4);
        assert_eq!(hamming(&a, &b).unwrap(), 6_000);
        assert!(hamming(&b, &c).unwrap() <= 4_004);
        // Hamming calls B closer to C than to its clone A; Jaccard does not
        assert!(hamming(&b, &c).unwrap() < hamming(&a, &b).unwrap());
        assert!(jaccard(&a, &b).unwrap() > jaccard(&b, &c).unwrap());
    }
}
