//! Deterministic seed derivation.
//!
//! Every random draw in a run is keyed by `(run_seed, stream, index, purpose)`.
//! The search keys streams by the digest of the canonical description text,
//! so the relevance of a description at a given generality level is a pure
//! function of its text.

use serde::{Deserialize, Serialize};

use crate::canonical::digest64_bytes;
use crate::types::Description;

/// What a derived seed is used for. Streams with different purposes never
/// share seeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Purpose {
    /// Node sampling and relevance probes.
    Relevance,
    /// Specificity term during final selection.
    Generality,
    /// Relevance term during final selection.
    FinalRelevance,
    /// The shared explicit seed set used for exact evaluation.
    Explicit,
    /// Held-out samples for the cloning check.
    Holdout,
    /// Training samples for the cloning check.
    CloneTrain,
    /// Internal randomness of synthetic LLM-like oracles.
    Oracle,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Relevance => 0x5245_4c45,
            Purpose::Generality => 0x4745_4e45,
            Purpose::FinalRelevance => 0x4649_4e52,
            Purpose::Explicit => 0x4558_504c,
            Purpose::Holdout => 0x484f_4c44,
            Purpose::CloneTrain => 0x434c_4f4e,
            Purpose::Oracle => 0x4f52_4143,
        }
    }
}

pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Derives the seed for one sample of one stream.
pub fn derive_seed(run_seed: u64, node_id: u64, sample_index: u64, purpose: Purpose) -> u64 {
    let mut h = splitmix64(run_seed ^ 0x6a09_e667_f3bc_c908);
    h = splitmix64(h ^ purpose.tag());
    h = splitmix64(h ^ node_id);
    splitmix64(h ^ sample_index)
}

/// Stream key for a description: the first 64 bits of its text digest.
pub fn description_stream(description: &Description) -> u64 {
    digest64_bytes(description.as_str().as_bytes())
}

/// Where the seeds for one estimate come from.
#[derive(Debug, Clone, PartialEq)]
pub enum SeedPlan {
    /// Seeds derived per description and purpose.
    Derived { run_seed: u64 },
    /// The same explicit list for every description and both objective terms.
    Explicit(Vec<u64>),
}

impl SeedPlan {
    /// The first `n` seeds for `description` under `purpose`. Explicit plans
    /// ignore the description and purpose and return a prefix of the list.
    pub fn seeds(&self, description: &Description, purpose: Purpose, n: usize) -> Vec<u64> {
        match self {
            SeedPlan::Derived { run_seed } => {
                let stream = description_stream(description);
                (0..n as u64).map(|i| derive_seed(*run_seed, stream, i, purpose)).collect()
            }
            SeedPlan::Explicit(list) => list.iter().copied().take(n).collect(),
        }
    }

    /// Length limit of the plan, if any.
    pub fn capacity(&self) -> Option<usize> {
        match self {
            SeedPlan::Derived { .. } => None,
            SeedPlan::Explicit(list) => Some(list.len()),
        }
    }
}

/// The canonical explicit seed set of size `n` for a run seed.
pub fn explicit_seed_set(run_seed: u64, n: usize) -> Vec<u64> {
    (0..n as u64).map(|i| derive_seed(run_seed, 0, i, Purpose::Explicit)).collect()
}
