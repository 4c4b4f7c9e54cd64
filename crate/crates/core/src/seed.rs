//! Stateless seed derivation.
//!
//! Every random stream in the crate is a `ChaCha8Rng` seeded from a 64-bit
//! value obtained by hashing a fixed-position tuple of fields through the
//! SplitMix64 finalizer. Sub-streams never share state with their parent, so
//! fitting work can be scheduled in any order without changing results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output function.
#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds an ordered list of fields into one seed.
pub fn mix_fields(fields: &[u64]) -> u64 {
    // The field count is absorbed first so that prefixes of a tuple never
    // collide with the tuple itself.
    let mut state = splitmix64(fields.len() as u64);
    for (position, &field) in fields.iter().enumerate() {
        state = splitmix64(state ^ splitmix64(field.wrapping_add((position as u64).wrapping_mul(GOLDEN_GAMMA))));
    }
    state
}

/// Seed of the `index`-th child stream of `parent`.
#[inline]
pub fn child_seed(parent: u64, index: u64) -> u64 {
    mix_fields(&[parent, index])
}

pub fn stream(seed: u64) -> Stream {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Field value reserved for data-generation seeds in the learner and
/// procedure slots of [`derive_seed`].
pub const DATA_FIELD: u64 = 0;

/// Field value used in the procedure slot for the once-per-design
/// validation draw.
pub const VALIDATION_FIELD: u64 = u64::MAX;

/// Seed for one (design, learner, procedure, replication) cell.
///
/// Learner and procedure codes start at 1; code 0 in both slots denotes the
/// data-generation stream of a replication, which is therefore shared by all
/// learners.
pub fn derive_seed(
    master_seed: u64,
    design_id: u64,
    learner_id: u64,
    procedure_id: u64,
    replication: u64,
) -> u64 {
    mix_fields(&[master_seed, design_id, learner_id, procedure_id, replication])
}

/// Data-generation seed of a replication.
pub fn data_seed(master_seed: u64, design_id: u64, replication: u64) -> u64 {
    derive_seed(master_seed, design_id, DATA_FIELD, DATA_FIELD, replication)
}

/// Seed of the validation sample of a design.
pub fn validation_seed(master_seed: u64, design_id: u64) -> u64 {
    derive_seed(master_seed, design_id, DATA_FIELD, VALIDATION_FIELD, 0)
}
