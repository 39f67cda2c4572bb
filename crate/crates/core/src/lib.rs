//! Algorithmic core of a multi-round conversational recommender built from
//! three interacting stages: *estimation* (a pruned factorization machine
//! trained with attribute-aware pairwise ranking), *action* (a policy network
//! deciding whether to ask an attribute or recommend), and *reflection* (an
//! online pairwise update after a rejected recommendation).
//!
//! The crate is `no_std` and only needs an allocator. File formats, the
//! experiment harness, the CLI and the HTTP session service live in the
//! companion `ear` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod action;
pub mod agents;
pub mod datasets;
pub mod error;
pub mod estimation;
pub mod eval;
pub mod ids;
pub mod itemset;
pub mod math;
pub mod reflection;
pub mod simulator;

pub use error::{Error, Result};
pub use ids::{AttrId, ItemId, ParentId, UserId};
pub use itemset::ItemSet;

/// Deterministic RNG used everywhere a seed is accepted.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Builds the crate RNG from a 64-bit seed.
pub fn rng_from_seed(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}
