//! Seeding conventions.
//!
//! Every random draw in this crate comes from a [`ChaCha8Rng`] (portable,
//! platform-independent stream for a given seed). Derived streams use the
//! rule `seed = master ^ salt ^ index`, mixed through SplitMix64 by
//! `seed_from_u64` before it keys the generator. Episode streams use the
//! plain `master ^ episode_index` form (salt 0).
//!
//! The salts below keep unrelated streams apart even when they share a
//! master seed. They are arbitrary constants and must never change once
//! datasets have been hashed.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const SALT_EXPERT_NOISE: u64 = 0x9a2f_8c1d_5e7b_0431;
pub const SALT_SPLIT: u64 = 0x1b44_90ce_2aa7_66f2;
pub const SALT_ATTACK_SELECT: u64 = 0x7f31_dd08_94c5_12ba;
pub const SALT_ATTACK_TRANSFORM: u64 = 0xc6e8_2b9f_03a4_7d15;
pub const SALT_ATTACK_INJECT: u64 = 0x44d0_17fa_b98e_5c62;
pub const SALT_DISC_TRAIN: u64 = 0x2e95_63b1_f7d0_8a4c;
pub const SALT_DISC_SAMPLER: u64 = 0x80ca_4f26_1be9_d573;
pub const SALT_POLICY_TRAIN: u64 = 0x5d18_ae73_c240_96fb;
pub const SALT_POLICY_SAMPLER: u64 = 0xf3b6_0591_78ed_24a8;
pub const SALT_EVAL: u64 = 0x6a07_f442_d1c8_3b9e;

/// Stream keyed directly by `seed`.
pub fn stream(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stream for item `index` of the family identified by `salt` under `master`.
pub fn substream(master: u64, salt: u64, index: u64) -> ChaCha8Rng {
    stream(master ^ salt ^ index)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn same_seed_same_stream() {
        let a: Vec<u64> = (0..8).map(|_| stream(7).random()).collect();
        let mut r = stream(7);
        let b: Vec<u64> = (0..8).map(|_| r.random()).collect();
        // fresh generators per draw vs one generator differ; same-construction streams match
        let mut r2 = stream(7);
        let c: Vec<u64> = (0..8).map(|_| r2.random()).collect();
        assert_eq!(b, c);
        assert_ne!(a, b);
    }

    #[test]
    fn substreams_differ_across_salts_and_indices() {
        let x: u64 = substream(1, SALT_SPLIT, 0).random();
        let y: u64 = substream(1, SALT_EVAL, 0).random();
        let z: u64 = substream(1, SALT_SPLIT, 1).random();
        assert_ne!(x, y);
        assert_ne!(x, z);
    }
}
