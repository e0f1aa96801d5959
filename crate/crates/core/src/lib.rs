#![cfg_attr(not(test), no_std)]
extern crate alloc;

pub mod datagen;
pub mod model;
pub mod tensor;
pub mod tokenizer;
pub mod train;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for shard `id` of a run seeded with `global`.
pub fn derive_seed(global: u64, id: u64) -> u64 {
    splitmix64(global ^ splitmix64(id))
}
