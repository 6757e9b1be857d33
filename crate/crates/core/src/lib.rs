//! Bit-level Bluetooth baseband and link-manager simulator core.
//!
//! Every device is advanced in 1 µs ticks against a shared tri-state channel.
//! The crate needs only `alloc`; file formats, the CLI and parallel sweeps live
//! in the companion `bluesim` crate.

#![no_std]

extern crate alloc;

pub mod airframe;
pub mod baseband;
pub mod channel;
pub mod engine;
pub mod hopsel;
pub mod linkman;
pub mod metrics;

pub use rand_chacha::ChaCha8Rng;

/// Identifier written into output metadata so traces can be matched to the generator.
pub const RNG_ID: &str = "ChaCha8Rng(rand_chacha 0.3)";

/// SplitMix64 finalizer. Used wherever a fixed, versioned 64-bit mix is needed.
pub const fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a over a label, for deriving named RNG streams.
pub fn label_hash(label: &str) -> u64 {
    label
        .bytes()
        .fold(0xCBF2_9CE4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01B3))
}

/// Seed of the stream named `label` under the run seed `seed`.
///
/// Streams depend only on `(seed, label)`, so adding a device never shifts
/// the draws of another.
pub fn stream_seed(seed: u64, label: &str) -> u64 {
    mix64(seed ^ mix64(label_hash(label)))
}

pub fn stream_rng(seed: u64, label: &str) -> ChaCha8Rng {
    use rand::SeedableRng;
    ChaCha8Rng::seed_from_u64(stream_seed(seed, label))
}
