//! Counter-based random streams.
//!
//! Every random draw in a chain comes from a stream keyed by
//! `(root seed, iteration, step, unit)`, so the order in which parallel
//! workers visit units never changes the result.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Step tags used to key streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Step {
    Init = 0,
    Assign = 1,
    EntityMix = 2,
    Positions = 3,
    Indicator = 4,
    PopulationMix = 5,
    Synth = 6,
    Harness = 7,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a 64-bit child seed from a parent seed and a label.
pub fn derive_seed(parent: u64, label: u64) -> u64 {
    splitmix64(splitmix64(parent) ^ label.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

/// Independent stream for one unit of work.
pub fn stream(root: u64, iteration: u64, step: Step, unit: u64) -> StreamRng {
    let mut seed = [0u8; 32];
    let a = splitmix64(root);
    let b = splitmix64(a ^ iteration);
    let c = splitmix64(b ^ (step as u64));
    let d = splitmix64(c ^ 0xA5A5_A5A5_A5A5_A5A5);
    seed[..8].copy_from_slice(&a.to_le_bytes());
    seed[8..16].copy_from_slice(&b.to_le_bytes());
    seed[16..24].copy_from_slice(&c.to_le_bytes());
    seed[24..].copy_from_slice(&d.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(unit);
    rng
}
