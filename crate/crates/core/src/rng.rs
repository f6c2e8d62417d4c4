//! Seeded PCG streams. Every randomized routine takes a seed and a stream
//! label so that independent consumers never share a sequence.

use rand::SeedableRng;
use rand_pcg::Pcg64;

pub type Rng = Pcg64;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Generator for `(seed, label)`.
pub fn stream(seed: u64, label: &str) -> Rng {
    let a = splitmix64(seed ^ fnv1a(label));
    let b = splitmix64(a ^ 0xD1B5_4A32_D192_ED03);
    let state = ((a as u128) << 64) | b as u128;
    let inc = ((splitmix64(b) as u128) << 64) | splitmix64(a.rotate_left(17)) as u128;
    Pcg64::new(state, inc)
}

/// Child seed for sub-task `index` of `seed`, e.g. one per epoch or restart.
pub fn child_seed(seed: u64, label: &str, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ fnv1a(label)).wrapping_add(index))
}

/// Plain `seed_from_u64`, for callers that only need a quick deterministic
/// generator.
pub fn from_seed(seed: u64) -> Rng {
    Pcg64::seed_from_u64(seed)
}
