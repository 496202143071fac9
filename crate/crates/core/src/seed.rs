//! Stateless seed derivation.
//!
//! A child seed is obtained by folding each stream label into the parent with
//! one SplitMix64 finalisation per label:
//! `s_0 = mix(master)`, `s_{i+1} = mix(s_i ^ mix(label_i + GOLDEN))`.
//! Labels used by this crate are `(component, mode)` for noise modes and the
//! ensemble index for repeated runs.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output function applied to `x + GOLDEN`.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, labels: &[u64]) -> u64 {
    labels
        .iter()
        .fold(splitmix64(master), |acc, &l| splitmix64(acc ^ splitmix64(l)))
}

/// Seed of noise mode `mode` (0-based) of component `component`.
pub fn mode_seed(master: u64, component: u8, mode: usize) -> u64 {
    derive_seed(master, &[component as u64, mode as u64])
}

/// Master seed of ensemble member `index`.
pub fn ensemble_seed(master: u64, index: usize) -> u64 {
    derive_seed(master, &[u64::MAX, index as u64])
}
