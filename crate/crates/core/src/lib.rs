//! Generic-statement distillation: prompt expansion, constrained decoding,
//! critic filtering, self-imitation fine-tuning and evaluation.

pub mod constraints;
pub mod decoder;
pub mod generation;
pub mod lm;
pub mod vocab;
pub mod prompts;
pub mod bridge;
pub mod critic;
pub mod evalkit;
pub mod selfimit;
pub mod synthetic;

/// 64-bit FNV-1a over the concatenation of `parts`; stable across platforms
/// and releases, unlike `std`'s default hasher.
pub(crate) fn fnv1a(parts: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for part in parts {
        for &b in *part {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}
