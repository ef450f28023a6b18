//! Portable random streams.
//!
//! Every random decision in the pipeline goes through [`SplitMix64`] so that
//! other implementations (the Python shard reader in particular) can replay
//! schedules bit-exactly. The full algorithm is documented in
//! `docs/format.md`; any change here is a format break.

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const FNV_OFFSET: u64 = 0xCBF2_9CE4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01B3;

/// SplitMix64 (Steele, Lea & Flood).
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    /// Generator for a named sub-stream, further keyed by integer indices
    /// (stage, epoch, step, example...).
    pub fn for_stream(seed: u64, name: &str, keys: &[u64]) -> Self {
        Self::new(derive_seed(seed, name, keys))
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        finalize(self.state)
    }

    /// Uniform integer in `[0, n)` by 128-bit multiply-high.
    #[inline]
    pub fn below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as u64
    }

    /// Uniform float in `[0, 1)` with 53 bits of precision.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform float in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// In-place Fisher–Yates, walking from the last index down to 1.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}

#[inline]
fn finalize(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One SplitMix64 step from state `x`.
#[inline]
pub fn mix64(x: u64) -> u64 {
    finalize(x.wrapping_add(GOLDEN_GAMMA))
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

pub fn derive_seed(seed: u64, name: &str, keys: &[u64]) -> u64 {
    keys.iter()
        .fold(mix64(seed ^ fnv1a64(name.as_bytes())), |h, &k| mix64(h ^ k))
}

/// Names of the sub-streams fed from the global `--seed`.
pub mod streams {
    pub const SCHEDULE: &str = "schedule";
    pub const MASKING: &str = "masking";
    pub const INIT: &str = "init";
    pub const BLOCK_ORDER: &str = "block-order";
    pub const TTR_SAMPLE: &str = "ttr-sample";
    pub const SYNTH: &str = "synth";
}
