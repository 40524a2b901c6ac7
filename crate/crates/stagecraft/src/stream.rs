//! Deterministic random streams.
//!
//! Every random draw in the crate flows from explicit 64-bit seeds through
//! splitmix64, so results are identical across platforms, reruns, and thread
//! counts. Not cryptographically secure.

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn scramble(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Fold an ordered list of parts into a single stream seed.
pub fn mix(parts: &[u64]) -> u64 {
    let mut state = 0x517C_C1B7_2722_0A95;
    for &part in parts {
        state ^= part.wrapping_mul(GAMMA);
        state = scramble(state.wrapping_add(GAMMA));
    }
    state
}

/// FNV-1a over raw bytes; used to turn tags and text into seed parts.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xCBF2_9CE4_8422_2325u64;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01B3);
    }
    hash
}

/// Seed part for a named sub-stream.
pub fn tag(name: &str) -> u64 {
    fnv1a64(name.as_bytes())
}

/// Splitmix64 sequence generator.
#[derive(Clone, Debug)]
pub struct StreamRng {
    state: u64,
}

impl StreamRng {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GAMMA);
        scramble(self.state)
    }

    /// Uniform draw in [0, 1) with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Bernoulli draw; `p <= 0` never fires, `p >= 1` always fires.
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// Uniform integer in [0, n). `n` must be nonzero; modulo bias is
    /// negligible for the small ranges used here.
    pub fn below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        self.next_u64() % n
    }
}
