//! Deterministic, splittable random streams.
//!
//! Every random draw in a session comes from a [`SplitMix64`] stream derived by
//! keyed hashing of `(master seed, session id, label, index)`. Streams are
//! derived per purpose and per round, so adding an agent or replaying from a
//! transcript never shifts anyone else's draws. The generator and the Gaussian
//! transform are fixed; [`PRNG_VERSION`] is written into every transcript header.

/// Identifier of the generator + Gaussian transform pair.
pub const PRNG_VERSION: &str = "splitmix64+fnv1a-keyed/polar-normal/v1";

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// FNV-1a over raw bytes. Stable across runs and platforms.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// SplitMix64 generator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    /// Derives an independent stream keyed on `(seed, session_id, label, index)`.
    pub fn derive(seed: u64, session_id: &str, label: &str, index: u64) -> Self {
        let mut key = Vec::with_capacity(32 + session_id.len() + label.len());
        key.extend_from_slice(&seed.to_le_bytes());
        key.extend_from_slice(session_id.as_bytes());
        key.push(0x1f);
        key.extend_from_slice(label.as_bytes());
        key.push(0x1f);
        key.extend_from_slice(&index.to_le_bytes());
        Self::new(mix64(fnv1a64(&key) ^ mix64(seed)))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        mix64(self.state)
    }

    /// Uniform on `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer on `[lo, hi]` (inclusive), rejection-sampled to avoid modulo bias.
    pub fn next_range_inclusive(&mut self, lo: u64, hi: u64) -> u64 {
        assert!(lo <= hi, "empty range");
        let span = hi - lo + 1;
        if span == 0 {
            return self.next_u64();
        }
        let zone = u64::MAX - (u64::MAX % span);
        loop {
            let v = self.next_u64();
            if v < zone {
                return lo + v % span;
            }
        }
    }

    /// Standard normal draw via the Marsaglia polar method.
    pub fn next_standard_normal(&mut self) -> f64 {
        loop {
            let u = 2.0 * self.next_f64() - 1.0;
            let v = 2.0 * self.next_f64() - 1.0;
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                return u * (-2.0 * s.ln() / s).sqrt();
            }
        }
    }

    /// Normal draw with the given standard deviation; `sd == 0` returns exactly 0.
    pub fn next_normal(&mut self, sd: f64) -> f64 {
        if sd == 0.0 {
            return 0.0;
        }
        sd * self.next_standard_normal()
    }
}
