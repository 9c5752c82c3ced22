//! Pinned seeded generator.
//!
//! Every random draw in the crate goes through [`SplitMix64`] with fixed
//! conversion rules, so datasets, initializations and samples can be
//! reproduced bit-for-bit by any implementation:
//!
//! * `next_u64`: state += 0x9E3779B97F4A7C15, then the splitmix finalizer.
//! * `next_f64`: top 53 bits of `next_u64`, scaled by 2^-53 (in `[0, 1)`).
//! * `below(n)`: high 64 bits of the 128-bit product `next_u64 * n`.
//! * `shuffle`: Fisher-Yates from the last index down, `j = below(i + 1)`.

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    /// Independent stream for (`seed`, `tag`, `index`), e.g. one per triplet.
    pub fn stream(seed: u64, tag: u64, index: u64) -> Self {
        let salt = mix64(tag).wrapping_add(index.wrapping_add(1).wrapping_mul(GAMMA));
        Self::new(mix64(seed ^ salt))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GAMMA);
        mix64(self.state)
    }

    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    pub fn below(&mut self, n: u64) -> u64 {
        ((self.next_u64() as u128 * n as u128) >> 64) as u64
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}
