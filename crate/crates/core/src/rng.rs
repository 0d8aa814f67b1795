//! Counter-based random streams.
//!
//! Every stochastic decision in a run is drawn from a stream keyed by
//! `(seed, epoch, batch, label)`. Two streams with the same key produce the
//! same values, and streams with different keys are independent, so results
//! do not depend on the order in which parameters or batches are visited.

/// A small SplitMix64 generator seeded from a mixed key.
#[derive(Debug, Clone)]
pub struct Stream {
    state: u64,
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl Stream {
    /// Stream for the given `(seed, epoch, batch, label)` key.
    pub fn keyed(seed: u64, epoch: u64, batch: u64, label: &str) -> Stream {
        let mut k = mix(seed.wrapping_add(GOLDEN));
        k = mix(k ^ epoch.wrapping_mul(0xd1b5_4a32_d192_ed03));
        k = mix(k ^ batch.wrapping_mul(0xaef1_7502_1fd5_7acb));
        k = mix(k ^ fnv1a(label.as_bytes()));
        Stream { state: k }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix(self.state)
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / 9_007_199_254_740_992.0)
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `[0, n)`. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// True with probability `1 - p` (a Bernoulli "keep" draw).
    pub fn keep(&mut self, p: f64) -> bool {
        self.next_f64() >= p
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i + 1);
            xs.swap(i, j);
        }
    }

    /// Draw `k` distinct elements from `pool` (consumes the prefix of a
    /// partial Fisher-Yates pass). Order of the result is part of the
    /// stream's contract: same key, same picks.
    pub fn choose_k(&mut self, pool: &mut Vec<usize>, k: usize) -> Vec<usize> {
        let k = k.min(pool.len());
        let mut picked = Vec::with_capacity(k);
        for _ in 0..k {
            let j = self.below(pool.len());
            picked.push(pool.swap_remove(j));
        }
        picked
    }

    /// Sample an index from a categorical distribution given by `weights`
    /// (non-negative, summing to ~1). Falls back to the last index on
    /// accumulated rounding.
    pub fn categorical(&mut self, weights: &[f64]) -> usize {
        let u = self.next_f64();
        let mut acc = 0.0;
        for (i, w) in weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return i;
            }
        }
        weights.len() - 1
    }
}
