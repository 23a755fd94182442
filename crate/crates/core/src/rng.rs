//! Counter-based deterministic random streams.
//!
//! Every random draw in the crate is keyed: a stream is derived from a master
//! seed plus a list of integer labels (e.g. `(seed, frame, observer)`), so
//! regenerating any part of a dataset or a model never depends on call order.

/// SplitMix64 step; used both for key mixing and as the stream generator.
#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A deterministic pseudo-random stream (xoshiro256** core).
#[derive(Clone, Debug)]
pub struct Stream {
    s: [u64; 4],
}

impl Stream {
    /// Derive a stream from a seed and a key path.
    pub fn keyed(seed: u64, key: &[u64]) -> Self {
        let mut st = seed ^ 0x6a09_e667_f3bc_c908;
        let mut mix = splitmix64(&mut st);
        for &k in key {
            st ^= k.wrapping_mul(0x9e37_79b9_7f4a_7c15);
            mix ^= splitmix64(&mut st);
        }
        let mut st2 = mix;
        let s = [
            splitmix64(&mut st2),
            splitmix64(&mut st2),
            splitmix64(&mut st2),
            splitmix64(&mut st2),
        ];
        Stream { s }
    }

    /// Derive a stream from a seed and a string label (e.g. a parameter name).
    pub fn keyed_str(seed: u64, label: &str) -> Self {
        let mut key = [0u64; 4];
        for (i, b) in label.bytes().enumerate() {
            key[i % 4] = key[i % 4]
                .rotate_left(11)
                .wrapping_add(b as u64)
                .wrapping_mul(0x100_0000_01b3);
        }
        Stream::keyed(seed, &key)
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let result = self.s[1]
            .wrapping_mul(5)
            .rotate_left(7)
            .wrapping_mul(9);
        let t = self.s[1] << 17;
        self.s[2] ^= self.s[0];
        self.s[3] ^= self.s[1];
        self.s[1] ^= self.s[2];
        self.s[0] ^= self.s[3];
        self.s[2] ^= t;
        self.s[3] = self.s[3].rotate_left(45);
        result
    }

    /// Uniform in [0, 1).
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    #[inline]
    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in [0, n).
    #[inline]
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.uniform() * n as f64) as usize % n
    }

    /// Standard normal via Box-Muller.
    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform().max(1e-300);
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i + 1);
            xs.swap(i, j);
        }
    }

    /// Sample an index from unnormalized nonnegative weights.
    pub fn weighted(&mut self, weights: &[f64]) -> usize {
        let total: f64 = weights.iter().sum();
        debug_assert!(total > 0.0);
        let mut x = self.uniform() * total;
        for (i, &w) in weights.iter().enumerate() {
            if x < w {
                return i;
            }
            x -= w;
        }
        weights.len() - 1
    }
}
