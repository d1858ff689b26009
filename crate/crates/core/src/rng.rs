//! Deterministic random number generation.
//!
//! A single seeded splitmix64 stream drives everything stochastic in a run:
//! parameter init, Gumbel noise, dropout masks, missingness simulation,
//! synthetic data and batch shuffling. Identical seed, identical sequence,
//! on every platform.

/// Seeded deterministic generator (splitmix64).
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    state: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { seed, state: seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform draw in [0, 1) with 53 random bits.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw clamped to the open interval [1e-12, 1 - 1e-12].
    #[inline]
    pub fn uniform_open(&mut self) -> f64 {
        self.uniform().clamp(1e-12, 1.0 - 1e-12)
    }

    /// Uniform draw in [lo, hi).
    #[inline]
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Standard Gumbel(0, 1) noise: -ln(-ln u) on the open unit interval.
    #[inline]
    pub fn gumbel(&mut self) -> f64 {
        let u = self.uniform_open();
        -(-u.ln()).ln()
    }

    /// Standard normal via Box-Muller. Consumes two uniforms per draw.
    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform_open();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Uniform index in [0, n). Widening-multiply mapping; bias is far below
    /// anything observable at 64 bits.
    pub fn index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.index(i + 1);
            xs.swap(i, j);
        }
    }
}
